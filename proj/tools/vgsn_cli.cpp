// Command-line front end. Talks to the library exclusively through the C API.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vgsn.h"

namespace fs = std::filesystem;

namespace {

[[noreturn]] void die(vgsn_status status) {
    std::fprintf(stderr, "error: %s: %s\n", vgsn_status_name(status), vgsn_last_error());
    std::exit(1);
}

[[noreturn]] void die(const char* category, const std::string& detail) {
    std::fprintf(stderr, "error: %s: %s\n", category, detail.c_str());
    std::exit(1);
}

void check(vgsn_status status) {
    if (status != VGSN_OK) die(status);
}

struct TrainOpts {
    std::string font_a, font_b, out, loss_csv;
    int grid = 4;
    std::string optimizer = "adam";
    int epochs = 200;
    std::uint64_t seed = 0;
    int image_size = 0;  // 0 = take from corpus
    int stages = 0;      // 0 = derive
    int batch_size = 32;
    double lr = 0.0;
    double kl_weight = 0.0;
    bool vae = false;
};

vgsn_model* make_model(const TrainOpts& o, int corpus_image_size) {
    vgsn_model_config mc;
    vgsn_model_config_init(&mc);
    mc.image_size = o.image_size > 0 ? o.image_size : corpus_image_size;
    mc.grid = o.grid;
    mc.decoder_stages = o.stages;
    mc.baseline_vae = o.vae ? 1 : 0;
    vgsn_model* model = nullptr;
    check(vgsn_model_create(&mc, o.seed, &model));
    return model;
}

int run_train(const TrainOpts& o) {
    vgsn_corpus* corpus = nullptr;
    check(vgsn_corpus_load(o.font_a.c_str(), o.font_b.c_str(), &corpus));
    if (o.image_size > 0 && vgsn_corpus_image_size(corpus) != o.image_size)
        die("config", "corpus image size " + std::to_string(vgsn_corpus_image_size(corpus)) +
                          " does not match --image-size " + std::to_string(o.image_size));
    vgsn_model* model = make_model(o, vgsn_corpus_image_size(corpus));

    vgsn_train_config tc;
    vgsn_train_config_init(&tc);
    tc.optimizer = o.optimizer.c_str();
    tc.learning_rate = o.lr;
    tc.batch_size = o.batch_size;
    tc.epochs = o.epochs;
    tc.seed = o.seed;
    tc.kl_weight = o.kl_weight;

    std::vector<double> losses(std::max(o.epochs, 1)), seconds(std::max(o.epochs, 1));
    check(vgsn_train(model, corpus, &tc, losses.data(), seconds.data()));

    if (!o.loss_csv.empty()) {
        std::ofstream f(o.loss_csv);
        if (!f) die("io", "cannot open " + o.loss_csv + " for writing");
        f << "epoch,loss,seconds\n";
        char buf[128];
        for (int e = 0; e < o.epochs; ++e) {
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e + 1, losses[e], seconds[e]);
            f << buf;
        }
    }
    check(vgsn_model_save(model, o.out.c_str()));
    if (o.epochs > 0)
        std::printf("trained %d epochs, final loss %.9g, model written to %s\n", o.epochs,
                    losses[o.epochs - 1], o.out.c_str());
    else
        std::printf("trained 0 epochs, model written to %s\n", o.out.c_str());
    vgsn_corpus_destroy(corpus);
    vgsn_model_destroy(model);
    return 0;
}

void generate_one(vgsn_model* model, int image_size, const fs::path& in_path,
                  const fs::path& out_path, bool stochastic, std::uint64_t seed) {
    float* pixels = nullptr;
    int w = 0, h = 0;
    check(vgsn_pgm_load(in_path.string().c_str(), &pixels, &w, &h));
    if (w != image_size || h != image_size) {
        vgsn_free(pixels);
        die("invalid_argument", in_path.string() + " is " + std::to_string(w) + "x" +
                                    std::to_string(h) + " but the model expects " +
                                    std::to_string(image_size));
    }
    std::vector<float> out(static_cast<std::size_t>(image_size) * image_size);
    vgsn_status st = vgsn_generate(model, pixels, out.data(), stochastic ? 1 : 0, seed);
    vgsn_free(pixels);
    check(st);
    check(vgsn_pgm_save(out_path.string().c_str(), out.data(), image_size, image_size));
}

int run_generate(const std::string& model_path, const std::string& input,
                 const std::string& out, bool stochastic, std::uint64_t seed) {
    vgsn_model* model = nullptr;
    check(vgsn_model_load(model_path.c_str(), &model));
    vgsn_model_config mc;
    check(vgsn_model_get_config(model, &mc));

    if (fs::is_directory(input)) {
        std::error_code ec;
        fs::create_directories(out, ec);
        if (!fs::is_directory(out)) die("io", "output " + out + " is not a directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            generate_one(model, mc.image_size, f, fs::path(out) / f.filename(), stochastic, seed);
        std::printf("generated %zu glyphs into %s\n", files.size(), out.c_str());
    } else {
        generate_one(model, mc.image_size, input, out, stochastic, seed);
        std::printf("generated %s\n", out.c_str());
    }
    vgsn_model_destroy(model);
    return 0;
}

// Tables 1 and 2 reference seconds (256x256 images, the authors' hardware).
double published_reference_seconds(bool vae, int grid, const std::string& opt) {
    static const struct {
        bool vae;
        int grid;
        const char* opt;
        double sec;
    } table[] = {
        {true, 4, "sgd", 87},   {true, 4, "adam", 96},   {true, 4, "rmsprop", 95},
        {true, 8, "sgd", 179},  {true, 8, "adam", 177},  {true, 8, "rmsprop", 175},
        {false, 4, "sgd", 78},  {false, 4, "adam", 77},  {false, 4, "rmsprop", 74},
        {false, 8, "sgd", 148}, {false, 8, "adam", 157}, {false, 8, "rmsprop", 154},
    };
    for (const auto& row : table)
        if (row.vae == vae && row.grid == grid && opt == row.opt) return row.sec;
    return 0;
}

int run_bench(const std::string& font_a, const std::string& font_b, int epochs, int image_size,
              std::uint64_t seed, const std::string& out) {
    vgsn_corpus* corpus = nullptr;
    check(vgsn_corpus_load(font_a.c_str(), font_b.c_str(), &corpus));
    if (vgsn_corpus_image_size(corpus) != image_size)
        die("config", "corpus image size " + std::to_string(vgsn_corpus_image_size(corpus)) +
                          " does not match --image-size " + std::to_string(image_size));

    std::ofstream csv(out);
    if (!csv) die("io", "cannot open " + out + " for writing");
    csv << "model,grid,optimizer,epochs,sec_per_epoch,final_loss,published_ref_sec\n";
    std::printf("# image size %d, corpus size %d, %d epochs per combination\n", image_size,
                vgsn_corpus_size(corpus), epochs);
    std::printf("%-5s %-5s %-8s %12s %12s %14s\n", "model", "grid", "optim", "sec/epoch",
                "final_loss", "published_ref_sec");
    for (bool vae : {false, true})
        for (int grid : {4, 8})
            for (const char* opt : {"sgd", "adam", "rmsprop"}) {
                vgsn_model_config mc;
                vgsn_model_config_init(&mc);
                mc.image_size = image_size;
                mc.grid = grid;
                mc.baseline_vae = vae ? 1 : 0;
                vgsn_model* model = nullptr;
                check(vgsn_model_create(&mc, seed, &model));
                vgsn_train_config tc;
                vgsn_train_config_init(&tc);
                tc.optimizer = opt;
                tc.epochs = epochs;
                tc.seed = seed;
                std::vector<double> losses(epochs), seconds(epochs);
                check(vgsn_train(model, corpus, &tc, losses.data(), seconds.data()));
                double total = 0;
                for (double s : seconds) total += s;
                double per_epoch = total / epochs;
                double final_loss = losses.empty() ? 0 : losses.back();
                double ref = published_reference_seconds(vae, grid, opt);
                const char* name = vae ? "vae" : "vgsn";
                char buf[192];
                std::snprintf(buf, sizeof(buf), "%s,%d,%s,%d,%.9g,%.9g,%g\n", name, grid, opt,
                              epochs, per_epoch, final_loss, ref);
                csv << buf;
                std::printf("%-5s %-5d %-8s %12.4f %12.6f %11g (published, 256^2, reference hardware)\n",
                            name, grid, opt, per_epoch, final_loss, ref);
                vgsn_model_destroy(model);
            }
    vgsn_corpus_destroy(corpus);
    std::printf("report written to %s\n", out.c_str());
    return 0;
}

int run_gradcheck(int image_size, int grid, int stages, std::uint64_t seed) {
    double err = 0;
    char worst[128] = {0};
    check(vgsn_grad_check(image_size, grid, stages, seed, &err, worst, sizeof(worst)));
    const double tol = 1e-4;
    std::printf("max relative error %.3e (worst parameter group: %s)\n", err, worst);
    if (err < tol) {
        std::printf("gradcheck PASS\n");
        return 0;
    }
    std::fprintf(stderr, "error: numeric: gradient check failed at %.3e in %s (tolerance %g)\n",
                 err, worst, tol);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VGSN glyph synthesis toolkit"};
    app.require_subcommand(1);

    TrainOpts to;
    auto* train = app.add_subcommand("train", "train a model on paired font directories");
    train->add_option("--font-a", to.font_a, "source font directory (U+XXXX.pgm files)")
        ->required();
    train->add_option("--font-b", to.font_b, "target font directory")->required();
    train->add_option("--grid", to.grid, "partitions per side (published setups use 4 or 8)");
    train->add_option("--optimizer", to.optimizer, "sgd|adam|rmsprop");
    train->add_option("--epochs", to.epochs, "training epochs");
    train->add_option("--seed", to.seed, "RNG seed");
    train->add_option("--image-size", to.image_size, "expected image size in pixels");
    train->add_option("--stages", to.stages, "decoder stages (default derived)");
    train->add_option("--batch-size", to.batch_size, "batch size (default 32)");
    train->add_option("--lr", to.lr, "learning rate (default per optimizer)");
    train->add_option("--kl-weight", to.kl_weight, "optional KL term weight (default 0)");
    train->add_flag("--vae", to.vae, "train the baseline model without the grid layer");
    train->add_option("--out", to.out, "output model file")->required();
    train->add_option("--loss-csv", to.loss_csv, "per-epoch loss curve CSV");

    std::string gen_model, gen_input, gen_out;
    bool gen_stochastic = false;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("generate", "run glyphs through a trained model");
    gen->add_option("--model", gen_model, "model file")->required();
    gen->add_option("--input", gen_input, "input PGM file or directory")->required();
    gen->add_option("--out", gen_out, "output PGM file or directory")->required();
    gen->add_flag("--stochastic", gen_stochastic, "sample the latent instead of using z = mu");
    gen->add_option("--seed", gen_seed, "seed for --stochastic");

    std::string bench_a, bench_b, bench_out = "bench.csv";
    int bench_epochs = 2, bench_image = 64;
    std::uint64_t bench_seed = 0;
    auto* bench =
        app.add_subcommand("bench", "time all 12 model/grid/optimizer combinations");
    bench->add_option("--font-a", bench_a, "source font directory")->required();
    bench->add_option("--font-b", bench_b, "target font directory")->required();
    bench->add_option("--epochs", bench_epochs, "epochs per combination");
    bench->add_option("--image-size", bench_image, "image size (default 64)");
    bench->add_option("--seed", bench_seed, "RNG seed");
    bench->add_option("--out", bench_out, "CSV report path");

    int gc_image = 16, gc_grid = 2, gc_stages = 2;
    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck",
                                  "check analytic gradients against central differences");
    gc->add_option("--image-size", gc_image, "toy image size (default 16)");
    gc->add_option("--grid", gc_grid, "grid (default 2)");
    gc->add_option("--stages", gc_stages, "decoder stages (default 2)");
    gc->add_option("--seed", gc_seed, "RNG seed");

    CLI11_PARSE(app, argc, argv);

    if (*train) return run_train(to);
    if (*gen) return run_generate(gen_model, gen_input, gen_out, gen_stochastic, gen_seed);
    if (*bench)
        return run_bench(bench_a, bench_b, bench_epochs, bench_image, bench_seed, bench_out);
    if (*gc) return run_gradcheck(gc_image, gc_grid, gc_stages, gc_seed);
    return 1;
}
