#include "vgsn.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <variant>

#include "vgsn/corpus.hpp"
#include "vgsn/gradcheck.hpp"
#include "vgsn/model.hpp"
#include "vgsn/train.hpp"

namespace {

thread_local std::string g_last_error;

vgsn_status status_from(vgsn::ErrorCategory c) {
    switch (c) {
        case vgsn::ErrorCategory::invalid_argument: return VGSN_ERR_INVALID_ARGUMENT;
        case vgsn::ErrorCategory::config: return VGSN_ERR_CONFIG;
        case vgsn::ErrorCategory::io: return VGSN_ERR_IO;
        case vgsn::ErrorCategory::format: return VGSN_ERR_FORMAT;
        case vgsn::ErrorCategory::numeric: return VGSN_ERR_NUMERIC;
        case vgsn::ErrorCategory::internal: return VGSN_ERR_INTERNAL;
    }
    return VGSN_ERR_INTERNAL;
}

template <typename Fn>
vgsn_status guarded(Fn&& fn) {
    try {
        fn();
        return VGSN_OK;
    } catch (const vgsn::Error& e) {
        g_last_error = e.what();
        return status_from(e.category());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return VGSN_ERR_INTERNAL;
    }
}

bool use_float64() {
    const char* v = std::getenv("VGSN_FLOAT64");
    return v && v[0] && std::strcmp(v, "0") != 0;
}

int derive_encoder_depth(int image_size) {
    int d = 0;
    while (d < 6 && image_size % (1 << (d + 1)) == 0) ++d;
    if (d < 1) vgsn::fail(vgsn::ErrorCategory::config, "image size must be even");
    return d;
}

int derive_decoder_stages(int image_size, int grid) {
    int s = 0;
    while (s < 5 && image_size % (grid << (s + 1)) == 0) ++s;
    if (s < 1)
        vgsn::fail(vgsn::ErrorCategory::config,
                   "image size not divisible by 2*grid; cannot derive decoder stages");
    return s;
}

vgsn::ModelConfig to_internal(const vgsn_model_config& c) {
    vgsn::ModelConfig m;
    m.image_size = c.image_size;
    m.grid = c.grid > 0 ? c.grid : 4;
    m.kind = c.baseline_vae ? vgsn::ModelKind::vae : vgsn::ModelKind::vgsn;
    m.encoder_depth = c.encoder_depth > 0 ? c.encoder_depth : derive_encoder_depth(c.image_size);
    m.decoder_stages =
        c.decoder_stages > 0 ? c.decoder_stages : derive_decoder_stages(c.image_size, m.grid);
    if (c.latent_dim > 0) m.latent_dim = c.latent_dim;
    if (c.partition_latent_dim > 0) m.partition_latent_dim = c.partition_latent_dim;
    if (c.basis_dim > 0) m.basis_dim = c.basis_dim;
    return m;
}

}  // namespace

struct vgsn_model {
    std::variant<vgsn::Model<float>, vgsn::Model<double>> impl;

    template <typename Fn>
    auto visit(Fn&& fn) {
        return std::visit(std::forward<Fn>(fn), impl);
    }
};

struct vgsn_corpus {
    vgsn::PairedCorpus corpus;
};

extern "C" {

const char* vgsn_status_name(vgsn_status status) {
    switch (status) {
        case VGSN_OK: return "ok";
        case VGSN_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case VGSN_ERR_CONFIG: return "config";
        case VGSN_ERR_IO: return "io";
        case VGSN_ERR_FORMAT: return "format";
        case VGSN_ERR_NUMERIC: return "numeric";
        case VGSN_ERR_INTERNAL: return "internal";
    }
    return "internal";
}

const char* vgsn_last_error(void) { return g_last_error.c_str(); }

void vgsn_model_config_init(vgsn_model_config* config) {
    *config = vgsn_model_config{};
    config->image_size = 256;
    config->grid = 4;
}

void vgsn_train_config_init(vgsn_train_config* config) {
    *config = vgsn_train_config{};
    config->optimizer = "adam";
    config->batch_size = 32;
    config->epochs = 1;
}

vgsn_status vgsn_model_create(const vgsn_model_config* config, uint64_t seed, vgsn_model** out) {
    return guarded([&] {
        if (!config || !out)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        vgsn::ModelConfig c = to_internal(*config);
        c.finalize();
        vgsn::Rng rng(seed);
        auto* handle = new vgsn_model;
        try {
            if (use_float64())
                handle->impl = vgsn::init_model<double>(c, rng);
            else
                handle->impl = vgsn::init_model<float>(c, rng);
        } catch (...) {
            delete handle;
            throw;
        }
        *out = handle;
    });
}

void vgsn_model_destroy(vgsn_model* model) { delete model; }

vgsn_status vgsn_model_save(vgsn_model* model, const char* path) {
    return guarded([&] {
        if (!model || !path)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        std::ofstream f(path, std::ios::binary);
        if (!f) vgsn::fail(vgsn::ErrorCategory::io, std::string("cannot open ") + path);
        model->visit([&](auto& m) { vgsn::save_model(f, m); });
    });
}

vgsn_status vgsn_model_load(const char* path, vgsn_model** out) {
    return guarded([&] {
        if (!path || !out)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        std::ifstream f(path, std::ios::binary);
        if (!f) vgsn::fail(vgsn::ErrorCategory::io, std::string("cannot open ") + path);
        auto* handle = new vgsn_model;
        try {
            if (use_float64())
                handle->impl = vgsn::load_model<double>(f);
            else
                handle->impl = vgsn::load_model<float>(f);
        } catch (...) {
            delete handle;
            throw;
        }
        *out = handle;
    });
}

vgsn_status vgsn_model_get_config(const vgsn_model* model, vgsn_model_config* out) {
    return guarded([&] {
        if (!model || !out)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        const auto& c = std::visit([](const auto& m) -> const vgsn::ModelConfig& {
            return m.config;
        }, model->impl);
        *out = vgsn_model_config{};
        out->image_size = c.image_size;
        out->grid = c.grid;
        out->encoder_depth = c.encoder_depth;
        out->decoder_stages = c.decoder_stages;
        out->latent_dim = c.latent_dim;
        out->partition_latent_dim = c.partition_latent_dim;
        out->basis_dim = c.basis_dim;
        out->baseline_vae = c.kind == vgsn::ModelKind::vae ? 1 : 0;
    });
}

size_t vgsn_model_param_count(const vgsn_model* model) {
    if (!model) return 0;
    return std::visit([](auto& m) { return const_cast<std::decay_t<decltype(m)>&>(m).param_count(); },
                      model->impl);
}

vgsn_status vgsn_corpus_load(const char* dir_a, const char* dir_b, vgsn_corpus** out) {
    return guarded([&] {
        if (!dir_a || !dir_b || !out)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        auto* handle = new vgsn_corpus;
        try {
            handle->corpus = vgsn::load_paired_corpus(dir_a, dir_b);
        } catch (...) {
            delete handle;
            throw;
        }
        *out = handle;
    });
}

void vgsn_corpus_destroy(vgsn_corpus* corpus) { delete corpus; }

int vgsn_corpus_size(const vgsn_corpus* corpus) {
    return corpus ? static_cast<int>(corpus->corpus.pairs.size()) : 0;
}

int vgsn_corpus_image_size(const vgsn_corpus* corpus) {
    return corpus ? corpus->corpus.image_size : 0;
}

uint32_t vgsn_corpus_codepoint(const vgsn_corpus* corpus, int index) {
    if (!corpus || index < 0 || index >= static_cast<int>(corpus->corpus.pairs.size())) return 0;
    return corpus->corpus.pairs[static_cast<std::size_t>(index)].codepoint;
}

vgsn_status vgsn_train(vgsn_model* model, const vgsn_corpus* corpus,
                       const vgsn_train_config* config, double* loss_out, double* seconds_out) {
    return guarded([&] {
        if (!model || !corpus || !config)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        vgsn::TrainConfig tc;
        tc.optimizer = vgsn::optimizer_from_name(config->optimizer ? config->optimizer : "adam");
        tc.learning_rate = config->learning_rate;
        tc.batch_size = config->batch_size > 0 ? config->batch_size : 32;
        tc.epochs = config->epochs;
        tc.seed = config->seed;
        tc.kl_weight = config->kl_weight;
        if (tc.epochs < 0)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "epochs must be >= 0");
        model->visit([&](auto& m) {
            const int img = m.config.image_size;
            if (corpus->corpus.image_size != img)
                vgsn::fail(vgsn::ErrorCategory::invalid_argument,
                           "corpus image size " + std::to_string(corpus->corpus.image_size) +
                               " does not match model " + std::to_string(img));
            auto curve = vgsn::fit(m, corpus->corpus, tc);
            for (std::size_t i = 0; i < curve.size(); ++i) {
                if (loss_out) loss_out[i] = curve[i].mean_loss;
                if (seconds_out) seconds_out[i] = curve[i].wall_time_seconds;
            }
        });
    });
}

vgsn_status vgsn_generate(vgsn_model* model, const float* input, float* output, int stochastic,
                          uint64_t seed) {
    return guarded([&] {
        if (!model || !input || !output)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        model->visit([&](auto& m) {
            using Real = typename std::decay_t<decltype(m)>::value_type;
            const int img = m.config.image_size;
            vgsn::Tensor<Real> in(vgsn::Shape{1, img, img, 1});
            for (std::size_t i = 0; i < in.numel(); ++i)
                in.data[i] = static_cast<Real>(input[i]);
            vgsn::check_finite(in, "generate input");
            auto out_t = vgsn::generate(m, in, stochastic != 0, seed);
            for (std::size_t i = 0; i < out_t.numel(); ++i)
                output[i] = static_cast<float>(out_t.data[i]);
        });
    });
}

vgsn_status vgsn_pgm_load(const char* path, float** pixels, int* width, int* height) {
    return guarded([&] {
        if (!path || !pixels || !width || !height)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        vgsn::GrayImage img = vgsn::load_pgm_file(path);
        float* buf = static_cast<float*>(std::malloc(img.pixels.size() * sizeof(float)));
        if (!buf) vgsn::fail(vgsn::ErrorCategory::internal, "allocation failure");
        std::memcpy(buf, img.pixels.data(), img.pixels.size() * sizeof(float));
        *pixels = buf;
        *width = img.width;
        *height = img.height;
    });
}

vgsn_status vgsn_pgm_save(const char* path, const float* pixels, int width, int height) {
    return guarded([&] {
        if (!path || !pixels)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        if (width < 1 || height < 1)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "dimensions must be positive");
        vgsn::GrayImage img;
        img.width = width;
        img.height = height;
        img.pixels.assign(pixels, pixels + static_cast<std::size_t>(width) * height);
        vgsn::save_pgm_file(path, img);
    });
}

void vgsn_free(void* ptr) { std::free(ptr); }

vgsn_status vgsn_grad_check(int image_size, int grid, int stages, uint64_t seed,
                            double* max_rel_error, char* worst_param,
                            size_t worst_param_size) {
    return guarded([&] {
        if (!max_rel_error)
            vgsn::fail(vgsn::ErrorCategory::invalid_argument, "null argument");
        auto res = vgsn::run_model_grad_check(image_size, grid, stages, seed);
        *max_rel_error = res.max_rel_error;
        if (worst_param && worst_param_size > 0) {
            std::strncpy(worst_param, res.worst_param.c_str(), worst_param_size - 1);
            worst_param[worst_param_size - 1] = '\0';
        }
    });
}

}  // extern "C"
