#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ops.hpp"

namespace vgsn {

enum class ModelKind { vgsn, vae };

struct ModelConfig {
    int image_size = 256;  // square, single channel
    int encoder_depth = 6;
    int decoder_stages = 5;
    int grid = 4;                    // partitions per side
    int latent_dim = 64;             // d
    int partition_latent_dim = 16;   // d_p
    int basis_dim = 512;
    std::vector<int> encoder_channels;  // defaults derived from depth
    std::vector<int> decoder_channels;  // defaults derived from stages
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
    ModelKind kind = ModelKind::vgsn;

    static std::vector<int> default_encoder_channels(int depth) {
        static const std::vector<int> full = {16, 32, 64, 128, 128, 128};
        if (depth < 1 || depth > static_cast<int>(full.size()))
            fail(ErrorCategory::config, "encoder depth must be in [1,6] for default channels");
        return {full.begin(), full.begin() + depth};
    }

    // Tail of the full ladder so shallow configs stay light.
    static std::vector<int> default_decoder_channels(int stages) {
        static const std::vector<int> full = {128, 64, 32, 16, 8};
        if (stages < 1 || stages > static_cast<int>(full.size()))
            fail(ErrorCategory::config, "decoder stages must be in [1,5] for default channels");
        return {full.end() - stages, full.end()};
    }

    void finalize() {
        if (encoder_channels.empty()) encoder_channels = default_encoder_channels(encoder_depth);
        if (decoder_channels.empty()) decoder_channels = default_decoder_channels(decoder_stages);
        validate();
    }

    void validate() const {
        auto require = [](bool ok, const std::string& msg) {
            if (!ok) fail(ErrorCategory::config, msg);
        };
        require(image_size >= 1, "image size must be positive");
        require(grid >= 1, "grid must be >= 1");
        require(latent_dim >= 1 && partition_latent_dim >= 1 && basis_dim >= 1,
                "latent dimensions must be positive");
        require(encoder_depth >= 1 && decoder_stages >= 1, "depth/stages must be positive");
        require(static_cast<int>(encoder_channels.size()) == encoder_depth,
                "encoder channel list must match encoder depth");
        require(static_cast<int>(decoder_channels.size()) == decoder_stages,
                "decoder channel list must match decoder stages");
        int enc_div = 1 << encoder_depth;
        require(image_size % enc_div == 0,
                "image size " + std::to_string(image_size) + " not divisible by 2^encoder_depth");
        int tile_div = grid * (1 << decoder_stages);
        require(image_size % tile_div == 0,
                "image size " + std::to_string(image_size) + " not divisible by grid*2^stages = " +
                    std::to_string(tile_div));
        require(bn_momentum > 0.0 && bn_momentum < 1.0, "batchnorm momentum must be in (0,1)");
        require(bn_epsilon > 0.0, "batchnorm epsilon must be positive");
    }

    int tile_size() const { return image_size / grid; }
    int encoder_out_size() const { return image_size / (1 << encoder_depth); }
    // seed spatial extent for one decoded tile (vgsn) or the full image (vae)
    int decoder_seed_size() const {
        int base = kind == ModelKind::vae ? image_size : tile_size();
        return base / (1 << decoder_stages);
    }
};

template <typename Real>
struct ConvLayer {
    Tensor<Real> kernel;  // [kh,kw,Cin,Cout]
    Tensor<Real> bias;    // [Cout]
};

template <typename Real>
struct BatchNormLayer {
    Tensor<Real> gamma, beta, running_mean, running_var;  // all [C]
};

template <typename Real>
struct DenseLayer {
    Tensor<Real> weight;  // [in,out]
    Tensor<Real> bias;    // [out]
};

template <typename Real>
struct LatentStats {
    typename Tape<Real>::Id mu;
    typename Tape<Real>::Id sigma;
};

// Full parameter set for the grid-setting model; the baseline VAE reuses the
// same structure with grid_dense absent and the decoder seed covering the
// whole image.
template <typename Real>
struct Model {
    using value_type = Real;

    ModelConfig config;
    std::vector<ConvLayer<Real>> encoder;
    std::vector<BatchNormLayer<Real>> encoder_bn;
    DenseLayer<Real> basis, head_mu, head_sigma;
    DenseLayer<Real> grid_dense;    // d -> g^2 * d_p (vgsn only)
    DenseLayer<Real> decoder_seed;  // d_p (vgsn) or d (vae) -> s0^2 * c0
    std::vector<ConvLayer<Real>> decoder;
    std::vector<BatchNormLayer<Real>> decoder_bn;
    ConvLayer<Real> combine;  // stride-1 transposed conv, Cout == 1

    // Trainable tensors in the frozen serialization order.
    std::vector<Tensor<Real>*> trainable() {
        std::vector<Tensor<Real>*> out;
        for (std::size_t i = 0; i < encoder.size(); ++i) {
            out.push_back(&encoder[i].kernel);
            out.push_back(&encoder[i].bias);
            out.push_back(&encoder_bn[i].gamma);
            out.push_back(&encoder_bn[i].beta);
        }
        for (auto* d : {&basis, &head_mu, &head_sigma}) {
            out.push_back(&d->weight);
            out.push_back(&d->bias);
        }
        if (config.kind == ModelKind::vgsn) {
            out.push_back(&grid_dense.weight);
            out.push_back(&grid_dense.bias);
        }
        out.push_back(&decoder_seed.weight);
        out.push_back(&decoder_seed.bias);
        for (std::size_t i = 0; i < decoder.size(); ++i) {
            out.push_back(&decoder[i].kernel);
            out.push_back(&decoder[i].bias);
            out.push_back(&decoder_bn[i].gamma);
            out.push_back(&decoder_bn[i].beta);
        }
        out.push_back(&combine.kernel);
        out.push_back(&combine.bias);
        return out;
    }

    // Trainable tensors followed by batchnorm running statistics.
    std::vector<Tensor<Real>*> all_tensors() {
        auto out = trainable();
        for (auto& bn : encoder_bn) {
            out.push_back(&bn.running_mean);
            out.push_back(&bn.running_var);
        }
        for (auto& bn : decoder_bn) {
            out.push_back(&bn.running_mean);
            out.push_back(&bn.running_var);
        }
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto* t : trainable()) n += t->numel();
        return n;
    }
};

namespace detail {

template <typename Real>
Tensor<Real> scaled_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
    Tensor<Real> t = seeded_normal<Real>(shape, rng);
    Real s = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data) v *= s;
    return t;
}

template <typename Real>
ConvLayer<Real> init_conv(int kh, int kw, int cin, int cout, Rng& rng) {
    ConvLayer<Real> l;
    l.kernel = scaled_normal<Real>(Shape{kh, kw, cin, cout},
                                   static_cast<std::size_t>(kh) * kw * cin, rng);
    l.bias = Tensor<Real>(Shape{cout});
    return l;
}

template <typename Real>
BatchNormLayer<Real> init_bn(int c) {
    BatchNormLayer<Real> l;
    l.gamma = Tensor<Real>(Shape{c});
    l.gamma.fill(Real(1));
    l.beta = Tensor<Real>(Shape{c});
    l.running_mean = Tensor<Real>(Shape{c});
    l.running_var = Tensor<Real>(Shape{c});
    l.running_var.fill(Real(1));
    return l;
}

template <typename Real>
DenseLayer<Real> init_dense(int in, int out, Rng& rng) {
    DenseLayer<Real> l;
    l.weight = scaled_normal<Real>(Shape{in, out}, static_cast<std::size_t>(in), rng);
    l.bias = Tensor<Real>(Shape{out});
    return l;
}

}  // namespace detail

constexpr int kKernelSize = 3;  // all convs, including the combine layer

template <typename Real>
Model<Real> init_model(ModelConfig config, Rng& rng) {
    config.finalize();
    Model<Real> m;
    m.config = config;
    int cin = 1;
    for (int c : config.encoder_channels) {
        m.encoder.push_back(detail::init_conv<Real>(kKernelSize, kKernelSize, cin, c, rng));
        m.encoder_bn.push_back(detail::init_bn<Real>(c));
        cin = c;
    }
    int flat = config.encoder_out_size() * config.encoder_out_size() * cin;
    m.basis = detail::init_dense<Real>(flat, config.basis_dim, rng);
    m.head_mu = detail::init_dense<Real>(config.basis_dim, config.latent_dim, rng);
    m.head_sigma = detail::init_dense<Real>(config.basis_dim, config.latent_dim, rng);

    int c0 = config.decoder_channels.front();
    int s0 = config.decoder_seed_size();
    if (s0 < 1) fail(ErrorCategory::config, "decoder seed extent vanished; reduce stages or grid");
    if (config.kind == ModelKind::vgsn) {
        m.grid_dense = detail::init_dense<Real>(
            config.latent_dim, config.grid * config.grid * config.partition_latent_dim, rng);
        m.decoder_seed =
            detail::init_dense<Real>(config.partition_latent_dim, s0 * s0 * c0, rng);
    } else {
        m.decoder_seed = detail::init_dense<Real>(config.latent_dim, s0 * s0 * c0, rng);
    }
    int dc_in = c0;
    for (int c : config.decoder_channels) {
        m.decoder.push_back(detail::init_conv<Real>(kKernelSize, kKernelSize, dc_in, c, rng));
        m.decoder_bn.push_back(detail::init_bn<Real>(c));
        dc_in = c;
    }
    m.combine = detail::init_conv<Real>(kKernelSize, kKernelSize, dc_in, 1, rng);
    return m;
}

template <typename Real>
struct ParamBinding {
    std::vector<typename Tape<Real>::Id> ids;  // parallel to Model::trainable()
};

namespace detail {

// Pushes every trainable tensor onto the tape as a gradient-tracked leaf.
template <typename Real>
ParamBinding<Real> bind_params(Tape<Real>& tape, Model<Real>& m) {
    ParamBinding<Real> b;
    for (auto* t : m.trainable()) b.ids.push_back(tape.leaf(*t));
    return b;
}

}  // namespace detail

template <typename Real>
class BoundModel {
public:
    using Id = typename Tape<Real>::Id;

    BoundModel(Tape<Real>& tape, Model<Real>& model)
        : tape_(tape), model_(model), binding_(detail::bind_params(tape, model)) {}

    // applies the conv->batchnorm->relu encoder stack, the basis dense layer
    // and the two heads
    LatentStats<Real> encode(Id batch, Mode mode) {
        const auto& shape = tape_.value(batch).shape;
        const auto& cfg = model_.config;
        if (shape.size() != 4 || shape[1] != cfg.image_size || shape[2] != cfg.image_size ||
            shape[3] != 1)
            fail(ErrorCategory::invalid_argument,
                 "encode: batch shape " + shape_to_string(shape) + " does not match config");
        Id x = batch;
        std::size_t p = 0;
        for (std::size_t i = 0; i < model_.encoder.size(); ++i) {
            Id k = binding_.ids[p++], kb = binding_.ids[p++];
            Id gamma = binding_.ids[p++], beta = binding_.ids[p++];
            x = ops::conv2d(tape_, x, k, kb, 2, Padding::same);
            x = ops::batchnorm(tape_, x, gamma, beta, &model_.encoder_bn[i].running_mean,
                               &model_.encoder_bn[i].running_var,
                               static_cast<Real>(cfg.bn_momentum),
                               static_cast<Real>(cfg.bn_epsilon), mode);
            x = ops::relu(tape_, x);
        }
        int B = shape[0];
        int flat = static_cast<int>(tape_.value(x).numel()) / B;
        x = ops::reshape(tape_, x, Shape{B, flat});
        Id bw = binding_.ids[p++], bb = binding_.ids[p++];
        x = ops::relu(tape_, ops::dense(tape_, x, bw, bb));
        Id mw = binding_.ids[p++], mb = binding_.ids[p++];
        Id sw = binding_.ids[p++], sb = binding_.ids[p++];
        LatentStats<Real> st;
        st.mu = ops::dense(tape_, x, mw, mb);
        st.sigma = ops::dense(tape_, x, sw, sb);
        head_end_ = p;
        return st;
    }

    // dense amplification followed by the grid reshape, [B,d] -> [B,g,g,d_p]
    Id grid_expand(Id z) {
        if (model_.config.kind != ModelKind::vgsn)
            fail(ErrorCategory::invalid_argument, "grid_expand: baseline model has no grid layer");
        std::size_t p = head_end_;
        Id gw = binding_.ids[p++], gb = binding_.ids[p++];
        Id x = ops::dense(tape_, z, gw, gb);
        int B = tape_.value(z).shape[0];
        int g = model_.config.grid;
        return ops::reshape(tape_, x, Shape{B, g, g, model_.config.partition_latent_dim});
    }

    // weight-shared decoder over the B*g*g partition latents
    Id decode_tiles(Id tiles, Mode mode) {
        const auto& cfg = model_.config;
        int B = tape_.value(tiles).shape[0];
        int g = cfg.grid;
        Id x = ops::reshape(tape_, tiles, Shape{B * g * g, cfg.partition_latent_dim});
        return run_decoder(x, B * g * g, cfg.tile_size(), mode);
    }

    // tiles [B*g*g, t, t, c_last] -> combined sigmoid image [B,H,W,1]
    Id assemble_and_combine(Id tiles, Mode mode) {
        (void)mode;
        int g = model_.config.grid;
        int B = tape_.value(tiles).shape[0] / (g * g);
        Id img = ops::assemble_tiles(tape_, tiles, B, g);
        return combine(img);
    }

    Id forward(Id batch, Id eps, Mode mode) {
        auto st = encode(batch, mode);
        Id z = eps >= 0 ? ops::sample_latent(tape_, st.mu, st.sigma, eps) : st.mu;
        last_stats_ = st;
        if (model_.config.kind == ModelKind::vgsn) {
            Id tiles = grid_expand(z);
            Id decoded = decode_tiles(tiles, mode);
            return assemble_and_combine(decoded, mode);
        }
        // baseline: one decoder pass over the full image
        Id img = run_decoder(z, tape_.value(z).shape[0], model_.config.image_size, mode);
        return combine(img);
    }

    LatentStats<Real> last_stats() const { return last_stats_; }

    // Writes accumulated gradients back in trainable() order.
    std::vector<const Tensor<Real>*> gradients() {
        std::vector<const Tensor<Real>*> out;
        for (auto id : binding_.ids) out.push_back(&tape_.grad(id));
        return out;
    }

private:
    Id run_decoder(Id z, int batch_like, int target_size, Mode mode) {
        const auto& cfg = model_.config;
        std::size_t p = head_end_;
        if (cfg.kind == ModelKind::vgsn) p += 2;  // skip grid_dense slots
        Id sw = binding_.ids[p++], sb = binding_.ids[p++];
        Id x = ops::dense(tape_, z, sw, sb);
        int s0 = target_size / (1 << cfg.decoder_stages);
        int c0 = cfg.decoder_channels.front();
        x = ops::reshape(tape_, x, Shape{batch_like, s0, s0, c0});
        for (std::size_t i = 0; i < model_.decoder.size(); ++i) {
            Id k = binding_.ids[p++], kb = binding_.ids[p++];
            Id gamma = binding_.ids[p++], beta = binding_.ids[p++];
            x = ops::conv_transpose2d(tape_, x, k, kb, 2);
            x = ops::batchnorm(tape_, x, gamma, beta, &model_.decoder_bn[i].running_mean,
                               &model_.decoder_bn[i].running_var,
                               static_cast<Real>(cfg.bn_momentum),
                               static_cast<Real>(cfg.bn_epsilon), mode);
            x = ops::relu(tape_, x);
        }
        combine_slot_ = p;
        return x;
    }

    Id combine(Id img) {
        std::size_t p = combine_slot_;
        Id k = binding_.ids[p], kb = binding_.ids[p + 1];
        Id x = ops::conv_transpose2d(tape_, img, k, kb, 1);
        return ops::sigmoid(tape_, x);
    }

    Tape<Real>& tape_;
    Model<Real>& model_;
    ParamBinding<Real> binding_;
    std::size_t head_end_ = 0;
    std::size_t combine_slot_ = 0;
    LatentStats<Real> last_stats_{};
};

// ---- serialization ----------------------------------------------------------
//
// Text header followed by a flat little-endian float32 blob covering
// all_tensors() in order:
//
//   VGSN1
//   kind vgsn|vae
//   image_size N
//   encoder_depth N
//   decoder_stages N
//   grid N
//   latent_dim N
//   partition_latent_dim N
//   basis_dim N
//   encoder_channels a,b,...
//   decoder_channels a,b,...
//   bn_momentum F
//   bn_epsilon F
//   params N
//   blob
//   <N * 4 bytes>

inline constexpr const char* kModelMagic = "VGSN1";

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

inline std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

inline float to_le_float(float v) {
    static_assert(sizeof(float) == 4);
    return v;  // build targets are little-endian; asserted at load/save
}

}  // namespace detail

template <typename Real>
void save_model(std::ostream& os, Model<Real>& m) {
    const auto& c = m.config;
    os << kModelMagic << '\n';
    os << "kind " << (c.kind == ModelKind::vgsn ? "vgsn" : "vae") << '\n';
    os << "image_size " << c.image_size << '\n';
    os << "encoder_depth " << c.encoder_depth << '\n';
    os << "decoder_stages " << c.decoder_stages << '\n';
    os << "grid " << c.grid << '\n';
    os << "latent_dim " << c.latent_dim << '\n';
    os << "partition_latent_dim " << c.partition_latent_dim << '\n';
    os << "basis_dim " << c.basis_dim << '\n';
    os << "encoder_channels " << detail::join_ints(c.encoder_channels) << '\n';
    os << "decoder_channels " << detail::join_ints(c.decoder_channels) << '\n';
    os << "bn_momentum " << c.bn_momentum << '\n';
    os << "bn_epsilon " << c.bn_epsilon << '\n';
    std::size_t n = 0;
    for (auto* t : m.all_tensors()) n += t->numel();
    os << "params " << n << '\n';
    os << "blob\n";
    std::vector<float> buf;
    buf.reserve(n);
    for (auto* t : m.all_tensors())
        for (Real v : t->data) buf.push_back(static_cast<float>(v));
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) fail(ErrorCategory::io, "failed writing model stream");
}

template <typename Real>
Model<Real> load_model(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kModelMagic)
        fail(ErrorCategory::format, "bad model magic");
    ModelConfig c;
    c.encoder_channels.clear();
    c.decoder_channels.clear();
    std::size_t declared = 0;
    bool saw_blob = false;
    while (std::getline(is, line)) {
        if (line == "blob") {
            saw_blob = true;
            break;
        }
        auto sp = line.find(' ');
        if (sp == std::string::npos) fail(ErrorCategory::format, "malformed model header line");
        std::string key = line.substr(0, sp), val = line.substr(sp + 1);
        try {
            if (key == "kind") {
                if (val == "vgsn")
                    c.kind = ModelKind::vgsn;
                else if (val == "vae")
                    c.kind = ModelKind::vae;
                else
                    fail(ErrorCategory::format, "unknown model kind: " + val);
            } else if (key == "image_size")
                c.image_size = std::stoi(val);
            else if (key == "encoder_depth")
                c.encoder_depth = std::stoi(val);
            else if (key == "decoder_stages")
                c.decoder_stages = std::stoi(val);
            else if (key == "grid")
                c.grid = std::stoi(val);
            else if (key == "latent_dim")
                c.latent_dim = std::stoi(val);
            else if (key == "partition_latent_dim")
                c.partition_latent_dim = std::stoi(val);
            else if (key == "basis_dim")
                c.basis_dim = std::stoi(val);
            else if (key == "encoder_channels")
                c.encoder_channels = detail::parse_ints(val);
            else if (key == "decoder_channels")
                c.decoder_channels = detail::parse_ints(val);
            else if (key == "bn_momentum")
                c.bn_momentum = std::stod(val);
            else if (key == "bn_epsilon")
                c.bn_epsilon = std::stod(val);
            else if (key == "params")
                declared = static_cast<std::size_t>(std::stoull(val));
            else
                fail(ErrorCategory::format, "unknown model header key: " + key);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail(ErrorCategory::format, "unparsable model header value for " + key);
        }
    }
    if (!saw_blob) fail(ErrorCategory::format, "model header missing blob marker");
    try {
        c.finalize();
    } catch (const Error& e) {
        fail(ErrorCategory::format, std::string("inconsistent model header: ") + e.what());
    }

    Rng rng(0);
    Model<Real> m = init_model<Real>(c, rng);
    std::size_t expected = 0;
    for (auto* t : m.all_tensors()) expected += t->numel();
    if (declared != expected)
        fail(ErrorCategory::format, "header parameter count " + std::to_string(declared) +
                                        " inconsistent with config (expected " +
                                        std::to_string(expected) + ")");
    std::vector<float> buf(expected);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != expected * sizeof(float))
        fail(ErrorCategory::format, "truncated model blob");
    char extra;
    if (is.read(&extra, 1))
        fail(ErrorCategory::format, "trailing bytes after model blob");
    std::size_t off = 0;
    for (auto* t : m.all_tensors())
        for (auto& v : t->data) v = static_cast<Real>(buf[off++]);
    return m;
}

}  // namespace vgsn
