#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "model.hpp"

namespace vgsn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;  // label of the parameter group holding the max
    std::size_t worst_index = 0;
};

// Central-difference check of an analytic gradient. `f` re-evaluates the
// scalar objective from the current contents of `params`; `analytic` holds
// d f / d params captured once before the call, parallel to `params`.
// Relative error per element: |a - n| / max(|a|, |n|, 1e-8).
template <typename Real>
GradCheckResult grad_check(
    const std::function<Real()>& f, const std::vector<Tensor<Real>*>& params,
    const std::vector<Tensor<Real>>& analytic, Real step,
    const std::vector<std::string>& labels = {}) {
    if (params.size() != analytic.size())
        fail(ErrorCategory::invalid_argument, "grad_check: gradient count mismatch");
    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<Real>& p = *params[pi];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            Real saved = p.data[j];
            p.data[j] = saved + step;
            Real fp = f();
            p.data[j] = saved - step;
            Real fm = f();
            p.data[j] = saved;
            if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
                fail(ErrorCategory::numeric, "non-finite objective during finite differences");
            double numeric = static_cast<double>((fp - fm) / (Real(2) * step));
            double a = static_cast<double>(analytic[pi].data[j]);
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = pi < labels.size() ? labels[pi] : "param" + std::to_string(pi);
                res.worst_index = j;
            }
        }
    }
    return res;
}

// End-to-end check of the full model loss. Runs one backward pass to collect
// analytic gradients, then sweeps every parameter element with central
// differences. Double precision only.
template <typename Real>
GradCheckResult model_grad_check(Model<Real>& model, const Tensor<Real>& batch,
                                 const Tensor<Real>& eps, const Tensor<Real>& target,
                                 Real step = Real(1e-5)) {
    std::function<Real()> objective = [&]() -> Real {
        Tape<Real> tape;
        BoundModel<Real> bound(tape, model);
        auto in_id = tape.constant(batch);
        auto eps_id = tape.constant(eps);
        auto target_id = tape.constant(target);
        auto out = bound.forward(in_id, eps_id, Mode::train);
        auto loss = ops::mse_loss(tape, out, target_id);
        return tape.value(loss).data[0];
    };

    std::vector<Tensor<Real>> analytic;
    {
        Tape<Real> tape;
        BoundModel<Real> bound(tape, model);
        auto in_id = tape.constant(batch);
        auto eps_id = tape.constant(eps);
        auto target_id = tape.constant(target);
        auto out = bound.forward(in_id, eps_id, Mode::train);
        auto loss = ops::mse_loss(tape, out, target_id);
        tape.backward(loss);
        for (const auto* g : bound.gradients()) analytic.push_back(*g);
    }
    // test hook: corrupt one analytic gradient to prove the check can fail
    if (std::getenv("VGSN_GRADCHECK_SABOTAGE") && !analytic.empty() && analytic[0].numel() > 0)
        analytic[0].data[0] += Real(0.5) * (Real(1) + std::abs(analytic[0].data[0]));

    std::vector<std::string> labels;
    {
        // mirror Model::trainable() ordering
        const auto& c = model.config;
        for (int i = 0; i < c.encoder_depth; ++i)
            for (const char* part : {"kernel", "bias", "bn_gamma", "bn_beta"})
                labels.push_back("encoder" + std::to_string(i) + "." + part);
        for (const char* d : {"basis", "head_mu", "head_sigma"})
            for (const char* part : {"weight", "bias"})
                labels.push_back(std::string(d) + "." + part);
        if (c.kind == ModelKind::vgsn)
            for (const char* part : {"weight", "bias"})
                labels.push_back(std::string("grid_dense.") + part);
        for (const char* part : {"weight", "bias"})
            labels.push_back(std::string("decoder_seed.") + part);
        for (int i = 0; i < c.decoder_stages; ++i)
            for (const char* part : {"kernel", "bias", "bn_gamma", "bn_beta"})
                labels.push_back("decoder" + std::to_string(i) + "." + part);
        for (const char* part : {"kernel", "bias"})
            labels.push_back(std::string("combine.") + part);
    }
    return grad_check(objective, model.trainable(), analytic, step, labels);
}

// Small-channel configuration for end-to-end checks; finite differences over
// the default channel widths would take hours.
inline ModelConfig gradcheck_config(int image_size, int grid, int stages) {
    ModelConfig c;
    c.image_size = image_size;
    c.grid = grid;
    c.decoder_stages = stages;
    c.encoder_depth = 1;
    while ((1 << (c.encoder_depth + 1)) <= image_size && c.encoder_depth < 4) ++c.encoder_depth;
    c.latent_dim = 6;
    c.partition_latent_dim = 4;
    c.basis_dim = 16;
    c.encoder_channels.assign(static_cast<std::size_t>(c.encoder_depth), 6);
    c.encoder_channels[0] = 4;
    c.decoder_channels.assign(static_cast<std::size_t>(stages), 6);
    c.validate();
    return c;
}

// Runs the frozen toy check: seeded random parameters, inputs, targets and
// latent noise, full training-mode loss. Finite differences run in extended
// precision so the quotient noise floor sits well below the 1e-4 tolerance.
inline GradCheckResult run_model_grad_check(int image_size, int grid, int stages,
                                            std::uint64_t seed) {
    using Real = long double;
    ModelConfig config = gradcheck_config(image_size, grid, stages);
    Rng rng(seed);
    Model<Real> model = init_model<Real>(config, rng);
    const int B = 2;
    Tensor<Real> batch = seeded_normal<Real>(Shape{B, image_size, image_size, 1}, rng);
    for (auto& v : batch.data) v = Real(1) / (Real(1) + std::exp(-v));  // keep inputs in (0,1)
    Tensor<Real> target = seeded_normal<Real>(Shape{B, image_size, image_size, 1}, rng);
    for (auto& v : target.data) v = Real(1) / (Real(1) + std::exp(-v));
    Tensor<Real> eps = seeded_normal<Real>(Shape{B, config.latent_dim}, rng);
    return model_grad_check(model, batch, eps, target);
}

}  // namespace vgsn
