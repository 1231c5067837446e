#pragma once

#include <chrono>
#include <cstdio>
#include <ostream>
#include <vector>

#include "corpus.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace vgsn {

struct TrainConfig {
    int batch_size = 32;
    int epochs = 0;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.0;  // <= 0 picks the optimizer default
    double kl_weight = 0.0;      // experimental extra term, off by default

    double effective_learning_rate() const {
        return learning_rate > 0 ? learning_rate : default_learning_rate(optimizer);
    }
};

struct LossRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double wall_time_seconds = 0.0;
};

// One shuffled pass over the corpus: per batch forward (train mode, fresh
// latent noise), MSE against the font-B targets, backward, optimizer step.
// Returns the mean batch loss and the measured epoch wall time.
template <typename Real>
LossRecord train_epoch(Model<Real>& model, Optimizer<Real>& opt, const PairedCorpus& corpus,
                       const TrainConfig& config, Rng& rng, int epoch_index) {
    if (corpus.pairs.empty()) fail(ErrorCategory::invalid_argument, "empty corpus");
    auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches<Real>(corpus, config.batch_size, rng);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        auto& batch = batches[bi];
        int B = batch.input.shape[0];
        Tensor<Real> eps = seeded_normal<Real>(Shape{B, model.config.latent_dim}, rng);
        Tape<Real> tape;
        BoundModel<Real> bound(tape, model);
        auto in_id = tape.constant(std::move(batch.input));
        auto target_id = tape.constant(std::move(batch.target));
        auto eps_id = tape.constant(std::move(eps));
        auto out = bound.forward(in_id, eps_id, Mode::train);
        auto loss = ops::mse_loss(tape, out, target_id);
        if (config.kl_weight > 0) {
            auto st = bound.last_stats();
            auto kl = ops::kl_loss(tape, st.mu, st.sigma);
            loss = ops::add(tape, loss,
                            ops::scale(tape, kl, static_cast<Real>(config.kl_weight)));
        }
        double loss_value = static_cast<double>(tape.value(loss).data[0]);
        if (!std::isfinite(loss_value))
            fail(ErrorCategory::numeric, "non-finite loss at epoch " + std::to_string(epoch_index) +
                                             " batch " + std::to_string(bi));
        loss_sum += loss_value;
        tape.backward(loss);
        opt.step(model.trainable(), bound.gradients());
    }
    auto t1 = std::chrono::steady_clock::now();
    LossRecord rec;
    rec.epoch = epoch_index;
    rec.mean_loss = loss_sum / static_cast<double>(batches.size());
    rec.wall_time_seconds = std::chrono::duration<double>(t1 - t0).count();
    return rec;
}

template <typename Real>
std::vector<LossRecord> fit(Model<Real>& model, const PairedCorpus& corpus,
                            const TrainConfig& config) {
    Optimizer<Real> opt(config.optimizer, config.effective_learning_rate());
    Rng rng(config.seed);
    std::vector<LossRecord> curve;
    curve.reserve(static_cast<std::size_t>(config.epochs));
    for (int e = 0; e < config.epochs; ++e)
        curve.push_back(train_epoch(model, opt, corpus, config, rng, e + 1));
    return curve;
}

// CSV export: header `epoch,loss,seconds`, floats with 9 significant digits.
inline void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& curve) {
    os << "epoch,loss,seconds\n";
    char buf[128];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", r.epoch, r.mean_loss,
                      r.wall_time_seconds);
        os << buf;
    }
}

// Deterministic evaluation of one glyph: z = mu, eval-mode batch statistics.
// Pass stochastic=true with a seed to keep the sampling path instead.
template <typename Real>
Tensor<Real> generate(Model<Real>& model, const Tensor<Real>& input, bool stochastic,
                      std::uint64_t seed) {
    Tape<Real> tape;
    BoundModel<Real> bound(tape, model);
    auto in_id = tape.constant(input);
    typename Tape<Real>::Id eps_id = -1;
    if (stochastic) {
        Rng rng(seed);
        eps_id = tape.constant(
            seeded_normal<Real>(Shape{input.shape[0], model.config.latent_dim}, rng));
    }
    auto out = bound.forward(in_id, eps_id, Mode::eval);
    return tape.value(out);
}

}  // namespace vgsn
