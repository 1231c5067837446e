#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vgsn {

enum class OptimizerKind { sgd, adam, rmsprop };

inline OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    if (name == "rmsprop") return OptimizerKind::rmsprop;
    fail(ErrorCategory::invalid_argument, "unknown optimizer: " + name);
}

inline const char* optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::rmsprop: return "rmsprop";
    }
    return "?";
}

inline double default_learning_rate(OptimizerKind k) {
    return k == OptimizerKind::sgd ? 0.01 : 0.001;
}

template <typename Real>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate)
        : kind_(kind), lr_(static_cast<Real>(learning_rate)) {
        if (learning_rate <= 0)
            fail(ErrorCategory::invalid_argument, "learning rate must be positive");
    }

    OptimizerKind kind() const { return kind_; }

    // One update over a parameter group; moment buffers are created lazily on
    // the first call and must keep matching shapes afterwards.
    void step(std::vector<Tensor<Real>*> params, const std::vector<const Tensor<Real>*>& grads) {
        if (params.size() != grads.size())
            fail(ErrorCategory::invalid_argument, "optimizer: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        }
        ++step_count_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            const auto& g = *grads[i];
            if (!p.same_shape(g))
                fail(ErrorCategory::invalid_argument, "optimizer: gradient shape mismatch");
            check_finite(g, "optimizer gradient");
            switch (kind_) {
                case OptimizerKind::sgd:
                    for (std::size_t j = 0; j < p.numel(); ++j) p.data[j] -= lr_ * g.data[j];
                    break;
                case OptimizerKind::adam: {
                    Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(step_count_));
                    Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(step_count_));
                    for (std::size_t j = 0; j < p.numel(); ++j) {
                        Real gv = g.data[j];
                        m_[i].data[j] = beta1_ * m_[i].data[j] + (Real(1) - beta1_) * gv;
                        v_[i].data[j] = beta2_ * v_[i].data[j] + (Real(1) - beta2_) * gv * gv;
                        Real mhat = m_[i].data[j] / bc1;
                        Real vhat = v_[i].data[j] / bc2;
                        p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                    }
                    break;
                }
                case OptimizerKind::rmsprop:
                    for (std::size_t j = 0; j < p.numel(); ++j) {
                        Real gv = g.data[j];
                        v_[i].data[j] = rho_ * v_[i].data[j] + (Real(1) - rho_) * gv * gv;
                        p.data[j] -= lr_ * gv / (std::sqrt(v_[i].data[j]) + eps_);
                    }
                    break;
            }
        }
    }

    long step_count() const { return step_count_; }

private:
    OptimizerKind kind_;
    Real lr_;
    Real beta1_ = Real(0.9);
    Real beta2_ = Real(0.999);
    Real rho_ = Real(0.9);
    Real eps_ = Real(1e-8);
    long step_count_ = 0;
    std::vector<Tensor<Real>> m_, v_;
};

}  // namespace vgsn
