#pragma once

#include <functional>
#include <vector>

#include "tensor.hpp"

namespace vgsn {

// Reverse-mode tape. Operations append one node per output tensor plus a
// backward closure; closures run once each, in reverse order of recording, so
// topological order holds by construction. One tape lives for one
// forward/backward pass.
template <typename Real>
class Tape {
public:
    using Id = int;

    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;  // allocated lazily on first accumulation
        bool requires_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Id push(Tensor<Real> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id constant(Tensor<Real> value) { return push(std::move(value), false); }
    Id leaf(Tensor<Real> value) { return push(std::move(value), true); }

    const Tensor<Real>& value(Id id) const { return nodes_[id].value; }
    Tensor<Real>& value(Id id) { return nodes_[id].value; }
    bool requires_grad(Id id) const { return nodes_[id].requires_grad; }

    // Gradient buffer, allocated zero-filled on demand.
    Tensor<Real>& grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Tensor<Real>(n.value.shape);
        return n.grad;
    }

    bool has_grad(Id id) const { return !nodes_[id].grad.data.empty(); }

    void record(std::function<void()> backward) { ops_.push_back(std::move(backward)); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    void backward(Id loss) {
        if (loss < 0 || loss >= static_cast<Id>(nodes_.size()))
            fail(ErrorCategory::invalid_argument, "loss tensor is not on the tape");
        if (nodes_[loss].value.numel() != 1)
            fail(ErrorCategory::invalid_argument, "backward requires a scalar loss");
        grad(loss).data[0] = Real(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

}  // namespace vgsn
