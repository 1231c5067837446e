#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace vgsn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) fail(ErrorCategory::invalid_argument, "tensor extent must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major n-dimensional array. The canonical image layout is
// (batch, height, width, channel).
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), Real(0)) {}

    Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
        if (shape_numel(shape) != data.size())
            fail(ErrorCategory::invalid_argument,
                 "value count " + std::to_string(data.size()) + " does not match shape " +
                     shape_to_string(shape));
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v)))
                fail(ErrorCategory::numeric, "non-finite value in tensor construction");
    }

    std::size_t numel() const { return data.size(); }

    int extent(std::size_t axis) const { return shape[axis]; }

    Real& at(std::size_t i) { return data[i]; }
    Real at(std::size_t i) const { return data[i]; }

    void fill(Real v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename Real>
Tensor<Real> tensor_from(Shape shape, std::vector<Real> values) {
    return Tensor<Real>(std::move(shape), std::move(values));
}

// i.i.d. standard-normal draws; bitwise reproducible per seed sequence.
template <typename Real>
Tensor<Real> seeded_normal(const Shape& shape, Rng& rng) {
    Tensor<Real> t(shape);
    for (auto& v : t.data) v = static_cast<Real>(rng.normal());
    return t;
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* where) {
    for (Real v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            fail(ErrorCategory::numeric, std::string("non-finite value produced by ") + where);
}

}  // namespace vgsn
