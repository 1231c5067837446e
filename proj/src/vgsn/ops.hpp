#pragma once

#include <algorithm>
#include <cmath>

#include "tape.hpp"

namespace vgsn {

enum class Padding { valid, same };
enum class Mode { train, eval };

struct ConvGeometry {
    int out;       // output spatial extent
    int pad_lead;  // pixels padded before index 0 (extra pixel goes to the end)
};

inline ConvGeometry conv_geometry(int in, int kernel, int stride, Padding pad) {
    if (pad == Padding::same) {
        int out = (in + stride - 1) / stride;
        int total = std::max((out - 1) * stride + kernel - in, 0);
        return {out, total / 2};
    }
    int out = (in - kernel) / stride + 1;
    if (out < 1)
        fail(ErrorCategory::invalid_argument, "conv2d valid padding yields empty output");
    return {out, 0};
}

// Transposed convolution with same padding maps H -> H*stride; its geometry is
// the adjoint of conv_geometry(H*stride, kernel, stride, same).
inline ConvGeometry conv_transpose_geometry(int in, int kernel, int stride) {
    int total = std::max(kernel - stride, 0);
    return {in * stride, total / 2};
}

namespace ops {

template <typename Real>
using Id = typename Tape<Real>::Id;

template <typename Real>
Id<Real> add(Tape<Real>& t, Id<Real> a, Id<Real> b) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (!va.same_shape(vb)) fail(ErrorCategory::invalid_argument, "add: shape mismatch");
    Tensor<Real> out(va.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + vb.data[i];
    check_finite(out, "add");
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, b, o] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            for (Id<Real> in : {a, b})
                if (t.requires_grad(in)) {
                    auto& gi = t.grad(in);
                    for (std::size_t i = 0; i < go.numel(); ++i) gi.data[i] += go.data[i];
                }
        });
    return o;
}

template <typename Real>
Id<Real> mul(Tape<Real>& t, Id<Real> a, Id<Real> b) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (!va.same_shape(vb)) fail(ErrorCategory::invalid_argument, "mul: shape mismatch");
    Tensor<Real> out(va.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * vb.data[i];
    check_finite(out, "mul");
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, b, o] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& va2 = t.value(a);
            const auto& vb2 = t.value(b);
            if (t.requires_grad(a)) {
                auto& ga = t.grad(a);
                for (std::size_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i] * vb2.data[i];
            }
            if (t.requires_grad(b)) {
                auto& gb = t.grad(b);
                for (std::size_t i = 0; i < go.numel(); ++i) gb.data[i] += go.data[i] * va2.data[i];
            }
        });
    return o;
}

template <typename Real>
Id<Real> scale(Tape<Real>& t, Id<Real> a, Real c) {
    const auto& va = t.value(a);
    Tensor<Real> out(va.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * c;
    check_finite(out, "scale");
    bool rg = t.requires_grad(a);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, o, c] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i] * c;
        });
    return o;
}

template <typename Real>
Id<Real> sum(Tape<Real>& t, Id<Real> a) {
    const auto& va = t.value(a);
    Real s = 0;
    for (Real v : va.data) s += v;
    Tensor<Real> out(Shape{1});
    out.data[0] = s;
    check_finite(out, "sum");
    bool rg = t.requires_grad(a);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, o] {
            if (!t.has_grad(o)) return;
            Real g = t.grad(o).data[0];
            auto& ga = t.grad(a);
            for (auto& v : ga.data) v += g;
        });
    return o;
}

template <typename Real>
Id<Real> reshape(Tape<Real>& t, Id<Real> a, Shape shape) {
    const auto& va = t.value(a);
    if (shape_numel(shape) != va.numel())
        fail(ErrorCategory::invalid_argument, "reshape: element count mismatch");
    Tensor<Real> out(std::move(shape), va.data);
    bool rg = t.requires_grad(a);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, o] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i];
        });
    return o;
}

template <typename Real>
Id<Real> relu(Tape<Real>& t, Id<Real> a) {
    const auto& va = t.value(a);
    Tensor<Real> out(va.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::max(va.data[i], Real(0));
    bool rg = t.requires_grad(a);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, o] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& va2 = t.value(a);
            auto& ga = t.grad(a);
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < go.numel(); ++i)
                if (va2.data[i] > Real(0)) ga.data[i] += go.data[i];
        });
    return o;
}

template <typename Real>
Id<Real> sigmoid(Tape<Real>& t, Id<Real> a) {
    const auto& va = t.value(a);
    Tensor<Real> out(va.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        Real x = va.data[i];
        Real y = x >= 0 ? Real(1) / (Real(1) + std::exp(-x))
                        : std::exp(x) / (Real(1) + std::exp(x));
        // keep the range strictly open even where exp underflows
        if (y >= Real(1)) y = std::nextafter(Real(1), Real(0));
        if (y <= Real(0)) y = std::nextafter(Real(0), Real(1));
        out.data[i] = y;
    }
    check_finite(out, "sigmoid");
    bool rg = t.requires_grad(a);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, a, o] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& vo = t.value(o);
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i)
                ga.data[i] += go.data[i] * vo.data[i] * (Real(1) - vo.data[i]);
        });
    return o;
}

// x [B,in] * w [in,out] + bias [out]
template <typename Real>
Id<Real> dense(Tape<Real>& t, Id<Real> x, Id<Real> w, Id<Real> bias) {
    const auto& vx = t.value(x);
    const auto& vw = t.value(w);
    const auto& vb = t.value(bias);
    if (vx.shape.size() != 2 || vw.shape.size() != 2 || vb.shape.size() != 1 ||
        vx.shape[1] != vw.shape[0] || vw.shape[1] != vb.shape[0])
        fail(ErrorCategory::invalid_argument,
             "dense: shape mismatch " + shape_to_string(vx.shape) + " x " +
                 shape_to_string(vw.shape));
    int B = vx.shape[0], in = vx.shape[1], out_n = vw.shape[1];
    Tensor<Real> out(Shape{B, out_n});
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < out_n; ++j) {
            Real acc = vb.data[j];
            for (int i = 0; i < in; ++i) acc += vx.data[b * in + i] * vw.data[i * out_n + j];
            out.data[b * out_n + j] = acc;
        }
    check_finite(out, "dense");
    bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(bias);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, x, w, bias, o, B, in, out_n] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& vx2 = t.value(x);
            const auto& vw2 = t.value(w);
            if (t.requires_grad(x)) {
                auto& gx = t.grad(x);
                for (int b = 0; b < B; ++b)
                    for (int i = 0; i < in; ++i) {
                        Real acc = 0;
                        for (int j = 0; j < out_n; ++j)
                            acc += go.data[b * out_n + j] * vw2.data[i * out_n + j];
                        gx.data[b * in + i] += acc;
                    }
            }
            if (t.requires_grad(w)) {
                auto& gw = t.grad(w);
                for (int b = 0; b < B; ++b)
                    for (int i = 0; i < in; ++i) {
                        Real xv = vx2.data[b * in + i];
                        for (int j = 0; j < out_n; ++j)
                            gw.data[i * out_n + j] += xv * go.data[b * out_n + j];
                    }
            }
            if (t.requires_grad(bias)) {
                auto& gb = t.grad(bias);
                for (int b = 0; b < B; ++b)
                    for (int j = 0; j < out_n; ++j) gb.data[j] += go.data[b * out_n + j];
            }
        });
    return o;
}

// Cross-correlation (no kernel flip). x [B,H,W,Cin], k [kh,kw,Cin,Cout], bias [Cout].
template <typename Real>
Id<Real> conv2d(Tape<Real>& t, Id<Real> x, Id<Real> k, Id<Real> bias, int stride, Padding pad) {
    const auto& vx = t.value(x);
    const auto& vk = t.value(k);
    const auto& vb = t.value(bias);
    if (vx.shape.size() != 4 || vk.shape.size() != 4)
        fail(ErrorCategory::invalid_argument, "conv2d: rank-4 tensors required");
    int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], Cin = vx.shape[3];
    int kh = vk.shape[0], kw = vk.shape[1], Cout = vk.shape[3];
    if (vk.shape[2] != Cin)
        fail(ErrorCategory::invalid_argument, "conv2d: channel mismatch, input has " +
                                                  std::to_string(Cin) + " kernel expects " +
                                                  std::to_string(vk.shape[2]));
    if (vb.shape != Shape{Cout}) fail(ErrorCategory::invalid_argument, "conv2d: bias shape");
    auto gh = conv_geometry(H, kh, stride, pad);
    auto gw_ = conv_geometry(W, kw, stride, pad);
    Tensor<Real> out(Shape{B, gh.out, gw_.out, Cout});
    for (int b = 0; b < B; ++b)
        for (int oh = 0; oh < gh.out; ++oh)
            for (int ow = 0; ow < gw_.out; ++ow) {
                Real* op = &out.data[((static_cast<std::size_t>(b) * gh.out + oh) * gw_.out + ow) *
                                     Cout];
                for (int co = 0; co < Cout; ++co) op[co] = vb.data[co];
                for (int i = 0; i < kh; ++i) {
                    int y = oh * stride + i - gh.pad_lead;
                    if (y < 0 || y >= H) continue;
                    for (int j = 0; j < kw; ++j) {
                        int xx = ow * stride + j - gw_.pad_lead;
                        if (xx < 0 || xx >= W) continue;
                        const Real* ip =
                            &vx.data[((static_cast<std::size_t>(b) * H + y) * W + xx) * Cin];
                        const Real* kp = &vk.data[(static_cast<std::size_t>(i) * kw + j) * Cin *
                                                  Cout];
                        for (int ci = 0; ci < Cin; ++ci) {
                            Real xv = ip[ci];
                            for (int co = 0; co < Cout; ++co) op[co] += xv * kp[ci * Cout + co];
                        }
                    }
                }
            }
    check_finite(out, "conv2d");
    bool rg = t.requires_grad(x) || t.requires_grad(k) || t.requires_grad(bias);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, x, k, bias, o, B, H, W, Cin, kh, kw, Cout, stride, gh, gw_] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& vx2 = t.value(x);
            const auto& vk2 = t.value(k);
            bool need_x = t.requires_grad(x), need_k = t.requires_grad(k);
            for (int b = 0; b < B; ++b)
                for (int oh = 0; oh < gh.out; ++oh)
                    for (int ow = 0; ow < gw_.out; ++ow) {
                        const Real* gop =
                            &go.data[((static_cast<std::size_t>(b) * gh.out + oh) * gw_.out + ow) *
                                     Cout];
                        for (int i = 0; i < kh; ++i) {
                            int y = oh * stride + i - gh.pad_lead;
                            if (y < 0 || y >= H) continue;
                            for (int j = 0; j < kw; ++j) {
                                int xx = ow * stride + j - gw_.pad_lead;
                                if (xx < 0 || xx >= W) continue;
                                std::size_t xoff =
                                    ((static_cast<std::size_t>(b) * H + y) * W + xx) * Cin;
                                std::size_t koff =
                                    (static_cast<std::size_t>(i) * kw + j) * Cin * Cout;
                                if (need_x) {
                                    auto& gx = t.grad(x);
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        Real acc = 0;
                                        for (int co = 0; co < Cout; ++co)
                                            acc += gop[co] * vk2.data[koff + ci * Cout + co];
                                        gx.data[xoff + ci] += acc;
                                    }
                                }
                                if (need_k) {
                                    auto& gk = t.grad(k);
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        Real xv = vx2.data[xoff + ci];
                                        for (int co = 0; co < Cout; ++co)
                                            gk.data[koff + ci * Cout + co] += xv * gop[co];
                                    }
                                }
                            }
                        }
                    }
            if (t.requires_grad(bias)) {
                auto& gb = t.grad(bias);
                std::size_t n = go.numel() / Cout;
                for (std::size_t p = 0; p < n; ++p)
                    for (int co = 0; co < Cout; ++co) gb.data[co] += go.data[p * Cout + co];
            }
        });
    return o;
}

// Scatter-add transposed convolution, same padding; H -> H*stride.
// x [B,H,W,Cin], k [kh,kw,Cin,Cout], bias [Cout].
template <typename Real>
Id<Real> conv_transpose2d(Tape<Real>& t, Id<Real> x, Id<Real> k, Id<Real> bias, int stride) {
    const auto& vx = t.value(x);
    const auto& vk = t.value(k);
    const auto& vb = t.value(bias);
    if (vx.shape.size() != 4 || vk.shape.size() != 4)
        fail(ErrorCategory::invalid_argument, "conv_transpose2d: rank-4 tensors required");
    int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], Cin = vx.shape[3];
    int kh = vk.shape[0], kw = vk.shape[1], Cout = vk.shape[3];
    if (vk.shape[2] != Cin)
        fail(ErrorCategory::invalid_argument, "conv_transpose2d: channel mismatch");
    if (vb.shape != Shape{Cout})
        fail(ErrorCategory::invalid_argument, "conv_transpose2d: bias shape");
    auto gh = conv_transpose_geometry(H, kh, stride);
    auto gw_ = conv_transpose_geometry(W, kw, stride);
    Tensor<Real> out(Shape{B, gh.out, gw_.out, Cout});
    for (std::size_t p = 0; p < out.numel() / Cout; ++p)
        for (int co = 0; co < Cout; ++co) out.data[p * Cout + co] = vb.data[co];
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const Real* ip = &vx.data[((static_cast<std::size_t>(b) * H + h) * W + w) * Cin];
                for (int i = 0; i < kh; ++i) {
                    int y = h * stride + i - gh.pad_lead;
                    if (y < 0 || y >= gh.out) continue;
                    for (int j = 0; j < kw; ++j) {
                        int xx = w * stride + j - gw_.pad_lead;
                        if (xx < 0 || xx >= gw_.out) continue;
                        Real* op = &out.data[((static_cast<std::size_t>(b) * gh.out + y) * gw_.out +
                                              xx) *
                                             Cout];
                        const Real* kp =
                            &vk.data[(static_cast<std::size_t>(i) * kw + j) * Cin * Cout];
                        for (int ci = 0; ci < Cin; ++ci) {
                            Real xv = ip[ci];
                            for (int co = 0; co < Cout; ++co) op[co] += xv * kp[ci * Cout + co];
                        }
                    }
                }
            }
    check_finite(out, "conv_transpose2d");
    bool rg = t.requires_grad(x) || t.requires_grad(k) || t.requires_grad(bias);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, x, k, bias, o, B, H, W, Cin, kh, kw, Cout, stride, gh, gw_] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& vx2 = t.value(x);
            const auto& vk2 = t.value(k);
            bool need_x = t.requires_grad(x), need_k = t.requires_grad(k);
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        std::size_t xoff = ((static_cast<std::size_t>(b) * H + h) * W + w) * Cin;
                        for (int i = 0; i < kh; ++i) {
                            int y = h * stride + i - gh.pad_lead;
                            if (y < 0 || y >= gh.out) continue;
                            for (int j = 0; j < kw; ++j) {
                                int xx = w * stride + j - gw_.pad_lead;
                                if (xx < 0 || xx >= gw_.out) continue;
                                const Real* gop =
                                    &go.data[((static_cast<std::size_t>(b) * gh.out + y) * gw_.out +
                                              xx) *
                                             Cout];
                                std::size_t koff =
                                    (static_cast<std::size_t>(i) * kw + j) * Cin * Cout;
                                if (need_x) {
                                    auto& gx = t.grad(x);
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        Real acc = 0;
                                        for (int co = 0; co < Cout; ++co)
                                            acc += gop[co] * vk2.data[koff + ci * Cout + co];
                                        gx.data[xoff + ci] += acc;
                                    }
                                }
                                if (need_k) {
                                    auto& gk = t.grad(k);
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        Real xv = vx2.data[xoff + ci];
                                        for (int co = 0; co < Cout; ++co)
                                            gk.data[koff + ci * Cout + co] += xv * gop[co];
                                    }
                                }
                            }
                        }
                    }
            if (t.requires_grad(bias)) {
                auto& gb = t.grad(bias);
                std::size_t n = go.numel() / Cout;
                for (std::size_t p = 0; p < n; ++p)
                    for (int co = 0; co < Cout; ++co) gb.data[co] += go.data[p * Cout + co];
            }
        });
    return o;
}

// Batch normalization over (B,H,W) per channel. Train mode uses batch
// statistics (biased variance) and updates the running buffers in place:
// running = momentum * running + (1 - momentum) * batch.
template <typename Real>
Id<Real> batchnorm(Tape<Real>& t, Id<Real> x, Id<Real> gamma, Id<Real> beta,
                   Tensor<Real>* running_mean, Tensor<Real>* running_var, Real momentum,
                   Real epsilon, Mode mode) {
    const auto& vx = t.value(x);
    if (vx.shape.size() != 4) fail(ErrorCategory::invalid_argument, "batchnorm: rank-4 input");
    int B = vx.shape[0], H = vx.shape[1], W = vx.shape[2], C = vx.shape[3];
    std::size_t N = static_cast<std::size_t>(B) * H * W;
    if (mode == Mode::train && N < 2)
        fail(ErrorCategory::invalid_argument, "batchnorm: train mode needs at least 2 values per channel");
    const auto& vg = t.value(gamma);
    const auto& vbeta = t.value(beta);
    if (vg.shape != Shape{C} || vbeta.shape != Shape{C})
        fail(ErrorCategory::invalid_argument, "batchnorm: gamma/beta shape mismatch");

    Tensor<Real> mean(Shape{C}), var(Shape{C});
    if (mode == Mode::train) {
        for (std::size_t p = 0; p < N; ++p)
            for (int c = 0; c < C; ++c) mean.data[c] += vx.data[p * C + c];
        for (int c = 0; c < C; ++c) mean.data[c] /= static_cast<Real>(N);
        for (std::size_t p = 0; p < N; ++p)
            for (int c = 0; c < C; ++c) {
                Real d = vx.data[p * C + c] - mean.data[c];
                var.data[c] += d * d;
            }
        for (int c = 0; c < C; ++c) var.data[c] /= static_cast<Real>(N);
        if (running_mean && running_var)
            for (int c = 0; c < C; ++c) {
                running_mean->data[c] =
                    momentum * running_mean->data[c] + (Real(1) - momentum) * mean.data[c];
                running_var->data[c] =
                    momentum * running_var->data[c] + (Real(1) - momentum) * var.data[c];
            }
    } else {
        mean = *running_mean;
        var = *running_var;
    }

    Tensor<Real> inv_std(Shape{C});
    for (int c = 0; c < C; ++c) inv_std.data[c] = Real(1) / std::sqrt(var.data[c] + epsilon);
    Tensor<Real> xhat(vx.shape);
    Tensor<Real> out(vx.shape);
    for (std::size_t p = 0; p < N; ++p)
        for (int c = 0; c < C; ++c) {
            Real xh = (vx.data[p * C + c] - mean.data[c]) * inv_std.data[c];
            xhat.data[p * C + c] = xh;
            out.data[p * C + c] = vg.data[c] * xh + vbeta.data[c];
        }
    check_finite(out, "batchnorm");
    bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, x, gamma, beta, o, C, N, mode, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            const auto& vg2 = t.value(gamma);
            if (t.requires_grad(gamma)) {
                auto& gg = t.grad(gamma);
                for (std::size_t p = 0; p < N; ++p)
                    for (int c = 0; c < C; ++c)
                        gg.data[c] += go.data[p * C + c] * xhat.data[p * C + c];
            }
            if (t.requires_grad(beta)) {
                auto& gb = t.grad(beta);
                for (std::size_t p = 0; p < N; ++p)
                    for (int c = 0; c < C; ++c) gb.data[c] += go.data[p * C + c];
            }
            if (t.requires_grad(x)) {
                auto& gx = t.grad(x);
                if (mode == Mode::eval) {
                    for (std::size_t p = 0; p < N; ++p)
                        for (int c = 0; c < C; ++c)
                            gx.data[p * C + c] += go.data[p * C + c] * vg2.data[c] * inv_std.data[c];
                } else {
                    std::vector<Real> sum_go(C, Real(0)), sum_go_xhat(C, Real(0));
                    for (std::size_t p = 0; p < N; ++p)
                        for (int c = 0; c < C; ++c) {
                            sum_go[c] += go.data[p * C + c];
                            sum_go_xhat[c] += go.data[p * C + c] * xhat.data[p * C + c];
                        }
                    Real n = static_cast<Real>(N);
                    for (std::size_t p = 0; p < N; ++p)
                        for (int c = 0; c < C; ++c) {
                            Real term = go.data[p * C + c] - sum_go[c] / n -
                                        xhat.data[p * C + c] * sum_go_xhat[c] / n;
                            gx.data[p * C + c] += vg2.data[c] * inv_std.data[c] * term;
                        }
                }
            }
        });
    return o;
}

// Mean over all elements of (prediction - target)^2.
template <typename Real>
Id<Real> mse_loss(Tape<Real>& t, Id<Real> pred, Id<Real> target) {
    const auto& vp = t.value(pred);
    const auto& vt = t.value(target);
    if (!vp.same_shape(vt)) fail(ErrorCategory::invalid_argument, "mse_loss: shape mismatch");
    Real acc = 0;
    for (std::size_t i = 0; i < vp.numel(); ++i) {
        Real d = vp.data[i] - vt.data[i];
        acc += d * d;
    }
    Tensor<Real> out(Shape{1});
    out.data[0] = acc / static_cast<Real>(vp.numel());
    check_finite(out, "mse_loss");
    bool rg = t.requires_grad(pred) || t.requires_grad(target);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, pred, target, o] {
            if (!t.has_grad(o)) return;
            Real g = t.grad(o).data[0];
            const auto& vp2 = t.value(pred);
            const auto& vt2 = t.value(target);
            Real scale = Real(2) / static_cast<Real>(vp2.numel());
            if (t.requires_grad(pred)) {
                auto& gp = t.grad(pred);
                for (std::size_t i = 0; i < vp2.numel(); ++i)
                    gp.data[i] += g * scale * (vp2.data[i] - vt2.data[i]);
            }
            if (t.requires_grad(target)) {
                auto& gt = t.grad(target);
                for (std::size_t i = 0; i < vp2.numel(); ++i)
                    gt.data[i] -= g * scale * (vp2.data[i] - vt2.data[i]);
            }
        });
    return o;
}

// z = mu + exp(sigma) * phi(eps), phi(e) = exp(-e^2/2) / sqrt(2*pi).
// eps is a constant draw; gradients flow through mu and sigma only.
template <typename Real>
Id<Real> sample_latent(Tape<Real>& t, Id<Real> mu, Id<Real> sigma, Id<Real> eps) {
    const auto& vm = t.value(mu);
    const auto& vs = t.value(sigma);
    const auto& ve = t.value(eps);
    if (!vm.same_shape(vs) || !vm.same_shape(ve))
        fail(ErrorCategory::invalid_argument, "sample_latent: shape mismatch");
    const Real inv_sqrt_2pi = Real(0.3989422804014326779399460599343818684758586311649346576659258296L);
    Tensor<Real> out(vm.shape);
    Tensor<Real> scale_buf(vm.shape);  // exp(sigma) * phi(eps), reused in backward
    for (std::size_t i = 0; i < out.numel(); ++i) {
        Real phi = inv_sqrt_2pi * std::exp(-ve.data[i] * ve.data[i] / Real(2));
        scale_buf.data[i] = std::exp(vs.data[i]) * phi;
        out.data[i] = vm.data[i] + scale_buf.data[i];
    }
    check_finite(out, "sample_latent");
    bool rg = t.requires_grad(mu) || t.requires_grad(sigma);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, mu, sigma, o, scale_buf = std::move(scale_buf)] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            if (t.requires_grad(mu)) {
                auto& gm = t.grad(mu);
                for (std::size_t i = 0; i < go.numel(); ++i) gm.data[i] += go.data[i];
            }
            if (t.requires_grad(sigma)) {
                auto& gs = t.grad(sigma);
                for (std::size_t i = 0; i < go.numel(); ++i)
                    gs.data[i] += go.data[i] * scale_buf.data[i];
            }
        });
    return o;
}

// Gaussian-prior KL term 0.5 * mean(mu^2 + exp(2*sigma) - 2*sigma - 1).
// Off by default in training; exposed for experimentation.
template <typename Real>
Id<Real> kl_loss(Tape<Real>& t, Id<Real> mu, Id<Real> sigma) {
    const auto& vm = t.value(mu);
    const auto& vs = t.value(sigma);
    if (!vm.same_shape(vs)) fail(ErrorCategory::invalid_argument, "kl_loss: shape mismatch");
    Real acc = 0;
    for (std::size_t i = 0; i < vm.numel(); ++i)
        acc += vm.data[i] * vm.data[i] + std::exp(Real(2) * vs.data[i]) -
               Real(2) * vs.data[i] - Real(1);
    Tensor<Real> out(Shape{1});
    out.data[0] = acc / (Real(2) * static_cast<Real>(vm.numel()));
    check_finite(out, "kl_loss");
    bool rg = t.requires_grad(mu) || t.requires_grad(sigma);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, mu, sigma, o] {
            if (!t.has_grad(o)) return;
            Real g = t.grad(o).data[0];
            const auto& vm2 = t.value(mu);
            const auto& vs2 = t.value(sigma);
            Real n = static_cast<Real>(vm2.numel());
            if (t.requires_grad(mu)) {
                auto& gm = t.grad(mu);
                for (std::size_t i = 0; i < vm2.numel(); ++i)
                    gm.data[i] += g * vm2.data[i] / n;
            }
            if (t.requires_grad(sigma)) {
                auto& gs = t.grad(sigma);
                for (std::size_t i = 0; i < vs2.numel(); ++i)
                    gs.data[i] += g * (std::exp(Real(2) * vs2.data[i]) - Real(1)) / n;
            }
        });
    return o;
}

// Tiles [B*g*g, t, t, c] laid out row-major in grid order -> image [B, g*t, g*t, c].
template <typename Real>
Id<Real> assemble_tiles(Tape<Real>& t, Id<Real> tiles, int B, int g) {
    const auto& vt = t.value(tiles);
    if (vt.shape.size() != 4 || vt.shape[0] != B * g * g || vt.shape[1] != vt.shape[2])
        fail(ErrorCategory::invalid_argument, "assemble_tiles: geometry mismatch");
    int ts = vt.shape[1], C = vt.shape[3];
    int H = g * ts;
    Tensor<Real> out(Shape{B, H, H, C});
    for (int b = 0; b < B; ++b)
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                std::size_t tile = (static_cast<std::size_t>(b) * g + gy) * g + gx;
                for (int ty = 0; ty < ts; ++ty)
                    for (int tx = 0; tx < ts; ++tx) {
                        std::size_t src = ((tile * ts + ty) * ts + tx) * C;
                        std::size_t dst =
                            ((static_cast<std::size_t>(b) * H + gy * ts + ty) * H + gx * ts + tx) *
                            C;
                        for (int c = 0; c < C; ++c) out.data[dst + c] = vt.data[src + c];
                    }
            }
    bool rg = t.requires_grad(tiles);
    Id<Real> o = t.push(std::move(out), rg);
    if (rg)
        t.record([&t, tiles, o, B, g, ts, C, H] {
            if (!t.has_grad(o)) return;
            const auto& go = t.grad(o);
            auto& gt = t.grad(tiles);
            for (int b = 0; b < B; ++b)
                for (int gy = 0; gy < g; ++gy)
                    for (int gx = 0; gx < g; ++gx) {
                        std::size_t tile = (static_cast<std::size_t>(b) * g + gy) * g + gx;
                        for (int ty = 0; ty < ts; ++ty)
                            for (int tx = 0; tx < ts; ++tx) {
                                std::size_t src = ((tile * ts + ty) * ts + tx) * C;
                                std::size_t dst = ((static_cast<std::size_t>(b) * H + gy * ts + ty) *
                                                       H +
                                                   gx * ts + tx) *
                                                  C;
                                for (int c = 0; c < C; ++c) gt.data[src + c] += go.data[dst + c];
                            }
                    }
        });
    return o;
}

}  // namespace ops

// Plain inverse of assemble_tiles for tests and tooling.
template <typename Real>
Tensor<Real> split_tiles(const Tensor<Real>& image, int g) {
    int B = image.shape[0], H = image.shape[1], C = image.shape[3];
    if (H % g != 0) fail(ErrorCategory::invalid_argument, "split_tiles: size not divisible by grid");
    int ts = H / g;
    Tensor<Real> out(Shape{B * g * g, ts, ts, C});
    for (int b = 0; b < B; ++b)
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                std::size_t tile = (static_cast<std::size_t>(b) * g + gy) * g + gx;
                for (int ty = 0; ty < ts; ++ty)
                    for (int tx = 0; tx < ts; ++tx) {
                        std::size_t dst = ((tile * ts + ty) * ts + tx) * C;
                        std::size_t src =
                            ((static_cast<std::size_t>(b) * H + gy * ts + ty) * H + gx * ts + tx) *
                            C;
                        for (int c = 0; c < C; ++c) out.data[dst + c] = image.data[src + c];
                    }
            }
    return out;
}

}  // namespace vgsn
