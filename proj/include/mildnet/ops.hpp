#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mildnet/rng.hpp"
#include "mildnet/tensor.hpp"

// Forward ops of the network plus their reverse-mode gradients. Convolution
// is lowered to im2col + sgemm; the column buffer is rebuilt in the backward
// pass instead of being captured, trading FLOPs for memory.

namespace mild {

struct ConvParams {
    TensorPtr kernel;  // (out_ch, in_ch, kh, kw)
    TensorPtr bias;    // (out_ch)
    int stride = 1;
    int dilation_rate = 1;
};

namespace detail {

inline void require_4d(const TensorPtr& t, const char* who) {
    if (t->shape.size() != 4) throw ConfigError(std::string(who) + ": expected 4-d tensor, got " + shape_str(t->shape));
}

struct ConvGeom {
    int n, cin, h, w;
    int cout, kh, kw, stride, dil;
    int oh, ow;
    int pad_top, pad_left;
    int k;  // cin*kh*kw
};

inline ConvGeom conv_geometry(const Tensor& x, const ConvParams& p) {
    ConvGeom g;
    g.n = x.shape[0];
    g.cin = x.shape[1];
    g.h = x.shape[2];
    g.w = x.shape[3];
    g.cout = p.kernel->shape[0];
    g.kh = p.kernel->shape[2];
    g.kw = p.kernel->shape[3];
    g.stride = p.stride;
    g.dil = p.dilation_rate;
    g.oh = (g.h + g.stride - 1) / g.stride;
    g.ow = (g.w + g.stride - 1) / g.stride;
    int ekh = g.kh + (g.kh - 1) * (g.dil - 1);
    int ekw = g.kw + (g.kw - 1) * (g.dil - 1);
    int pad_h = std::max((g.oh - 1) * g.stride + ekh - g.h, 0);
    int pad_w = std::max((g.ow - 1) * g.stride + ekw - g.w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
    g.k = g.cin * g.kh * g.kw;
    return g;
}

// col is (cin*kh*kw) x (oh*ow), row-major, for one batch sample.
inline void im2col(const float* x, const ConvGeom& g, float* col) {
    const int hw = g.oh * g.ow;
    for (int ci = 0; ci < g.cin; ++ci) {
        const float* xc = x + static_cast<size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                float* row = col + (static_cast<size_t>(ci) * g.kh * g.kw + ky * g.kw + kx) * hw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad_top + ky * g.dil;
                    float* dst = row + static_cast<size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0f);
                        continue;
                    }
                    const float* src = xc + static_cast<size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.stride - g.pad_left + kx * g.dil;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// scatter-add transpose of im2col
inline void col2im_add(const float* col, const ConvGeom& g, float* dx) {
    const int hw = g.oh * g.ow;
    for (int ci = 0; ci < g.cin; ++ci) {
        float* xc = dx + static_cast<size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const float* row = col + (static_cast<size_t>(ci) * g.kh * g.kw + ky * g.kw + kx) * hw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad_top + ky * g.dil;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* src = row + static_cast<size_t>(oy) * g.ow;
                    float* dst = xc + static_cast<size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.stride - g.pad_left + kx * g.dil;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline TensorPtr op_output(std::vector<int> shape, std::vector<TensorPtr> parents, const std::string& op) {
    auto out = make_tensor(std::move(shape));
    out->parents = std::move(parents);
    out->op = op;
    for (auto& p : out->parents)
        if (p->requires_grad) out->requires_grad = true;
    return out;
}

inline void add_into_grad(const TensorPtr& t, const std::vector<float>& g) {
    t->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
}

}  // namespace detail

// --- convolution ------------------------------------------------------------

// "same" zero padding; output spatial extents are ceil(H/stride), ceil(W/stride).
inline TensorPtr conv2d(const TensorPtr& x, const ConvParams& p, const std::string& name = "conv2d") {
    detail::require_4d(x, "conv2d");
    if (p.kernel->shape.size() != 4) throw ConfigError(name + ": kernel must be 4-d");
    if (p.stride < 1 || p.dilation_rate < 1) throw ConfigError(name + ": stride and dilation_rate must be >= 1");
    if (x->shape[1] != p.kernel->shape[1])
        throw ConfigError(name + ": input channels " + std::to_string(x->shape[1]) + " != kernel in_ch " +
                          std::to_string(p.kernel->shape[1]));
    if (p.bias && p.bias->numel() != static_cast<size_t>(p.kernel->shape[0]))
        throw ConfigError(name + ": bias size != out_ch");

    detail::ConvGeom g = detail::conv_geometry(*x, p);
    auto out = detail::op_output({g.n, g.cout, g.oh, g.ow},
                                 p.bias ? std::vector<TensorPtr>{x, p.kernel, p.bias} : std::vector<TensorPtr>{x, p.kernel},
                                 name);

    const int hw = g.oh * g.ow;
    std::vector<float> col(static_cast<size_t>(g.k) * hw);
    for (int n = 0; n < g.n; ++n) {
        const float* xn = x->data.data() + static_cast<size_t>(n) * g.cin * g.h * g.w;
        float* yn = out->data.data() + static_cast<size_t>(n) * g.cout * hw;
        detail::im2col(xn, g, col.data());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.cout, hw, g.k, 1.0f, p.kernel->data.data(), g.k,
                    col.data(), hw, 0.0f, yn, hw);
        if (p.bias) {
            for (int co = 0; co < g.cout; ++co) {
                float b = p.bias->data[static_cast<size_t>(co)];
                float* row = yn + static_cast<size_t>(co) * hw;
                for (int i = 0; i < hw; ++i) row[i] += b;
            }
        }
    }
    check_finite(*out, name);

    if (out->requires_grad) {
        TensorPtr xp = x, kp = p.kernel, bp = p.bias;
        out->backward_fn = [xp, kp, bp, g](Tensor& node) {
            const int hw = g.oh * g.ow;
            const bool need_dx = xp->requires_grad;
            const bool need_dw = kp->requires_grad;
            const bool need_db = bp && bp->requires_grad;
            if (need_dx) xp->ensure_grad();
            if (need_dw) kp->ensure_grad();
            if (need_db) bp->ensure_grad();
            std::vector<float> col((need_dx || need_dw) ? static_cast<size_t>(g.k) * hw : 0);
            std::vector<float> dcol(need_dx ? static_cast<size_t>(g.k) * hw : 0);
            for (int n = 0; n < g.n; ++n) {
                const float* dyn = node.grad.data() + static_cast<size_t>(n) * g.cout * hw;
                if (need_db) {
                    for (int co = 0; co < g.cout; ++co) {
                        double s = 0.0;
                        const float* row = dyn + static_cast<size_t>(co) * hw;
                        for (int i = 0; i < hw; ++i) s += row[i];
                        bp->grad[static_cast<size_t>(co)] += static_cast<float>(s);
                    }
                }
                if (need_dw) {
                    const float* xn = xp->data.data() + static_cast<size_t>(n) * g.cin * g.h * g.w;
                    detail::im2col(xn, g, col.data());
                    // dW += dY * col^T
                    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.cout, g.k, hw, 1.0f, dyn, hw, col.data(),
                                hw, 1.0f, kp->grad.data(), g.k);
                }
                if (need_dx) {
                    // dcol = W^T * dY, then scatter back
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, g.k, hw, g.cout, 1.0f, kp->data.data(), g.k,
                                dyn, hw, 0.0f, dcol.data(), hw);
                    detail::col2im_add(dcol.data(), g, xp->grad.data() + static_cast<size_t>(n) * g.cin * g.h * g.w);
                }
            }
        };
    }
    return out;
}

// --- pooling and resampling -------------------------------------------------

// 2x2/stride-2 max pooling; odd extents are handled by replicating the last
// row/column. Gradient routes to the argmax position (first in scan order on ties).
inline TensorPtr maxpool2x(const TensorPtr& x) {
    detail::require_4d(x, "maxpool2x");
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;
    auto out = detail::op_output({n, c, oh, ow}, {x}, "maxpool2x");

    std::vector<uint32_t> argmax(out->numel());
    size_t o = 0;
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const size_t base = (static_cast<size_t>(b) * c + ci) * h * w;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    uint32_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            int iy = std::min(oy * 2 + dy, h - 1);  // replicate pad
                            int ix = std::min(ox * 2 + dx, w - 1);
                            size_t idx = base + static_cast<size_t>(iy) * w + ix;
                            if (x->data[idx] > best) {
                                best = x->data[idx];
                                best_idx = static_cast<uint32_t>(idx);
                            }
                        }
                    out->data[o] = best;
                    argmax[o] = best_idx;
                }
        }
    check_finite(*out, "maxpool2x");

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, argmax = std::move(argmax)](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) xp->grad[argmax[i]] += node.grad[i];
        };
    }
    return out;
}

namespace detail {

struct LinTap {
    int a, b;
    float fb;  // out = (1-fb)*x[a] + fb*x[b]
};

inline std::vector<LinTap> linear_taps(int in, int out) {
    std::vector<LinTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double s = (o + 0.5) * scale - 0.5;
        int a = static_cast<int>(std::floor(s));
        double f = s - a;
        int b = a + 1;
        a = std::clamp(a, 0, in - 1);
        b = std::clamp(b, 0, in - 1);
        taps[static_cast<size_t>(o)] = {a, b, static_cast<float>(f)};
    }
    return taps;
}

}  // namespace detail

// Bilinear resize with half-pixel alignment and edge clamping; differentiable.
inline TensorPtr bilinear_resize(const TensorPtr& x, int out_h, int out_w) {
    detail::require_4d(x, "bilinear_resize");
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: output extents must be >= 1");
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    auto ty = detail::linear_taps(h, out_h);
    auto tx = detail::linear_taps(w, out_w);
    auto out = detail::op_output({n, c, out_h, out_w}, {x}, "bilinear_resize");

    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const float* src = x->data.data() + (static_cast<size_t>(b) * c + ci) * h * w;
            float* dst = out->data.data() + (static_cast<size_t>(b) * c + ci) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& fy = ty[static_cast<size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& fx = tx[static_cast<size_t>(ox)];
                    float top = src[fy.a * w + fx.a] * (1 - fx.fb) + src[fy.a * w + fx.b] * fx.fb;
                    float bot = src[fy.b * w + fx.a] * (1 - fx.fb) + src[fy.b * w + fx.b] * fx.fb;
                    dst[oy * out_w + ox] = top * (1 - fy.fb) + bot * fy.fb;
                }
            }
        }
    check_finite(*out, "bilinear_resize");

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, ty = std::move(ty), tx = std::move(tx), h, w, out_h, out_w, c](Tensor& node) {
            xp->ensure_grad();
            const int n = xp->shape[0];
            for (int b = 0; b < n; ++b)
                for (int ci = 0; ci < c; ++ci) {
                    float* dsrc = xp->grad.data() + (static_cast<size_t>(b) * c + ci) * h * w;
                    const float* dy = node.grad.data() + (static_cast<size_t>(b) * c + ci) * out_h * out_w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const auto& fy = ty[static_cast<size_t>(oy)];
                        for (int ox = 0; ox < out_w; ++ox) {
                            const auto& fx = tx[static_cast<size_t>(ox)];
                            float gv = dy[oy * out_w + ox];
                            dsrc[fy.a * w + fx.a] += gv * (1 - fy.fb) * (1 - fx.fb);
                            dsrc[fy.a * w + fx.b] += gv * (1 - fy.fb) * fx.fb;
                            dsrc[fy.b * w + fx.a] += gv * fy.fb * (1 - fx.fb);
                            dsrc[fy.b * w + fx.b] += gv * fy.fb * fx.fb;
                        }
                    }
                }
        };
    }
    return out;
}

inline TensorPtr upsample2x(const TensorPtr& x) {
    return bilinear_resize(x, x->shape[2] * 2, x->shape[3] * 2);
}

namespace detail {

// Catmull-Rom weight, a = -0.5
inline double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

struct CubicTap {
    int idx[4];
    float w[4];
};

inline std::vector<CubicTap> cubic_taps(int in, int out) {
    std::vector<CubicTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double s = (o + 0.5) * scale - 0.5;
        int base = static_cast<int>(std::floor(s));
        double f = s - base;
        CubicTap t;
        for (int k = -1; k <= 2; ++k) {
            t.idx[k + 1] = std::clamp(base + k, 0, in - 1);
            t.w[k + 1] = static_cast<float>(cubic_weight(f - k));
        }
        taps[static_cast<size_t>(o)] = t;
    }
    return taps;
}

}  // namespace detail

// Catmull-Rom bicubic resize (separable, edge clamped). Used to down-sample
// the raw input image, which never carries gradients.
inline TensorPtr bicubic_resize(const TensorPtr& x, int out_h, int out_w) {
    detail::require_4d(x, "bicubic_resize");
    if (out_h < 1 || out_w < 1) throw ConfigError("bicubic_resize: output extents must be >= 1");
    if (x->requires_grad) throw ConfigError("bicubic_resize has no gradient; input must not require one");
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    auto ty = detail::cubic_taps(h, out_h);
    auto tx = detail::cubic_taps(w, out_w);
    auto out = make_tensor({n, c, out_h, out_w});
    out->op = "bicubic_resize";

    std::vector<float> tmp(static_cast<size_t>(h) * out_w);
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const float* src = x->data.data() + (static_cast<size_t>(b) * c + ci) * h * w;
            float* dst = out->data.data() + (static_cast<size_t>(b) * c + ci) * out_h * out_w;
            for (int y = 0; y < h; ++y)
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& t = tx[static_cast<size_t>(ox)];
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k) acc += static_cast<double>(t.w[k]) * src[y * w + t.idx[k]];
                    tmp[static_cast<size_t>(y) * out_w + ox] = static_cast<float>(acc);
                }
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& t = ty[static_cast<size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k) acc += static_cast<double>(t.w[k]) * tmp[static_cast<size_t>(t.idx[k]) * out_w + ox];
                    dst[oy * out_w + ox] = static_cast<float>(acc);
                }
            }
        }
    check_finite(*out, "bicubic_resize");
    return out;
}

// --- structure ops ----------------------------------------------------------

inline TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b) {
    detail::require_4d(a, "concat_channels");
    detail::require_4d(b, "concat_channels");
    if (a->shape[0] != b->shape[0] || a->shape[2] != b->shape[2] || a->shape[3] != b->shape[3])
        throw ConfigError("concat_channels: batch/spatial extents differ: " + shape_str(a->shape) + " vs " +
                          shape_str(b->shape));
    const int n = a->shape[0], ca = a->shape[1], cb = b->shape[1], h = a->shape[2], w = a->shape[3];
    auto out = detail::op_output({n, ca + cb, h, w}, {a, b}, "concat_channels");
    const size_t plane = static_cast<size_t>(h) * w;
    for (int bi = 0; bi < n; ++bi) {
        std::copy_n(a->data.data() + static_cast<size_t>(bi) * ca * plane, ca * plane,
                    out->data.data() + static_cast<size_t>(bi) * (ca + cb) * plane);
        std::copy_n(b->data.data() + static_cast<size_t>(bi) * cb * plane, cb * plane,
                    out->data.data() + (static_cast<size_t>(bi) * (ca + cb) + ca) * plane);
    }

    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        out->backward_fn = [ap, bp, n, ca, cb, plane](Tensor& node) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (int bi = 0; bi < n; ++bi) {
                    const float* g = node.grad.data() + static_cast<size_t>(bi) * (ca + cb) * plane;
                    float* dst = ap->grad.data() + static_cast<size_t>(bi) * ca * plane;
                    for (size_t i = 0; i < ca * plane; ++i) dst[i] += g[i];
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int bi = 0; bi < n; ++bi) {
                    const float* g = node.grad.data() + (static_cast<size_t>(bi) * (ca + cb) + ca) * plane;
                    float* dst = bp->grad.data() + static_cast<size_t>(bi) * cb * plane;
                    for (size_t i = 0; i < cb * plane; ++i) dst[i] += g[i];
                }
            }
        };
    }
    return out;
}

// per-channel mean over H x W -> (n, c, 1, 1)
inline TensorPtr global_avg_pool(const TensorPtr& x) {
    detail::require_4d(x, "global_avg_pool");
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    const size_t plane = static_cast<size_t>(h) * w;
    auto out = detail::op_output({n, c, 1, 1}, {x}, "global_avg_pool");
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const float* src = x->data.data() + (static_cast<size_t>(b) * c + ci) * plane;
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) acc += src[i];
            out->data[static_cast<size_t>(b) * c + ci] = static_cast<float>(acc / static_cast<double>(plane));
        }

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, n, c, plane](Tensor& node) {
            xp->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (int ci = 0; ci < c; ++ci) {
                    float g = node.grad[static_cast<size_t>(b) * c + ci] / static_cast<float>(plane);
                    float* dst = xp->grad.data() + (static_cast<size_t>(b) * c + ci) * plane;
                    for (size_t i = 0; i < plane; ++i) dst[i] += g;
                }
        };
    }
    return out;
}

// (n, c, 1, 1) -> (n, c, h, w); the resize-back half of the pooled ASPP branch
inline TensorPtr broadcast_hw(const TensorPtr& x, int h, int w) {
    detail::require_4d(x, "broadcast_hw");
    if (x->shape[2] != 1 || x->shape[3] != 1) throw ConfigError("broadcast_hw: input spatial extents must be 1x1");
    const int n = x->shape[0], c = x->shape[1];
    const size_t plane = static_cast<size_t>(h) * w;
    auto out = detail::op_output({n, c, h, w}, {x}, "broadcast_hw");
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci)
            std::fill_n(out->data.data() + (static_cast<size_t>(b) * c + ci) * plane, plane,
                        x->data[static_cast<size_t>(b) * c + ci]);

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, n, c, plane](Tensor& node) {
            xp->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (int ci = 0; ci < c; ++ci) {
                    const float* g = node.grad.data() + (static_cast<size_t>(b) * c + ci) * plane;
                    double acc = 0.0;
                    for (size_t i = 0; i < plane; ++i) acc += g[i];
                    xp->grad[static_cast<size_t>(b) * c + ci] += static_cast<float>(acc);
                }
        };
    }
    return out;
}

// --- pointwise --------------------------------------------------------------

inline TensorPtr relu(const TensorPtr& x) {
    auto out = detail::op_output(x->shape, {x}, "relu");
    for (size_t i = 0; i < x->numel(); ++i) out->data[i] = x->data[i] > 0.0f ? x->data[i] : 0.0f;
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i)
                if (xp->data[i] > 0.0f) xp->grad[i] += node.grad[i];
        };
    }
    return out;
}

// Training mode zeroes with probability `rate` and rescales survivors by
// 1/(1-rate); inference mode returns the input unchanged.
inline TensorPtr dropout(const TensorPtr& x, float rate, bool training, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f) throw ConfigError("dropout: rate must be in [0, 1)");
    if (!training) return x;
    auto out = detail::op_output(x->shape, {x}, "dropout");
    std::vector<uint8_t> keep(x->numel());
    const float scale = 1.0f / (1.0f - rate);
    for (size_t i = 0; i < x->numel(); ++i) {
        keep[i] = rng.uniform() >= rate ? 1 : 0;
        out->data[i] = keep[i] ? x->data[i] * scale : 0.0f;
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, keep = std::move(keep), scale](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i)
                if (keep[i]) xp->grad[i] += node.grad[i] * scale;
        };
    }
    return out;
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw ConfigError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = detail::op_output(a->shape, {a, b}, "add");
    for (size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        out->backward_fn = [ap, bp](Tensor& node) {
            if (ap->requires_grad) detail::add_into_grad(ap, node.grad);
            if (bp->requires_grad) detail::add_into_grad(bp, node.grad);
        };
    }
    return out;
}

inline TensorPtr scale(const TensorPtr& x, double s) {
    auto out = detail::op_output(x->shape, {x}, "scale");
    for (size_t i = 0; i < x->numel(); ++i) out->data[i] = static_cast<float>(x->data[i] * s);
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, s](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) xp->grad[i] += static_cast<float>(node.grad[i] * s);
        };
    }
    return out;
}

// --- reductions (f64 accumulation) -------------------------------------------

inline TensorPtr sum(const TensorPtr& x) {
    auto out = detail::op_output({1}, {x}, "sum");
    double acc = 0.0;
    for (float v : x->data) acc += v;
    out->data[0] = static_cast<float>(acc);
    check_finite(*out, "sum");
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += node.grad[0];
        };
    }
    return out;
}

inline TensorPtr sum_squares(const TensorPtr& x) {
    auto out = detail::op_output({1}, {x}, "sum_squares");
    double acc = 0.0;
    for (float v : x->data) acc += static_cast<double>(v) * v;
    out->data[0] = static_cast<float>(acc);
    check_finite(*out, "sum_squares");
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp](Tensor& node) {
            xp->ensure_grad();
            for (size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += 2.0f * xp->data[i] * node.grad[0];
        };
    }
    return out;
}

// --- classification ----------------------------------------------------------

inline TensorPtr softmax_channels(const TensorPtr& x) {
    detail::require_4d(x, "softmax_channels");
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    const size_t plane = static_cast<size_t>(h) * w;
    auto out = detail::op_output(x->shape, {x}, "softmax_channels");
    for (int b = 0; b < n; ++b)
        for (size_t px = 0; px < plane; ++px) {
            const size_t base = static_cast<size_t>(b) * c * plane + px;
            float m = x->data[base];
            for (int ci = 1; ci < c; ++ci) m = std::max(m, x->data[base + ci * plane]);
            double denom = 0.0;
            for (int ci = 0; ci < c; ++ci) denom += std::exp(static_cast<double>(x->data[base + ci * plane] - m));
            for (int ci = 0; ci < c; ++ci)
                out->data[base + ci * plane] =
                    static_cast<float>(std::exp(static_cast<double>(x->data[base + ci * plane] - m)) / denom);
        }
    check_finite(*out, "softmax_channels");
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backward_fn = [xp, n, c, plane](Tensor& node) {
            xp->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (size_t px = 0; px < plane; ++px) {
                    const size_t base = static_cast<size_t>(b) * c * plane + px;
                    double dot = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        dot += static_cast<double>(node.grad[base + ci * plane]) * node.data[base + ci * plane];
                    for (int ci = 0; ci < c; ++ci) {
                        const size_t i = base + ci * plane;
                        xp->grad[i] += static_cast<float>(node.data[i] * (node.grad[i] - dot));
                    }
                }
        };
    }
    return out;
}

// Binary per-pixel label batch for the classification losses.
struct MaskBatch {
    int n = 0, h = 0, w = 0;
    std::vector<uint8_t> v;  // n*h*w, values are class indices

    size_t numel() const { return v.size(); }
};

// Mean-reduced per-pixel negative log-likelihood over softmax(logits).
// The sum form of the loss is the returned mean times n*h*w.
inline TensorPtr softmax_cross_entropy(const TensorPtr& logits, const MaskBatch& labels,
                                       const TensorPtr& weight_map = nullptr) {
    detail::require_4d(logits, "softmax_cross_entropy");
    const int n = logits->shape[0], c = logits->shape[1], h = logits->shape[2], w = logits->shape[3];
    if (labels.n != n || labels.h != h || labels.w != w)
        throw ConfigError("softmax_cross_entropy: label extents do not match logits " + shape_str(logits->shape));
    if (weight_map && weight_map->numel() != labels.numel())
        throw ConfigError("softmax_cross_entropy: weight map size mismatch");
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t count = static_cast<size_t>(n) * plane;

    auto out = detail::op_output({1}, {logits}, "softmax_cross_entropy");
    double acc = 0.0;
    for (int b = 0; b < n; ++b)
        for (size_t px = 0; px < plane; ++px) {
            int label = labels.v[static_cast<size_t>(b) * plane + px];
            if (label < 0 || label >= c)
                throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) + " outside class range");
            const size_t base = static_cast<size_t>(b) * c * plane + px;
            float m = logits->data[base];
            for (int ci = 1; ci < c; ++ci) m = std::max(m, logits->data[base + ci * plane]);
            double denom = 0.0;
            for (int ci = 0; ci < c; ++ci) denom += std::exp(static_cast<double>(logits->data[base + ci * plane] - m));
            double nll = std::log(denom) - (static_cast<double>(logits->data[base + label * plane]) - m);
            if (weight_map) nll *= weight_map->data[static_cast<size_t>(b) * plane + px];
            acc += nll;
        }
    out->data[0] = static_cast<float>(acc / static_cast<double>(count));
    check_finite(*out, "softmax_cross_entropy");

    if (out->requires_grad) {
        TensorPtr lp = logits, wp = weight_map;
        out->backward_fn = [lp, wp, labels, n, c, plane, count](Tensor& node) {
            lp->ensure_grad();
            const float gscale = node.grad[0] / static_cast<float>(count);
            for (int b = 0; b < n; ++b)
                for (size_t px = 0; px < plane; ++px) {
                    const int label = labels.v[static_cast<size_t>(b) * plane + px];
                    const size_t base = static_cast<size_t>(b) * c * plane + px;
                    float m = lp->data[base];
                    for (int ci = 1; ci < c; ++ci) m = std::max(m, lp->data[base + ci * plane]);
                    double denom = 0.0;
                    for (int ci = 0; ci < c; ++ci) denom += std::exp(static_cast<double>(lp->data[base + ci * plane] - m));
                    float wpx = wp ? wp->data[static_cast<size_t>(b) * plane + px] : 1.0f;
                    for (int ci = 0; ci < c; ++ci) {
                        double p = std::exp(static_cast<double>(lp->data[base + ci * plane] - m)) / denom;
                        double onehot = (ci == label) ? 1.0 : 0.0;
                        lp->grad[base + ci * plane] += static_cast<float>((p - onehot) * wpx * gscale);
                    }
                }
        };
    }
    return out;
}

}  // namespace mild
