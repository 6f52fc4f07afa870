#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stnas/tape.hpp"

namespace stnas {

// Batch-norm behaviour during a forward pass. train_frozen_stats uses batch
// statistics like train but leaves the running buffers untouched; the
// architecture-gradient path relies on this to keep the network state
// bit-identical across its extra forward passes.
enum class Mode { train, train_frozen_stats, eval };

struct ConvGeom {
    i64 st = 1, sh = 1, sw = 1;  // strides: time, height, width
    i64 pt = 0, ph = 0, pw = 0;  // zero padding
    i64 dh = 1, dw = 1;          // spatial dilation
};

namespace detail {

inline i64 conv_out_dim(i64 in, i64 k, i64 stride, i64 pad, i64 dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// Row range [lo, hi) of output positions wo with 0 <= wo*sw + wi0 < W.
inline void row_range(i64 wi0, i64 W, i64 sw, i64 Wo, i64& lo, i64& hi) {
    lo = wi0 < 0 ? (-wi0 + sw - 1) / sw : 0;
    hi = wi0 >= W ? 0 : (W - 1 - wi0) / sw + 1;
    lo = std::min(lo, Wo);
    hi = std::min(hi, Wo);
}

inline void conv_fwd(const Tensor& x, const Tensor& w, Tensor& y, const ConvGeom& g) {
    const Shape5 xs = x.shape(), ws = w.shape(), ys = y.shape();
    const i64 N = xs.n, Ci = xs.c, T = xs.t, H = xs.h, W = xs.w;
    const i64 Co = ws.n, Kt = ws.t, Kh = ws.h, Kw = ws.w;
    const i64 To = ys.t, Ho = ys.h, Wo = ys.w;
    parallel_for(N * Co, [&](i64 p) {
        const i64 n = p / Co, co = p % Co;
        for (i64 to = 0; to < To; ++to)
            for (i64 ho = 0; ho < Ho; ++ho) {
                real* yrow = y.data() + y.index(n, co, to, ho, 0);
                for (i64 ci = 0; ci < Ci; ++ci)
                    for (i64 kt = 0; kt < Kt; ++kt) {
                        const i64 ti = to * g.st - g.pt + kt;
                        if (ti < 0 || ti >= T) continue;
                        for (i64 kh = 0; kh < Kh; ++kh) {
                            const i64 hi = ho * g.sh - g.ph + kh * g.dh;
                            if (hi < 0 || hi >= H) continue;
                            const real* xrow = x.data() + x.index(n, ci, ti, hi, 0);
                            const real* wrow = w.data() + w.index(co, ci, kt, kh, 0);
                            for (i64 kw = 0; kw < Kw; ++kw) {
                                const real wv = wrow[kw];
                                const i64 wi0 = -g.pw + kw * g.dw;
                                i64 lo, hi2;
                                row_range(wi0, W, g.sw, Wo, lo, hi2);
                                if (g.sw == 1) {
                                    const real* xr = xrow + wi0;
                                    for (i64 wo = lo; wo < hi2; ++wo) yrow[wo] += wv * xr[wo];
                                } else {
                                    for (i64 wo = lo; wo < hi2; ++wo) yrow[wo] += wv * xrow[wo * g.sw + wi0];
                                }
                            }
                        }
                    }
            }
    });
}

inline void conv_bwd_data(const Tensor& gy, const Tensor& w, Tensor& gx, const ConvGeom& g) {
    const Shape5 xs = gx.shape(), ws = w.shape(), ys = gy.shape();
    const i64 N = xs.n, Ci = xs.c, T = xs.t, H = xs.h, W = xs.w;
    const i64 Co = ws.n, Kt = ws.t, Kh = ws.h, Kw = ws.w;
    const i64 To = ys.t, Ho = ys.h, Wo = ys.w;
    // Scatter form; batch slices are disjoint, accumulation order inside a
    // slice is fixed, so the result does not depend on the thread count.
    parallel_for(N, [&](i64 n) {
        for (i64 co = 0; co < Co; ++co)
            for (i64 to = 0; to < To; ++to)
                for (i64 ho = 0; ho < Ho; ++ho) {
                    const real* grow = gy.data() + gy.index(n, co, to, ho, 0);
                    for (i64 ci = 0; ci < Ci; ++ci)
                        for (i64 kt = 0; kt < Kt; ++kt) {
                            const i64 ti = to * g.st - g.pt + kt;
                            if (ti < 0 || ti >= T) continue;
                            for (i64 kh = 0; kh < Kh; ++kh) {
                                const i64 hi = ho * g.sh - g.ph + kh * g.dh;
                                if (hi < 0 || hi >= H) continue;
                                real* xrow = gx.data() + gx.index(n, ci, ti, hi, 0);
                                const real* wrow = w.data() + w.index(co, ci, kt, kh, 0);
                                for (i64 kw = 0; kw < Kw; ++kw) {
                                    const real wv = wrow[kw];
                                    const i64 wi0 = -g.pw + kw * g.dw;
                                    i64 lo, hi2;
                                    row_range(wi0, W, g.sw, Wo, lo, hi2);
                                    if (g.sw == 1) {
                                        real* xr = xrow + wi0;
                                        for (i64 wo = lo; wo < hi2; ++wo) xr[wo] += wv * grow[wo];
                                    } else {
                                        for (i64 wo = lo; wo < hi2; ++wo) xrow[wo * g.sw + wi0] += wv * grow[wo];
                                    }
                                }
                            }
                        }
                }
    });
}

inline void conv_bwd_weight(const Tensor& gy, const Tensor& x, Tensor& gw, const ConvGeom& g) {
    const Shape5 xs = x.shape(), ws = gw.shape(), ys = gy.shape();
    const i64 N = xs.n, Ci = xs.c, T = xs.t, H = xs.h, W = xs.w;
    const i64 Co = ws.n, Kt = ws.t, Kh = ws.h, Kw = ws.w;
    const i64 To = ys.t, Ho = ys.h, Wo = ys.w;
    parallel_for(Co * Ci, [&](i64 p) {
        const i64 co = p / Ci, ci = p % Ci;
        for (i64 kt = 0; kt < Kt; ++kt)
            for (i64 kh = 0; kh < Kh; ++kh)
                for (i64 kw = 0; kw < Kw; ++kw) {
                    const i64 wi0 = -g.pw + kw * g.dw;
                    i64 lo, hi2;
                    row_range(wi0, W, g.sw, Wo, lo, hi2);
                    real acc = 0;
                    for (i64 n = 0; n < N; ++n)
                        for (i64 to = 0; to < To; ++to) {
                            const i64 ti = to * g.st - g.pt + kt;
                            if (ti < 0 || ti >= T) continue;
                            for (i64 ho = 0; ho < Ho; ++ho) {
                                const i64 hi = ho * g.sh - g.ph + kh * g.dh;
                                if (hi < 0 || hi >= H) continue;
                                const real* grow = gy.data() + gy.index(n, co, to, ho, 0);
                                const real* xrow = x.data() + x.index(n, ci, ti, hi, 0);
                                if (g.sw == 1) {
                                    const real* xr = xrow + wi0;
                                    for (i64 wo = lo; wo < hi2; ++wo) acc += grow[wo] * xr[wo];
                                } else {
                                    for (i64 wo = lo; wo < hi2; ++wo) acc += grow[wo] * xrow[wo * g.sw + wi0];
                                }
                            }
                        }
                    gw(co, ci, kt, kh, kw) += acc;
                }
    });
}

}  // namespace detail

// General (2+1)/3-D convolution over (N,C,T,H,W); weight layout
// (Cout, Cin, kt, kh, kw). No bias: every conv in this codebase is followed
// by a normalization or feeds a linear head with its own bias.
inline VarId conv_general(Tape& t, VarId x, VarId w, ConvGeom g) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    if (xv.shape().c != wv.shape().c)
        throw DimensionError("conv: input channels " + std::to_string(xv.shape().c) +
                             " != weight Cin " + std::to_string(wv.shape().c));
    Shape5 out{xv.shape().n, wv.shape().n,
               detail::conv_out_dim(xv.shape().t, wv.shape().t, g.st, g.pt, 1),
               detail::conv_out_dim(xv.shape().h, wv.shape().h, g.sh, g.ph, g.dh),
               detail::conv_out_dim(xv.shape().w, wv.shape().w, g.sw, g.pw, g.dw)};
    if (out.t <= 0 || out.h <= 0 || out.w <= 0)
        throw DimensionError("conv: empty output for input " + xv.shape().str() + " weight " + wv.shape().str());
    Tensor y(out);
    detail::conv_fwd(xv, wv, y, g);
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x, w}, [x, w, self, g](Tape& tp) {
        const Tensor& gy = tp.grad(self);
        if (tp.requires_grad(x)) detail::conv_bwd_data(gy, tp.val(w), tp.grad_acc(x), g);
        if (tp.requires_grad(w)) detail::conv_bwd_weight(gy, tp.val(x), tp.grad_acc(w), g);
    });
}

// Spatial-only convolution: weight (Cout, Cin, 1, k, k); time untouched.
inline VarId conv_spatial(Tape& t, VarId x, VarId w, int stride, int pad, int dilation) {
    if (t.val(w).shape().t != 1) throw DimensionError("conv_spatial: weight kt must be 1");
    ConvGeom g;
    g.sh = g.sw = stride;
    g.ph = g.pw = pad;
    g.dh = g.dw = dilation;
    return conv_general(t, x, w, g);
}

// Temporal-only convolution: weight (Cout, Cin, k, 1, 1); H, W untouched.
inline VarId conv_temporal(Tape& t, VarId x, VarId w, int stride, int pad) {
    const Shape5 ws = t.val(w).shape();
    if (ws.h != 1 || ws.w != 1) throw DimensionError("conv_temporal: weight kh, kw must be 1");
    ConvGeom g;
    g.st = stride;
    g.pt = pad;
    return conv_general(t, x, w, g);
}

inline VarId relu(Tape& t, VarId x) {
    const Tensor& xv = t.val(x);
    Tensor y(xv.shape());
    const i64 n = xv.numel();
    for (i64 i = 0; i < n; ++i) y.at(i) = xv.at(i) > 0 ? xv.at(i) : 0;
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, self](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        const Tensor& xv = tp.val(x);
        Tensor& gx = tp.grad_acc(x);
        for (i64 i = 0; i < gy.numel(); ++i)
            if (xv.at(i) > 0) gx.at(i) += gy.at(i);
    });
}

inline VarId add(Tape& t, VarId a, VarId b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.shape() != bv.shape())
        throw DimensionError("add: shape mismatch " + av.shape().str() + " vs " + bv.shape().str());
    Tensor y(av.shape());
    for (i64 i = 0; i < y.numel(); ++i) y.at(i) = av.at(i) + bv.at(i);
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {a, b}, [a, b, self](Tape& tp) {
        const Tensor& gy = tp.grad(self);
        for (VarId v : {a, b}) {
            if (!tp.requires_grad(v)) continue;
            Tensor& g = tp.grad_acc(v);
            for (i64 i = 0; i < gy.numel(); ++i) g.at(i) += gy.at(i);
        }
    });
}

inline VarId scalar_mul(Tape& t, VarId x, real c) {
    const Tensor& xv = t.val(x);
    Tensor y(xv.shape());
    for (i64 i = 0; i < y.numel(); ++i) y.at(i) = c * xv.at(i);
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, c, self](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        Tensor& gx = tp.grad_acc(x);
        for (i64 i = 0; i < gy.numel(); ++i) gx.at(i) += c * gy.at(i);
    });
}

// All-zeros output of x's shape; the connection-off operator. No gradient
// flows to x.
inline VarId zeros_like(Tape& t, VarId x) {
    return t.constant(Tensor::zeros(t.val(x).shape()));
}

inline VarId concat_channels(Tape& t, const std::vector<VarId>& xs) {
    if (xs.empty()) throw DimensionError("concat_channels: empty input list");
    const Shape5 s0 = t.val(xs[0]).shape();
    i64 ctotal = 0;
    for (VarId v : xs) {
        const Shape5 s = t.val(v).shape();
        if (s.n != s0.n || s.t != s0.t || s.h != s0.h || s.w != s0.w)
            throw DimensionError("concat_channels: non-channel dims differ: " + s0.str() + " vs " + s.str());
        ctotal += s.c;
    }
    Tensor y(Shape5{s0.n, ctotal, s0.t, s0.h, s0.w});
    const i64 plane = s0.t * s0.h * s0.w;
    for (i64 n = 0; n < s0.n; ++n) {
        i64 coff = 0;
        for (VarId v : xs) {
            const Tensor& xv = t.val(v);
            const i64 block = xv.shape().c * plane;
            std::copy(xv.data() + n * block, xv.data() + (n + 1) * block,
                      y.data() + (n * ctotal + coff) * plane);
            coff += xv.shape().c;
        }
    }
    const VarId self = static_cast<VarId>(t.size());
    std::vector<VarId> inputs = xs;
    return t.push(std::move(y), inputs, [inputs, self, plane, ctotal, s0](Tape& tp) {
        const Tensor& gy = tp.grad(self);
        for (i64 n = 0; n < s0.n; ++n) {
            i64 coff = 0;
            for (VarId v : inputs) {
                const i64 c = tp.val(v).shape().c;
                if (tp.requires_grad(v)) {
                    Tensor& g = tp.grad_acc(v);
                    const real* src = gy.data() + (n * ctotal + coff) * plane;
                    real* dst = g.data() + n * c * plane;
                    for (i64 i = 0; i < c * plane; ++i) dst[i] += src[i];
                }
                coff += c;
            }
        }
    });
}

// Per-channel batch normalization over (batch, time, height, width).
// scale/shift are (1,C,1,1,1) tape variables; running buffers live outside
// the tape and are only written in Mode::train.
inline VarId batch_norm(Tape& t, VarId x, VarId scale, VarId shift, Tensor* run_mean,
                        Tensor* run_var, Mode mode, real momentum = 0.1, real eps = 1e-5) {
    const Tensor& xv = t.val(x);
    const Shape5 s = xv.shape();
    const i64 C = s.c;
    if (t.val(scale).numel() != C || t.val(shift).numel() != C)
        throw DimensionError("batch_norm: scale/shift must have one entry per channel");
    const i64 m = s.n * s.t * s.h * s.w;
    const i64 plane = s.t * s.h * s.w;

    std::vector<real> mean(static_cast<size_t>(C)), inv(static_cast<size_t>(C));
    const bool batch_stats = mode != Mode::eval;
    if (batch_stats) {
        parallel_for(C, [&](i64 c) {
            real sum = 0;
            for (i64 n = 0; n < s.n; ++n) {
                const real* p = xv.data() + xv.index(n, c, 0, 0, 0);
                for (i64 i = 0; i < plane; ++i) sum += p[i];
            }
            const real mu = sum / static_cast<real>(m);
            real sq = 0;
            for (i64 n = 0; n < s.n; ++n) {
                const real* p = xv.data() + xv.index(n, c, 0, 0, 0);
                for (i64 i = 0; i < plane; ++i) {
                    const real d = p[i] - mu;
                    sq += d * d;
                }
            }
            mean[static_cast<size_t>(c)] = mu;
            inv[static_cast<size_t>(c)] = 1.0 / std::sqrt(sq / static_cast<real>(m) + eps);
        });
        if (mode == Mode::train) {
            if (!run_mean || !run_var) throw Error("batch_norm: running buffers required in train mode");
            for (i64 c = 0; c < C; ++c) {
                const real var = 1.0 / (inv[static_cast<size_t>(c)] * inv[static_cast<size_t>(c)]) - eps;
                run_mean->at(c) = (1 - momentum) * run_mean->at(c) + momentum * mean[static_cast<size_t>(c)];
                run_var->at(c) = (1 - momentum) * run_var->at(c) + momentum * var;
            }
        }
    } else {
        if (!run_mean || !run_var) throw Error("batch_norm: running buffers required in eval mode");
        for (i64 c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = run_mean->at(c);
            inv[static_cast<size_t>(c)] = 1.0 / std::sqrt(run_var->at(c) + eps);
        }
    }

    const Tensor& sc = t.val(scale);
    const Tensor& sh = t.val(shift);
    Tensor y(s);
    parallel_for(s.n * C, [&](i64 p) {
        const i64 n = p / C, c = p % C;
        const real mu = mean[static_cast<size_t>(c)], iv = inv[static_cast<size_t>(c)];
        const real g = sc.at(c), b = sh.at(c);
        const real* xp = xv.data() + xv.index(n, c, 0, 0, 0);
        real* yp = y.data() + y.index(n, c, 0, 0, 0);
        for (i64 i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * iv + b;
    });

    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x, scale, shift},
                  [x, scale, shift, self, mean, inv, m, plane, C, s, batch_stats](Tape& tp) {
                      const Tensor& gy = tp.grad(self);
                      const Tensor& xv = tp.val(x);
                      const Tensor& sc = tp.val(scale);
                      const bool need_x = tp.requires_grad(x);
                      const bool need_s = tp.requires_grad(scale);
                      const bool need_b = tp.requires_grad(shift);
                      std::vector<real> sg(static_cast<size_t>(C)), sgx(static_cast<size_t>(C));
                      parallel_for(C, [&](i64 c) {
                          const real mu = mean[static_cast<size_t>(c)], iv = inv[static_cast<size_t>(c)];
                          real a = 0, b = 0;
                          for (i64 n = 0; n < s.n; ++n) {
                              const real* gp = gy.data() + gy.index(n, c, 0, 0, 0);
                              const real* xp = xv.data() + xv.index(n, c, 0, 0, 0);
                              for (i64 i = 0; i < plane; ++i) {
                                  a += gp[i];
                                  b += gp[i] * (xp[i] - mu) * iv;
                              }
                          }
                          sg[static_cast<size_t>(c)] = a;
                          sgx[static_cast<size_t>(c)] = b;
                      });
                      if (need_b) {
                          Tensor& g = tp.grad_acc(shift);
                          for (i64 c = 0; c < C; ++c) g.at(c) += sg[static_cast<size_t>(c)];
                      }
                      if (need_s) {
                          Tensor& g = tp.grad_acc(scale);
                          for (i64 c = 0; c < C; ++c) g.at(c) += sgx[static_cast<size_t>(c)];
                      }
                      if (need_x) {
                          Tensor& gx = tp.grad_acc(x);
                          parallel_for(s.n * C, [&](i64 p) {
                              const i64 n = p / C, c = p % C;
                              const real mu = mean[static_cast<size_t>(c)], iv = inv[static_cast<size_t>(c)];
                              const real gamma = sc.at(c);
                              const real* gp = gy.data() + gy.index(n, c, 0, 0, 0);
                              const real* xp = xv.data() + xv.index(n, c, 0, 0, 0);
                              real* out = gx.data() + gx.index(n, c, 0, 0, 0);
                              if (batch_stats) {
                                  const real k1 = gamma * iv / static_cast<real>(m);
                                  const real a = sg[static_cast<size_t>(c)], b = sgx[static_cast<size_t>(c)];
                                  for (i64 i = 0; i < plane; ++i) {
                                      const real xh = (xp[i] - mu) * iv;
                                      out[i] += k1 * (static_cast<real>(m) * gp[i] - a - xh * b);
                                  }
                              } else {
                                  const real k = gamma * iv;
                                  for (i64 i = 0; i < plane; ++i) out[i] += k * gp[i];
                              }
                          });
                      }
                  });
}

namespace detail {

enum class PoolKind { max, avg };

}  // namespace detail

// Spatial pooling over k x k windows; time dimension untouched. Average
// pooling divides by the number of in-bounds positions; max pooling ignores
// padding and routes the gradient to the first maximum in scan order.
inline VarId pool_spatial(Tape& t, VarId x, int k, int stride, int pad, detail::PoolKind kind) {
    const Tensor& xv = t.val(x);
    const Shape5 s = xv.shape();
    if (pad >= k) throw DimensionError("pool: pad must be < kernel");
    Shape5 out{s.n, s.c, s.t, detail::conv_out_dim(s.h, k, stride, pad, 1),
               detail::conv_out_dim(s.w, k, stride, pad, 1)};
    if (out.h <= 0 || out.w <= 0) throw DimensionError("pool: empty output");
    Tensor y(out);
    parallel_for(s.n * s.c, [&](i64 p) {
        const i64 n = p / s.c, c = p % s.c;
        for (i64 tt = 0; tt < s.t; ++tt)
            for (i64 ho = 0; ho < out.h; ++ho)
                for (i64 wo = 0; wo < out.w; ++wo) {
                    real best = -std::numeric_limits<real>::infinity();
                    real sum = 0;
                    i64 cnt = 0;
                    for (i64 kh = 0; kh < k; ++kh) {
                        const i64 hi = ho * stride - pad + kh;
                        if (hi < 0 || hi >= s.h) continue;
                        for (i64 kw = 0; kw < k; ++kw) {
                            const i64 wi = wo * stride - pad + kw;
                            if (wi < 0 || wi >= s.w) continue;
                            const real v = xv(n, c, tt, hi, wi);
                            sum += v;
                            ++cnt;
                            if (v > best) best = v;
                        }
                    }
                    y(n, c, tt, ho, wo) =
                        kind == detail::PoolKind::max ? best : sum / static_cast<real>(cnt);
                }
    });
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, self, k, stride, pad, kind, s, out](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        const Tensor& xv = tp.val(x);
        Tensor& gx = tp.grad_acc(x);
        parallel_for(s.n * s.c, [&](i64 p) {
            const i64 n = p / s.c, c = p % s.c;
            for (i64 tt = 0; tt < s.t; ++tt)
                for (i64 ho = 0; ho < out.h; ++ho)
                    for (i64 wo = 0; wo < out.w; ++wo) {
                        const real g = gy(n, c, tt, ho, wo);
                        if (kind == detail::PoolKind::max) {
                            real best = -std::numeric_limits<real>::infinity();
                            i64 bh = -1, bw = -1;
                            for (i64 kh = 0; kh < k; ++kh) {
                                const i64 hi = ho * stride - pad + kh;
                                if (hi < 0 || hi >= s.h) continue;
                                for (i64 kw = 0; kw < k; ++kw) {
                                    const i64 wi = wo * stride - pad + kw;
                                    if (wi < 0 || wi >= s.w) continue;
                                    const real v = xv(n, c, tt, hi, wi);
                                    if (v > best) {
                                        best = v;
                                        bh = hi;
                                        bw = wi;
                                    }
                                }
                            }
                            gx(n, c, tt, bh, bw) += g;
                        } else {
                            i64 cnt = 0;
                            for (i64 kh = 0; kh < k; ++kh) {
                                const i64 hi = ho * stride - pad + kh;
                                if (hi < 0 || hi >= s.h) continue;
                                for (i64 kw = 0; kw < k; ++kw) {
                                    const i64 wi = wo * stride - pad + kw;
                                    if (wi >= 0 && wi < s.w) ++cnt;
                                }
                            }
                            const real share = g / static_cast<real>(cnt);
                            for (i64 kh = 0; kh < k; ++kh) {
                                const i64 hi = ho * stride - pad + kh;
                                if (hi < 0 || hi >= s.h) continue;
                                for (i64 kw = 0; kw < k; ++kw) {
                                    const i64 wi = wo * stride - pad + kw;
                                    if (wi < 0 || wi >= s.w) continue;
                                    gx(n, c, tt, hi, wi) += share;
                                }
                            }
                        }
                    }
        });
    });
}

// Temporal pooling over k-frame windows; H and W untouched.
inline VarId pool_temporal(Tape& t, VarId x, int k, int stride, int pad, detail::PoolKind kind) {
    const Tensor& xv = t.val(x);
    const Shape5 s = xv.shape();
    if (pad >= k) throw DimensionError("pool: pad must be < kernel");
    Shape5 out{s.n, s.c, detail::conv_out_dim(s.t, k, stride, pad, 1), s.h, s.w};
    if (out.t <= 0) throw DimensionError("pool: empty output");
    Tensor y(out);
    const i64 plane = s.h * s.w;
    parallel_for(s.n * s.c, [&](i64 p) {
        const i64 n = p / s.c, c = p % s.c;
        for (i64 to = 0; to < out.t; ++to) {
            real* yp = y.data() + y.index(n, c, to, 0, 0);
            i64 cnt = 0;
            bool first = true;
            for (i64 kt = 0; kt < k; ++kt) {
                const i64 ti = to * stride - pad + kt;
                if (ti < 0 || ti >= s.t) continue;
                const real* xp = xv.data() + xv.index(n, c, ti, 0, 0);
                ++cnt;
                if (first) {
                    for (i64 i = 0; i < plane; ++i) yp[i] = xp[i];
                    first = false;
                } else if (kind == detail::PoolKind::max) {
                    for (i64 i = 0; i < plane; ++i) yp[i] = std::max(yp[i], xp[i]);
                } else {
                    for (i64 i = 0; i < plane; ++i) yp[i] += xp[i];
                }
            }
            if (kind == detail::PoolKind::avg) {
                const real d = 1.0 / static_cast<real>(cnt);
                for (i64 i = 0; i < plane; ++i) yp[i] *= d;
            }
        }
    });
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, self, k, stride, pad, kind, s, out, plane](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        const Tensor& xv = tp.val(x);
        Tensor& gx = tp.grad_acc(x);
        parallel_for(s.n * s.c, [&](i64 p) {
            const i64 n = p / s.c, c = p % s.c;
            for (i64 to = 0; to < out.t; ++to) {
                const real* gp = gy.data() + gy.index(n, c, to, 0, 0);
                if (kind == detail::PoolKind::max) {
                    for (i64 i = 0; i < plane; ++i) {
                        real best = -std::numeric_limits<real>::infinity();
                        i64 bt = -1;
                        for (i64 kt = 0; kt < k; ++kt) {
                            const i64 ti = to * stride - pad + kt;
                            if (ti < 0 || ti >= s.t) continue;
                            const real v = xv.data()[xv.index(n, c, ti, 0, 0) + i];
                            if (v > best) {
                                best = v;
                                bt = ti;
                            }
                        }
                        gx.data()[gx.index(n, c, bt, 0, 0) + i] += gp[i];
                    }
                } else {
                    i64 cnt = 0;
                    for (i64 kt = 0; kt < k; ++kt) {
                        const i64 ti = to * stride - pad + kt;
                        if (ti >= 0 && ti < s.t) ++cnt;
                    }
                    const real d = 1.0 / static_cast<real>(cnt);
                    for (i64 kt = 0; kt < k; ++kt) {
                        const i64 ti = to * stride - pad + kt;
                        if (ti < 0 || ti >= s.t) continue;
                        real* xp = gx.data() + gx.index(n, c, ti, 0, 0);
                        for (i64 i = 0; i < plane; ++i) xp[i] += d * gp[i];
                    }
                }
            }
        });
    });
}

inline VarId max_pool_spatial(Tape& t, VarId x, int k, int stride, int pad) {
    return pool_spatial(t, x, k, stride, pad, detail::PoolKind::max);
}
inline VarId avg_pool_spatial(Tape& t, VarId x, int k, int stride, int pad) {
    return pool_spatial(t, x, k, stride, pad, detail::PoolKind::avg);
}
inline VarId max_pool_temporal(Tape& t, VarId x, int k, int stride, int pad) {
    return pool_temporal(t, x, k, stride, pad, detail::PoolKind::max);
}
inline VarId avg_pool_temporal(Tape& t, VarId x, int k, int stride, int pad) {
    return pool_temporal(t, x, k, stride, pad, detail::PoolKind::avg);
}

// Mean over (time, height, width) per (batch, channel): output (N,C,1,1,1).
inline VarId global_avg_pool(Tape& t, VarId x) {
    const Tensor& xv = t.val(x);
    const Shape5 s = xv.shape();
    const i64 plane = s.t * s.h * s.w;
    Tensor y(Shape5{s.n, s.c, 1, 1, 1});
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const real* p = xv.data() + xv.index(n, c, 0, 0, 0);
            real sum = 0;
            for (i64 i = 0; i < plane; ++i) sum += p[i];
            y(n, c, 0, 0, 0) = sum / static_cast<real>(plane);
        }
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, self, s, plane](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        Tensor& gx = tp.grad_acc(x);
        for (i64 n = 0; n < s.n; ++n)
            for (i64 c = 0; c < s.c; ++c) {
                const real g = gy(n, c, 0, 0, 0) / static_cast<real>(plane);
                real* p = gx.data() + gx.index(n, c, 0, 0, 0);
                for (i64 i = 0; i < plane; ++i) p[i] += g;
            }
    });
}

// Fully connected layer on per-(batch,channel) features: x (N,F,1,1,1),
// w (C,F,1,1,1), b (C,1,1,1,1) -> (N,C,1,1,1).
inline VarId linear(Tape& t, VarId x, VarId w, VarId b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    const i64 N = xv.shape().n, F = xv.shape().c, C = wv.shape().n;
    if (xv.shape().t * xv.shape().h * xv.shape().w != 1)
        throw DimensionError("linear: features must be (N,F,1,1,1)");
    if (wv.shape().c != F || bv.numel() != C)
        throw DimensionError("linear: weight/bias shape mismatch");
    Tensor y(Shape5{N, C, 1, 1, 1});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            const real* xr = xv.data() + n * F;
            const real* wr = wv.data() + c * F;
            real acc = bv.at(c);
            for (i64 f = 0; f < F; ++f) acc += wr[f] * xr[f];
            y(n, c, 0, 0, 0) = acc;
        }
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x, w, b}, [x, w, b, self, N, F, C](Tape& tp) {
        const Tensor& gy = tp.grad(self);
        const Tensor& xv = tp.val(x);
        const Tensor& wv = tp.val(w);
        if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad_acc(x);
            for (i64 n = 0; n < N; ++n)
                for (i64 c = 0; c < C; ++c) {
                    const real g = gy.at(n * C + c);
                    const real* wr = wv.data() + c * F;
                    real* gr = gx.data() + n * F;
                    for (i64 f = 0; f < F; ++f) gr[f] += g * wr[f];
                }
        }
        if (tp.requires_grad(w)) {
            Tensor& gw = tp.grad_acc(w);
            for (i64 n = 0; n < N; ++n)
                for (i64 c = 0; c < C; ++c) {
                    const real g = gy.at(n * C + c);
                    const real* xr = xv.data() + n * F;
                    real* gr = gw.data() + c * F;
                    for (i64 f = 0; f < F; ++f) gr[f] += g * xr[f];
                }
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_acc(b);
            for (i64 n = 0; n < N; ++n)
                for (i64 c = 0; c < C; ++c) gb.at(c) += gy.at(n * C + c);
        }
    });
}

// Softmax along the channel axis, independently at each (n,t,h,w) site.
inline VarId softmax_channels(Tape& t, VarId x) {
    const Tensor& xv = t.val(x);
    const Shape5 s = xv.shape();
    const i64 C = s.c, plane = s.t * s.h * s.w;
    Tensor y(s);
    for (i64 n = 0; n < s.n; ++n)
        for (i64 i = 0; i < plane; ++i) {
            real mx = -std::numeric_limits<real>::infinity();
            for (i64 c = 0; c < C; ++c) mx = std::max(mx, xv.at((n * C + c) * plane + i));
            real z = 0;
            for (i64 c = 0; c < C; ++c) z += std::exp(xv.at((n * C + c) * plane + i) - mx);
            for (i64 c = 0; c < C; ++c)
                y.at((n * C + c) * plane + i) = std::exp(xv.at((n * C + c) * plane + i) - mx) / z;
        }
    const VarId self = static_cast<VarId>(t.size());
    return t.push(std::move(y), {x}, [x, self, s, C, plane](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& gy = tp.grad(self);
        const Tensor& sv = tp.val(self);
        Tensor& gx = tp.grad_acc(x);
        for (i64 n = 0; n < s.n; ++n)
            for (i64 i = 0; i < plane; ++i) {
                real dot = 0;
                for (i64 c = 0; c < C; ++c)
                    dot += gy.at((n * C + c) * plane + i) * sv.at((n * C + c) * plane + i);
                for (i64 c = 0; c < C; ++c) {
                    const i64 k = (n * C + c) * plane + i;
                    gx.at(k) += sv.at(k) * (gy.at(k) - dot);
                }
            }
    });
}

// Mean cross-entropy from raw logits (N,C,1,1,1) against integer labels.
inline VarId cross_entropy(Tape& t, VarId logits, const std::vector<int>& labels) {
    const Tensor& zv = t.val(logits);
    const Shape5 s = zv.shape();
    if (s.t * s.h * s.w != 1) throw DimensionError("cross_entropy: logits must be (N,C,1,1,1)");
    const i64 N = s.n, C = s.c;
    if (static_cast<i64>(labels.size()) != N)
        throw DimensionError("cross_entropy: batch size " + std::to_string(N) + " != labels " +
                             std::to_string(labels.size()));
    for (int l : labels)
        if (l < 0 || l >= C)
            throw DomainError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(C) + ")");
    std::vector<real> probs(static_cast<size_t>(N * C));
    real loss = 0;
    for (i64 n = 0; n < N; ++n) {
        const real* z = zv.data() + n * C;
        real mx = -std::numeric_limits<real>::infinity();
        for (i64 c = 0; c < C; ++c) mx = std::max(mx, z[c]);
        real sum = 0;
        for (i64 c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
        const real lse = mx + std::log(sum);
        loss += lse - z[labels[static_cast<size_t>(n)]];
        for (i64 c = 0; c < C; ++c) probs[static_cast<size_t>(n * C + c)] = std::exp(z[c] - lse);
    }
    loss /= static_cast<real>(N);
    const VarId self = static_cast<VarId>(t.size());
    return t.push(Tensor::scalar(loss), {logits},
                  [logits, self, probs, labels, N, C](Tape& tp) {
                      if (!tp.requires_grad(logits)) return;
                      const real g = tp.grad(self).at(0) / static_cast<real>(N);
                      Tensor& gz = tp.grad_acc(logits);
                      for (i64 n = 0; n < N; ++n) {
                          for (i64 c = 0; c < C; ++c)
                              gz.at(n * C + c) += g * probs[static_cast<size_t>(n * C + c)];
                          gz.at(n * C + labels[static_cast<size_t>(n)]) -= g;
                      }
                  });
}

// Sum of all elements as a scalar.
inline VarId sum_all(Tape& t, VarId x) {
    const Tensor& xv = t.val(x);
    real s = 0;
    for (i64 i = 0; i < xv.numel(); ++i) s += xv.at(i);
    const VarId self = static_cast<VarId>(t.size());
    return t.push(Tensor::scalar(s), {x}, [x, self](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const real g = tp.grad(self).at(0);
        Tensor& gx = tp.grad_acc(x);
        for (i64 i = 0; i < gx.numel(); ++i) gx.at(i) += g;
    });
}

// y = sum_j weights[offset+j] * xs[j]; the core of the mixed operation.
// Gradients flow both to every branch and to the weight entries.
inline VarId weighted_sum(Tape& t, const std::vector<VarId>& xs, VarId weights, i64 offset) {
    if (xs.empty()) throw DimensionError("weighted_sum: empty input list");
    const Shape5 s0 = t.val(xs[0]).shape();
    const Tensor& wv = t.val(weights);
    const i64 K = static_cast<i64>(xs.size());
    if (offset < 0 || offset + K > wv.numel())
        throw DimensionError("weighted_sum: weight window out of range");
    Tensor y(s0);
    for (i64 j = 0; j < K; ++j) {
        const Tensor& xv = t.val(xs[static_cast<size_t>(j)]);
        if (xv.shape() != s0)
            throw DimensionError("weighted_sum: branch shape mismatch " + xv.shape().str());
        const real w = wv.at(offset + j);
        const real* xp = xv.data();
        real* yp = y.data();
        const i64 n = y.numel();
        for (i64 i = 0; i < n; ++i) yp[i] += w * xp[i];
    }
    const VarId self = static_cast<VarId>(t.size());
    std::vector<VarId> inputs = xs;
    inputs.push_back(weights);
    return t.push(std::move(y), inputs, [xs, weights, offset, self](Tape& tp) {
        const Tensor& gy = tp.grad(self);
        const Tensor& wv = tp.val(weights);
        const i64 n = gy.numel();
        const bool need_w = tp.requires_grad(weights);
        for (i64 j = 0; j < static_cast<i64>(xs.size()); ++j) {
            const VarId xj = xs[static_cast<size_t>(j)];
            if (tp.requires_grad(xj)) {
                const real w = wv.at(offset + j);
                Tensor& gx = tp.grad_acc(xj);
                const real* gp = gy.data();
                real* xp = gx.data();
                for (i64 i = 0; i < n; ++i) xp[i] += w * gp[i];
            }
            if (need_w) {
                const Tensor& xv = tp.val(xj);
                real dot = 0;
                const real* gp = gy.data();
                const real* xp = xv.data();
                for (i64 i = 0; i < n; ++i) dot += gp[i] * xp[i];
                tp.grad_acc(weights).at(offset + j) += dot;
            }
        }
    });
}

}  // namespace stnas
