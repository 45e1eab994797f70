#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "dswinir/autograd.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

/// Convolution weights bound on a tape. weight is [out, in/groups, kH, kW].
template <Scalar T>
struct Conv2dParams {
    Var<T> weight;
    std::optional<Var<T>> bias;
    Conv2dOptions opts;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const Conv2dOptions& o) {
    const long span = long(o.dilation) * (long(k) - 1) + 1;
    const long num = long(in) + 2 * long(o.padding) - span;
    if (num < 0 || o.stride == 0)
        throw ShapeError("convolution kernel does not fit: extent " + std::to_string(in) + ", kernel " +
                         std::to_string(k));
    return std::size_t(num / long(o.stride)) + 1;
}

namespace kernels {

inline void check_conv_shapes(const Shape& x, const Shape& w, const Conv2dOptions& o) {
    if (x.size() != 4 || w.size() != 4)
        throw ShapeError("conv2d expects NCHW input and OIHW weight, got " + shape_str(x) + ", " +
                         shape_str(w));
    if (o.groups == 0 || x[1] % o.groups != 0 || w[0] % o.groups != 0 || w[1] * o.groups != x[1])
        throw ShapeError("conv2d channel/group mismatch: input " + shape_str(x) + ", weight " +
                         shape_str(w) + ", groups " + std::to_string(o.groups));
}

// Valid output column range [lo, hi) for kernel column offset `koff` = kw·dilation.
inline void conv_col_range(std::size_t out_w, std::size_t in_w, long koff, const Conv2dOptions& o, long& lo,
                           long& hi) {
    const long s = long(o.stride), p = long(o.padding);
    lo = 0;
    while (lo < long(out_w) && lo * s - p + koff < 0) ++lo;
    hi = long(out_w);
    while (hi > lo && (hi - 1) * s - p + koff >= long(in_w)) --hi;
}

/// Cross-correlation with zero padding.
template <Scalar T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const Conv2dOptions& o) {
    check_conv_shapes(x.shape(), w.shape(), o);
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OC = w.dim(0), ICG = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    if (bias && (bias->rank() != 1 || bias->dim(0) != OC)) throw ShapeError("conv2d bias extent mismatch");
    const std::size_t OH = conv_out_extent(H, KH, o), OW = conv_out_extent(W, KW, o);
    const std::size_t OCG = OC / o.groups;
    const long s = long(o.stride), p = long(o.padding), d = long(o.dilation);
    Tensor<T> out({B, OC, OH, OW});
    std::vector<double> acc(OH * OW);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            std::fill(acc.begin(), acc.end(), bias ? double((*bias)[oc]) : 0.0);
            double* op = acc.data();
            const std::size_t g = oc / OCG;
            for (std::size_t icl = 0; icl < ICG; ++icl) {
                const T* ip = x.ptr() + (b * C + g * ICG + icl) * H * W;
                for (std::size_t kh = 0; kh < KH; ++kh)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const double wv = w[((oc * ICG + icl) * KH + kh) * KW + kw];
                        long lo, hi;
                        conv_col_range(OW, W, long(kw) * d, o, lo, hi);
                        for (std::size_t oh = 0; oh < OH; ++oh) {
                            const long ih = long(oh) * s - p + long(kh) * d;
                            if (ih < 0 || ih >= long(H)) continue;
                            double* orow = op + oh * OW;
                            const T* irow = ip + ih * W;
                            if (s == 1) {
                                const long shift = long(kw) * d - p;
                                for (long ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow + shift];
                            } else {
                                for (long ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow * s - p + long(kw) * d];
                            }
                        }
                    }
            }
            std::copy(acc.begin(), acc.end(), out.ptr() + (b * OC + oc) * OH * OW);
        }
    return out;
}

template <Scalar T>
struct Conv2dGrads {
    std::optional<Tensor<T>> dx, dw, db;
};

template <Scalar T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Conv2dOptions& o,
                               bool need_dx, bool need_dw, bool need_db) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OC = w.dim(0), ICG = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = g.dim(2), OW = g.dim(3), OCG = OC / o.groups;
    const long s = long(o.stride), p = long(o.padding), d = long(o.dilation);
    Conv2dGrads<T> r;
    if (need_dx) r.dx = Tensor<T>(x.shape());
    std::vector<double> dw_acc(need_dw ? w.numel() : 0, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const T* gp = g.ptr() + (b * OC + oc) * OH * OW;
            const std::size_t grp = oc / OCG;
            for (std::size_t icl = 0; icl < ICG; ++icl) {
                const std::size_t plane = (b * C + grp * ICG + icl) * H * W;
                const T* ip = x.ptr() + plane;
                T* dxp = need_dx ? r.dx->ptr() + plane : nullptr;
                for (std::size_t kh = 0; kh < KH; ++kh)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const std::size_t widx = ((oc * ICG + icl) * KH + kh) * KW + kw;
                        const T wv = w[widx];
                        long lo, hi;
                        conv_col_range(OW, W, long(kw) * d, o, lo, hi);
                        double acc = 0.0;
                        for (std::size_t oh = 0; oh < OH; ++oh) {
                            const long ih = long(oh) * s - p + long(kh) * d;
                            if (ih < 0 || ih >= long(H)) continue;
                            const T* grow = gp + oh * OW;
                            const T* irow = ip + ih * W;
                            const long shift = long(kw) * d - p;
                            if (need_dw) {
                                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                                long ow = lo;
                                for (; ow + 3 < hi; ow += 4) {
                                    a0 += double(grow[ow]) * double(irow[ow * s + shift]);
                                    a1 += double(grow[ow + 1]) * double(irow[(ow + 1) * s + shift]);
                                    a2 += double(grow[ow + 2]) * double(irow[(ow + 2) * s + shift]);
                                    a3 += double(grow[ow + 3]) * double(irow[(ow + 3) * s + shift]);
                                }
                                for (; ow < hi; ++ow) a0 += double(grow[ow]) * double(irow[ow * s + shift]);
                                acc += (a0 + a1) + (a2 + a3);
                            }
                            if (dxp) {
                                T* dxrow = dxp + ih * W;
                                if (s == 1)
                                    for (long ow = lo; ow < hi; ++ow) dxrow[ow + shift] += wv * grow[ow];
                                else
                                    for (long ow = lo; ow < hi; ++ow) dxrow[ow * s + shift] += wv * grow[ow];
                            }
                        }
                        if (need_dw) dw_acc[widx] += acc;
                    }
            }
        }
    if (need_dw) {
        r.dw = Tensor<T>(w.shape());
        for (std::size_t i = 0; i < w.numel(); ++i) (*r.dw)[i] = static_cast<T>(dw_acc[i]);
    }
    if (need_db) {
        r.db = Tensor<T>({OC});
        for (std::size_t oc = 0; oc < OC; ++oc) {
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                acc += pairwise_sum(g.ptr() + (b * OC + oc) * OH * OW, OH * OW);
            (*r.db)[oc] = static_cast<T>(acc);
        }
    }
    return r;
}

/// out[b,o,p] = sum_i x[b,i,p] w[i,o] + bias[o] on NCHW maps.
template <Scalar T>
Tensor<T> channel_linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 4 || w.rank() != 2 || w.dim(0) != x.dim(1))
        throw ShapeError("channel linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const std::size_t B = x.dim(0), Ci = x.dim(1), P = x.dim(2) * x.dim(3), Co = w.dim(1);
    if (bias && (bias->rank() != 1 || bias->dim(0) != Co)) throw ShapeError("channel linear bias extent mismatch");
    Tensor<T> out({B, Co, x.dim(2), x.dim(3)});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o) {
            T* op = out.ptr() + (b * Co + o) * P;
            if (bias) std::fill(op, op + P, (*bias)[o]);
            for (std::size_t i = 0; i < Ci; ++i) {
                const T wv = w[i * Co + o];
                const T* ip = x.ptr() + (b * Ci + i) * P;
                for (std::size_t q = 0; q < P; ++q) op[q] += wv * ip[q];
            }
        }
    return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape operations

template <Scalar T>
Var<T> conv2d(Var<T> x, const Conv2dParams<T>& p) {
    const Tensor<T>* bias = p.bias ? &p.bias->value() : nullptr;
    Tensor<T> out = kernels::conv2d_forward(x.value(), p.weight.value(), bias, p.opts);
    std::vector<Var<T>> inputs{x, p.weight};
    if (p.bias) inputs.push_back(*p.bias);
    const bool has_bias = p.bias.has_value();
    return x.tape->record("conv2d", inputs, std::move(out),
                          [x, w = p.weight, o = p.opts, has_bias](const Tensor<T>& g, GradSink<T>& s) {
                              auto r = kernels::conv2d_backward(g, x.value(), w.value(), o, s.needs(0), s.needs(1),
                                                                has_bias && s.needs(2));
                              if (r.dx) s.add(0, std::move(*r.dx));
                              if (r.dw) s.add(1, std::move(*r.dw));
                              if (r.db) s.add(2, std::move(*r.db));
                          });
}

/// Batched affine map over the last axis: x[..., Din] · w[Din, Dout] + b.
template <Scalar T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b = std::nullopt) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (wv.rank() != 2 || xv.shape().back() != wv.dim(0))
        throw ShapeError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
    const std::size_t din = wv.dim(0), dout = wv.dim(1), rows = xv.numel() / din;
    if (b && (b->value().rank() != 1 || b->value().dim(0) != dout)) throw ShapeError("linear bias extent mismatch");
    Shape os = xv.shape();
    os.back() = dout;
    Tensor<T> out(os);
    std::vector<double> acc(dout);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < dout; ++o) acc[o] = b ? double(b->value()[o]) : 0.0;
        for (std::size_t i = 0; i < din; ++i) {
            const double xi = xv[r * din + i];
            for (std::size_t o = 0; o < dout; ++o) acc[o] += xi * double(wv[i * dout + o]);
        }
        for (std::size_t o = 0; o < dout; ++o) out[r * dout + o] = static_cast<T>(acc[o]);
    }
    std::vector<Var<T>> inputs{x, w};
    if (b) inputs.push_back(*b);
    const bool has_bias = b.has_value();
    return x.tape->record("linear", inputs, std::move(out),
                          [x, w, din, dout, rows, has_bias](const Tensor<T>& g, GradSink<T>& s) {
                              const auto& xv = x.value();
                              const auto& wv = w.value();
                              if (s.needs(0)) {
                                  Tensor<T> dx(xv.shape());
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t i = 0; i < din; ++i) {
                                          double a = 0.0;
                                          for (std::size_t o = 0; o < dout; ++o)
                                              a += double(g[r * dout + o]) * double(wv[i * dout + o]);
                                          dx[r * din + i] = static_cast<T>(a);
                                      }
                                  s.add(0, std::move(dx));
                              }
                              if (s.needs(1)) {
                                  std::vector<double> a(din * dout, 0.0);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t i = 0; i < din; ++i) {
                                          const double xi = xv[r * din + i];
                                          for (std::size_t o = 0; o < dout; ++o) a[i * dout + o] += xi * double(g[r * dout + o]);
                                      }
                                  Tensor<T> dw(wv.shape());
                                  for (std::size_t k = 0; k < a.size(); ++k) dw[k] = static_cast<T>(a[k]);
                                  s.add(1, std::move(dw));
                              }
                              if (has_bias && s.needs(2)) {
                                  Tensor<T> db({dout});
                                  for (std::size_t o = 0; o < dout; ++o) {
                                      double a = 0.0;
                                      for (std::size_t r = 0; r < rows; ++r) a += g[r * dout + o];
                                      db[o] = static_cast<T>(a);
                                  }
                                  s.add(2, std::move(db));
                              }
                          });
}

/// `linear` applied along the channel axis of an NCHW map, with w [Cin, Cout].
template <Scalar T>
Var<T> channel_linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b = std::nullopt) {
    Tensor<T> out = kernels::channel_linear_forward(x.value(), w.value(), b ? &b->value() : nullptr);
    std::vector<Var<T>> inputs{x, w};
    if (b) inputs.push_back(*b);
    const bool has_bias = b.has_value();
    return x.tape->record("channel_linear", inputs, std::move(out), [x, w, has_bias](const Tensor<T>& g, GradSink<T>& s) {
        const auto& xv = x.value();
        const auto& wv = w.value();
        const std::size_t B = xv.dim(0), Ci = xv.dim(1), P = xv.dim(2) * xv.dim(3), Co = wv.dim(1);
        if (s.needs(0)) {
            Tensor<T> dx(xv.shape());
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < Ci; ++i) {
                    T* dp = dx.ptr() + (b * Ci + i) * P;
                    for (std::size_t o = 0; o < Co; ++o) {
                        const T wv_io = wv[i * Co + o];
                        const T* gp = g.ptr() + (b * Co + o) * P;
                        for (std::size_t q = 0; q < P; ++q) dp[q] += wv_io * gp[q];
                    }
                }
            s.add(0, std::move(dx));
        }
        if (s.needs(1)) {
            Tensor<T> dw(wv.shape());
            for (std::size_t i = 0; i < Ci; ++i)
                for (std::size_t o = 0; o < Co; ++o) {
                    double a = 0.0;
                    for (std::size_t b = 0; b < B; ++b) {
                        const T* ip = xv.ptr() + (b * Ci + i) * P;
                        const T* gp = g.ptr() + (b * Co + o) * P;
                        for (std::size_t q = 0; q < P; ++q) a += double(ip[q]) * double(gp[q]);
                    }
                    dw[i * Co + o] = static_cast<T>(a);
                }
            s.add(1, std::move(dw));
        }
        if (has_bias && s.needs(2)) {
            Tensor<T> db({Co});
            for (std::size_t o = 0; o < Co; ++o) {
                double a = 0.0;
                for (std::size_t b = 0; b < B; ++b) a += pairwise_sum(g.ptr() + (b * Co + o) * P, P);
                db[o] = static_cast<T>(a);
            }
            s.add(2, std::move(db));
        }
    });
}

/// Max-subtracted softmax over the last axis.
template <Scalar T>
Var<T> softmax_lastdim(Var<T> x) {
    const auto& xv = x.value();
    const std::size_t n = xv.shape().back(), rows = xv.numel() / n;
    Tensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.ptr() + r * n;
        const double m = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += std::exp(double(in[i]) - m);
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = static_cast<T>(std::exp(double(in[i]) - m) / z);
    }
    return x.tape->record("softmax", {x}, out, [out, n, rows](const Tensor<T>& g, GradSink<T>& s) {
        Tensor<T> dx(out.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += double(g[r * n + i]) * double(out[r * n + i]);
            for (std::size_t i = 0; i < n; ++i)
                dx[r * n + i] = static_cast<T>(double(out[r * n + i]) * (double(g[r * n + i]) - dot));
        }
        s.add(0, std::move(dx));
    });
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <Scalar T>
Var<T> gelu(Var<T> x) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        const double v = xv[i];
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v))));
    }
    return x.tape->record("gelu", {x}, std::move(out), [x](const Tensor<T>& g, GradSink<T>& s) {
        const auto& xv = x.value();
        Tensor<T> dx(xv.shape());
        for (std::size_t i = 0; i < xv.numel(); ++i) {
            const double v = xv[i];
            const double t = std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v));
            const double du = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v);
            dx[i] = static_cast<T>(double(g[i]) * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du));
        }
        s.add(0, std::move(dx));
    });
}

/// Layer normalization over the channel axis of an NCHW map, per spatial
/// position (biased variance).
template <Scalar T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ParameterError("layernorm eps must be positive");
    const auto& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("layernorm expects NCHW input, got " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) throw ShapeError("layernorm affine extent mismatch");
    Tensor<T> xhat(xv.shape()), out(xv.shape());
    Tensor<T> inv_std({B, P});
    std::vector<double> mean(P), var(P);
    for (std::size_t b = 0; b < B; ++b) {
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            const T* ip = xv.ptr() + (b * C + c) * P;
            for (std::size_t q = 0; q < P; ++q) mean[q] += ip[q];
        }
        for (auto& m : mean) m /= double(C);
        for (std::size_t c = 0; c < C; ++c) {
            const T* ip = xv.ptr() + (b * C + c) * P;
            for (std::size_t q = 0; q < P; ++q) {
                const double d = double(ip[q]) - mean[q];
                var[q] += d * d;
            }
        }
        for (std::size_t q = 0; q < P; ++q) {
            const double is = 1.0 / std::sqrt(var[q] / double(C) + eps);
            inv_std[b * P + q] = static_cast<T>(is);
            var[q] = is;
        }
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * P;
            const double gc = gamma.value()[c], bc = beta.value()[c];
            for (std::size_t q = 0; q < P; ++q) {
                const double h = (double(xv[base + q]) - mean[q]) * var[q];
                xhat[base + q] = static_cast<T>(h);
                out[base + q] = static_cast<T>(gc * h + bc);
            }
        }
    }
    return x.tape->record("layernorm", {x, gamma, beta}, std::move(out),
                          [xhat, inv_std, gamma, B, C, P](const Tensor<T>& g, GradSink<T>& s) {
                              if (s.needs(0)) {
                                  Tensor<T> dx(xhat.shape());
                                  std::vector<double> m1(P), m2(P);
                                  for (std::size_t b = 0; b < B; ++b) {
                                      std::fill(m1.begin(), m1.end(), 0.0);
                                      std::fill(m2.begin(), m2.end(), 0.0);
                                      for (std::size_t c = 0; c < C; ++c) {
                                          const std::size_t base = (b * C + c) * P;
                                          const double gc = gamma.value()[c];
                                          for (std::size_t q = 0; q < P; ++q) {
                                              const double dh = double(g[base + q]) * gc;
                                              m1[q] += dh;
                                              m2[q] += dh * double(xhat[base + q]);
                                          }
                                      }
                                      for (std::size_t c = 0; c < C; ++c) {
                                          const std::size_t base = (b * C + c) * P;
                                          const double gc = gamma.value()[c];
                                          for (std::size_t q = 0; q < P; ++q) {
                                              const double dh = double(g[base + q]) * gc;
                                              dx[base + q] = static_cast<T>(
                                                  double(inv_std[b * P + q]) *
                                                  (dh - m1[q] / double(C) - double(xhat[base + q]) * m2[q] / double(C)));
                                          }
                                      }
                                  }
                                  s.add(0, std::move(dx));
                              }
                              if (s.needs(1) || s.needs(2)) {
                                  Tensor<T> dg({C}), db({C});
                                  for (std::size_t c = 0; c < C; ++c) {
                                      double ag = 0.0, ab = 0.0;
                                      for (std::size_t b = 0; b < B; ++b) {
                                          const std::size_t base = (b * C + c) * P;
                                          for (std::size_t q = 0; q < P; ++q) {
                                              ag += double(g[base + q]) * double(xhat[base + q]);
                                              ab += g[base + q];
                                          }
                                      }
                                      dg[c] = static_cast<T>(ag);
                                      db[c] = static_cast<T>(ab);
                                  }
                                  s.add(1, std::move(dg));
                                  s.add(2, std::move(db));
                              }
                          });
}

// ---------------------------------------------------------------------------
// Bilinear sampling with border replication

namespace detail {

inline long clamp_index(long i, std::size_t n) { return std::clamp(i, 0L, long(n) - 1); }

/// Four clamped corners and weights for a continuous (y, x) sample point.
struct BilinearTap {
    std::size_t i00, i01, i10, i11;  // flat offsets into an H×W plane
    double fy, fx;
    double w00, w01, w10, w11;

    BilinearTap(double y, double x, std::size_t H, std::size_t W) {
        const double y0 = std::floor(y), x0 = std::floor(x);
        fy = y - y0;
        fx = x - x0;
        const long ya = clamp_index(long(y0), H), yb = clamp_index(long(y0) + 1, H);
        const long xa = clamp_index(long(x0), W), xb = clamp_index(long(x0) + 1, W);
        i00 = std::size_t(ya) * W + std::size_t(xa);
        i01 = std::size_t(ya) * W + std::size_t(xb);
        i10 = std::size_t(yb) * W + std::size_t(xa);
        i11 = std::size_t(yb) * W + std::size_t(xb);
        w00 = (1.0 - fy) * (1.0 - fx);
        w01 = (1.0 - fy) * fx;
        w10 = fy * (1.0 - fx);
        w11 = fy * fx;
    }

    // `plane` addresses pixel p at plane[p * stride].
    template <class P>
    double sample(const P* plane, std::size_t stride = 1) const {
        return w00 * double(plane[i00 * stride]) + w01 * double(plane[i01 * stride]) +
               w10 * double(plane[i10 * stride]) + w11 * double(plane[i11 * stride]);
    }
    // Partial derivatives of the sample w.r.t. y and x; at integer coordinates
    // the floor cell's slope is used.
    template <class P>
    double d_dy(const P* plane, std::size_t stride = 1) const {
        return (1.0 - fx) * (double(plane[i10 * stride]) - double(plane[i00 * stride])) +
               fx * (double(plane[i11 * stride]) - double(plane[i01 * stride]));
    }
    template <class P>
    double d_dx(const P* plane, std::size_t stride = 1) const {
        return (1.0 - fy) * (double(plane[i01 * stride]) - double(plane[i00 * stride])) +
               fy * (double(plane[i11 * stride]) - double(plane[i10 * stride]));
    }
    template <class P>
    void scatter(P* plane, double g, std::size_t stride = 1) const {
        plane[i00 * stride] += static_cast<P>(w00 * g);
        plane[i01 * stride] += static_cast<P>(w01 * g);
        plane[i10 * stride] += static_cast<P>(w10 * g);
        plane[i11 * stride] += static_cast<P>(w11 * g);
    }
};

}  // namespace detail

/// Samples F [B,C,H,W] at continuous (y, x) points coords [B,P,2] → [B,C,P].
template <Scalar T>
Var<T> bilinear_sample(Var<T> F, Var<T> coords) {
    const auto& fv = F.value();
    const auto& cv = coords.value();
    if (fv.rank() != 4 || cv.rank() != 3 || cv.dim(0) != fv.dim(0) || cv.dim(2) != 2)
        throw ShapeError("bilinear_sample: feature " + shape_str(fv.shape()) + ", coords " + shape_str(cv.shape()));
    const std::size_t B = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3), P = cv.dim(1);
    Tensor<T> out({B, C, P});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const detail::BilinearTap tap(cv[(b * P + p) * 2], cv[(b * P + p) * 2 + 1], H, W);
            for (std::size_t c = 0; c < C; ++c)
                out[(b * C + c) * P + p] = static_cast<T>(tap.sample(fv.ptr() + (b * C + c) * H * W));
        }
    return F.tape->record("bilinear_sample", {F, coords}, std::move(out), [F, coords](const Tensor<T>& g, GradSink<T>& s) {
        const auto& fv = F.value();
        const auto& cv = coords.value();
        const std::size_t B = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3), P = cv.dim(1);
        std::optional<Tensor<T>> dF, dc;
        if (s.needs(0)) dF = Tensor<T>(fv.shape());
        if (s.needs(1)) dc = Tensor<T>(cv.shape());
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < P; ++p) {
                const detail::BilinearTap tap(cv[(b * P + p) * 2], cv[(b * P + p) * 2 + 1], H, W);
                double gy = 0.0, gx = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double gv = g[(b * C + c) * P + p];
                    const std::size_t plane = (b * C + c) * H * W;
                    if (dF) tap.scatter(dF->ptr() + plane, gv);
                    if (dc) {
                        gy += gv * tap.d_dy(fv.ptr() + plane);
                        gx += gv * tap.d_dx(fv.ptr() + plane);
                    }
                }
                if (dc) {
                    (*dc)[(b * P + p) * 2] = static_cast<T>(gy);
                    (*dc)[(b * P + p) * 2 + 1] = static_cast<T>(gx);
                }
            }
        if (dF) s.add(0, std::move(*dF));
        if (dc) s.add(1, std::move(*dc));
    });
}

// ---------------------------------------------------------------------------
// Layout operations on NCHW maps

template <Scalar T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat of nothing");
    const Shape& s0 = xs[0].shape();
    if (s0.size() != 4) throw ShapeError("concat_channels expects NCHW maps");
    std::size_t C = 0;
    std::vector<std::size_t> chans;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw ShapeError("concat_channels: " + shape_str(s) + " vs " + shape_str(s0));
        chans.push_back(s[1]);
        C += s[1];
    }
    const std::size_t B = s0[0], P = s0[2] * s0[3];
    Tensor<T> out({B, C, s0[2], s0[3]});
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const T* src = xs[k].value().ptr() + b * chans[k] * P;
            std::copy(src, src + chans[k] * P, out.ptr() + (b * C + c0) * P);
            c0 += chans[k];
        }
    }
    return xs[0].tape->record("concat_channels", xs, std::move(out), [chans, B, C, P, s0](const Tensor<T>& g, GradSink<T>& s) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
            if (s.needs(k)) {
                Tensor<T> d({B, chans[k], s0[2], s0[3]});
                for (std::size_t b = 0; b < B; ++b) {
                    const T* src = g.ptr() + (b * C + c0) * P;
                    std::copy(src, src + chans[k] * P, d.ptr() + b * chans[k] * P);
                }
                s.add(k, std::move(d));
            }
            c0 += chans[k];
        }
    });
}

/// Channels [c0, c1) of an NCHW map (copied).
template <Scalar T>
Var<T> slice_channels(Var<T> x, std::size_t c0, std::size_t c1) {
    const Shape& s = x.shape();
    if (s.size() != 4 || c0 >= c1 || c1 > s[1]) throw ShapeError("slice_channels out of range");
    const std::size_t B = s[0], C = s[1], P = s[2] * s[3], n = c1 - c0;
    Tensor<T> out({B, n, s[2], s[3]});
    for (std::size_t b = 0; b < B; ++b) {
        const T* src = x.value().ptr() + (b * C + c0) * P;
        std::copy(src, src + n * P, out.ptr() + b * n * P);
    }
    return x.tape->record("slice_channels", {x}, std::move(out), [s, c0, n, B, C, P](const Tensor<T>& g, GradSink<T>& sk) {
        Tensor<T> d(s);
        for (std::size_t b = 0; b < B; ++b) std::copy(g.ptr() + b * n * P, g.ptr() + (b + 1) * n * P, d.ptr() + (b * C + c0) * P);
        sk.add(0, std::move(d));
    });
}

/// [B, C·r², H, W] → [B, C, H·r, W·r]; channel c·r² + dy·r + dx lands at (y·r+dy, x·r+dx).
template <Scalar T>
Var<T> depth_to_space(Var<T> x, std::size_t r) {
    const Shape& s = x.shape();
    if (s.size() != 4 || r == 0 || s[1] % (r * r) != 0) throw ShapeError("depth_to_space: bad channel count");
    const std::size_t B = s[0], C = s[1] / (r * r), H = s[2], W = s[3];
    auto index_pair = [=](std::size_t b, std::size_t c, std::size_t dy, std::size_t dx, std::size_t y, std::size_t xx) {
        const std::size_t src = ((b * s[1] + c * r * r + dy * r + dx) * H + y) * W + xx;
        const std::size_t dst = ((b * C + c) * H * r + y * r + dy) * W * r + xx * r + dx;
        return std::pair{src, dst};
    };
    Tensor<T> out({B, C, H * r, W * r});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t dy = 0; dy < r; ++dy)
                for (std::size_t dx = 0; dx < r; ++dx)
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t xx = 0; xx < W; ++xx) {
                            auto [src, dst] = index_pair(b, c, dy, dx, y, xx);
                            out[dst] = x.value()[src];
                        }
    return x.tape->record("depth_to_space", {x}, std::move(out), [=](const Tensor<T>& g, GradSink<T>& sk) {
        Tensor<T> d(s);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t dy = 0; dy < r; ++dy)
                    for (std::size_t dx = 0; dx < r; ++dx)
                        for (std::size_t y = 0; y < H; ++y)
                            for (std::size_t xx = 0; xx < W; ++xx) {
                                auto [src, dst] = index_pair(b, c, dy, dx, y, xx);
                                d[src] = g[dst];
                            }
        sk.add(0, std::move(d));
    });
}

/// Replication padding on the bottom and right edges.
template <Scalar T>
Var<T> pad_replicate(Var<T> x, std::size_t pad_h, std::size_t pad_w) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("pad_replicate expects NCHW");
    const std::size_t N = s[0] * s[1], H = s[2], W = s[3], OH = H + pad_h, OW = W + pad_w;
    Tensor<T> out({s[0], s[1], OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t xx = 0; xx < OW; ++xx)
                out[(n * OH + y) * OW + xx] = x.value()[(n * H + std::min(y, H - 1)) * W + std::min(xx, W - 1)];
    return x.tape->record("pad_replicate", {x}, std::move(out), [=](const Tensor<T>& g, GradSink<T>& sk) {
        Tensor<T> d(s);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t xx = 0; xx < OW; ++xx)
                    d[(n * H + std::min(y, H - 1)) * W + std::min(xx, W - 1)] += g[(n * OH + y) * OW + xx];
        sk.add(0, std::move(d));
    });
}

/// Top-left H×W crop.
template <Scalar T>
Var<T> crop(Var<T> x, std::size_t H, std::size_t W) {
    const Shape& s = x.shape();
    if (s.size() != 4 || H > s[2] || W > s[3] || H == 0 || W == 0) throw ShapeError("crop out of range");
    const std::size_t N = s[0] * s[1], IH = s[2], IW = s[3];
    Tensor<T> out({s[0], s[1], H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            std::copy_n(x.value().ptr() + (n * IH + y) * IW, W, out.ptr() + (n * H + y) * W);
    return x.tape->record("crop", {x}, std::move(out), [=](const Tensor<T>& g, GradSink<T>& sk) {
        Tensor<T> d(s);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t y = 0; y < H; ++y) std::copy_n(g.ptr() + (n * H + y) * W, W, d.ptr() + (n * IH + y) * IW);
        sk.add(0, std::move(d));
    });
}

}  // namespace dswinir
