#pragma once

// Straight-line reference implementations. Everything here is written from
// the definitions with plain loops in double precision and deliberately
// depends on nothing but the tensor container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dswinir/tensor.hpp"

namespace dswinir::oracle {

struct ConvW {
    TensorD w;  // [out, in/groups, k, k]
    TensorD b;  // [out]
    std::size_t stride = 1, pad = 0, dilation = 1, groups = 1;
};

struct GroupW {
    std::size_t heads = 1, k = 3;
    TensorD bias;  // [heads, k, k]
    bool has_offsets = false;
    ConvW dw, pw1, pw2;
};

struct AttnW {
    TensorD wq, bq, wk, bk, wv, bv, wo, bo;  // [C, C] as (in, out) and [C]
    std::size_t heads = 1;
    std::vector<GroupW> groups;
    TensorD window_bias;  // [heads, 2M-1, 2M-1] for the window baseline
};

struct FfnW {
    bool msg = true;
    std::size_t hidden = 0;
    ConvW expand;
    std::vector<ConvW> branches;
    ConvW fuse;
    ConvW project;
};

struct BlockW {
    TensorD n1g, n1b, n2g, n2b;
    AttnW attn;
    FfnW ffn;
};

// ---------------------------------------------------------------------------
// Primitives

inline TensorD naive_conv2d(const TensorD& x, const ConvW& c) {
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = c.w.dim(0), cpg = c.w.dim(1), K = c.w.dim(2);
    const std::size_t span = c.dilation * (K - 1) + 1;
    const std::size_t Ho = (H + 2 * c.pad - span) / c.stride + 1, Wo = (W + 2 * c.pad - span) / c.stride + 1;
    const std::size_t opg = Cout / c.groups;
    (void)Cin;
    TensorD y({B, Cout, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Cout; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = c.b.numel() == Cout ? c.b[o] : 0.0;
                    for (std::size_t ci = 0; ci < cpg; ++ci) {
                        const std::size_t in_c = (o / opg) * cpg + ci;
                        for (std::size_t u = 0; u < K; ++u)
                            for (std::size_t v = 0; v < K; ++v) {
                                const long yy = long(i * c.stride + u * c.dilation) - long(c.pad);
                                const long xx = long(j * c.stride + v * c.dilation) - long(c.pad);
                                if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                                s += c.w.at({o, ci, u, v}) * x.at({b, in_c, std::size_t(yy), std::size_t(xx)});
                            }
                    }
                    y.at({b, o, i, j}) = s;
                }
    return y;
}

inline TensorD naive_matmul(const TensorD& a, const TensorD& b) {
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    TensorD c({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a.at({i, t}) * b.at({t, j});
            c.at({i, j}) = s;
        }
    return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    std::vector<double> e(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += (e[i] = std::exp(z[i] - m));
    for (double& v : e) v /= s;
    return e;
}

/// Softmax over the last axis.
inline TensorD naive_softmax(const TensorD& x) {
    const std::size_t n = x.dim(x.rank() - 1), rows = x.numel() / n;
    TensorD y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> z(x.ptr() + r * n, x.ptr() + (r + 1) * n);
        const auto e = naive_softmax(z);
        std::copy(e.begin(), e.end(), y.ptr() + r * n);
    }
    return y;
}

/// x[..., Din] · w[Din, Dout] + b.
inline TensorD naive_linear(const TensorD& x, const TensorD& w, const TensorD* b = nullptr) {
    const std::size_t din = w.dim(0), dout = w.dim(1), rows = x.numel() / din;
    Shape s = x.shape();
    s.back() = dout;
    TensorD y(s);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = b ? (*b)[o] : 0.0;
            for (std::size_t i = 0; i < din; ++i) acc += x[r * din + i] * w.at({i, o});
            y[r * dout + o] = acc;
        }
    return y;
}

inline double naive_gelu(double v) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
}

inline TensorD naive_gelu(const TensorD& x) {
    TensorD y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = naive_gelu(x[i]);
    return y;
}

/// Normalizes over channels at every (b, y, x).
inline TensorD naive_layernorm(const TensorD& x, const TensorD& g, const TensorD& beta, double eps = 1e-5) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorD y(x.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double mu = 0.0;
                for (std::size_t c = 0; c < C; ++c) mu += x.at({b, c, i, j});
                mu /= double(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) var += (x.at({b, c, i, j}) - mu) * (x.at({b, c, i, j}) - mu);
                var /= double(C);
                for (std::size_t c = 0; c < C; ++c)
                    y.at({b, c, i, j}) = (x.at({b, c, i, j}) - mu) / std::sqrt(var + eps) * g[c] + beta[c];
            }
    return y;
}

/// Bilinear read at continuous (y, x) from a replicated-border plane, written
/// as a tent-weighted sum over the neighbouring integer grid points.
inline double naive_bilinear(const double* plane, std::size_t H, std::size_t W, double y, double x) {
    double s = 0.0;
    const long y0 = long(std::floor(y)), x0 = long(std::floor(x));
    for (long yc = y0; yc <= y0 + 1; ++yc)
        for (long xc = x0; xc <= x0 + 1; ++xc) {
            const double wgt = std::max(0.0, 1.0 - std::abs(y - double(yc))) * std::max(0.0, 1.0 - std::abs(x - double(xc)));
            if (wgt == 0.0) continue;
            const long yr = std::min(std::max(yc, 0L), long(H) - 1), xr = std::min(std::max(xc, 0L), long(W) - 1);
            s += wgt * plane[std::size_t(yr) * W + std::size_t(xr)];
        }
    return s;
}

/// F [B,C,H,W] sampled at coords [B,P,2] → [B,C,P].
inline TensorD naive_bilinear_sample(const TensorD& F, const TensorD& coords) {
    const std::size_t B = F.dim(0), C = F.dim(1), H = F.dim(2), W = F.dim(3), P = coords.dim(1);
    TensorD out({B, C, P});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p)
                out.at({b, c, p}) = naive_bilinear(F.ptr() + (b * C + c) * H * W, H, W, coords.at({b, p, 0}),
                                                   coords.at({b, p, 1}));
    return out;
}

// ---------------------------------------------------------------------------
// Attention

namespace detail {

// Per-pixel channel vector of a [B,C,H,W] map after an (in, out) projection.
inline TensorD project_map(const TensorD& x, const TensorD& w, const TensorD& b) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1);
    TensorD y({B, O, H, W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                for (std::size_t o = 0; o < O; ++o) {
                    double s = b[o];
                    for (std::size_t c = 0; c < C; ++c) s += x.at({n, c, i, j}) * w.at({c, o});
                    y.at({n, o, i, j}) = s;
                }
    return y;
}

inline std::size_t clampi(long v, std::size_t n) { return std::size_t(std::min(std::max(v, 0L), long(n) - 1)); }

}  // namespace detail

/// Non-overlapping M×M window attention with relative position bias.
inline TensorD naive_window_attention(const TensorD& X, const AttnW& p, std::size_t M) {
    const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), d = C / p.heads;
    const TensorD q = detail::project_map(X, p.wq, p.bq), k = detail::project_map(X, p.wk, p.bk),
                  v = detail::project_map(X, p.wv, p.bv);
    const std::size_t Mt = (p.window_bias.dim(1) + 1) / 2;  // table may serve a larger window
    TensorD y({B, C, H, W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t h = 0; h < p.heads; ++h)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const std::size_t wy = i / M * M, wx = j / M * M;
                    std::vector<double> logits;
                    std::vector<std::pair<std::size_t, std::size_t>> keys;
                    for (std::size_t a = wy; a < wy + M; ++a)
                        for (std::size_t c = wx; c < wx + M; ++c) {
                            double s = 0.0;
                            for (std::size_t e = 0; e < d; ++e) s += q.at({n, h * d + e, i, j}) * k.at({n, h * d + e, a, c});
                            s /= std::sqrt(double(d));
                            s += p.window_bias.at({h, a + Mt - 1 - i, c + Mt - 1 - j});
                            logits.push_back(s);
                            keys.emplace_back(a, c);
                        }
                    const auto alpha = naive_softmax(logits);
                    for (std::size_t e = 0; e < d; ++e) {
                        double s = 0.0;
                        for (std::size_t t = 0; t < keys.size(); ++t)
                            s += alpha[t] * v.at({n, h * d + e, keys[t].first, keys[t].second});
                        y.at({n, h * d + e, i, j}) = s;
                    }
                }
    return detail::project_map(y, p.wo, p.bo);
}

/// Offset field [B, 2k², H, W] of a group, predicted from the query map.
inline TensorD naive_predict_offsets(const TensorD& qmap, const GroupW& g) {
    return naive_conv2d(naive_gelu(naive_conv2d(naive_conv2d(qmap, g.dw), g.pw1)), g.pw2);
}

/// Grouped neighbourhood attention. For group g, offsets[g] (if present and
/// non-empty) deforms the sampling points; otherwise the rigid k×k grid with
/// replicated borders is used.
inline TensorD naive_grouped_attention(const TensorD& X, const AttnW& p, const std::vector<std::optional<TensorD>>& offsets) {
    const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), d = C / p.heads;
    const TensorD q = detail::project_map(X, p.wq, p.bq), k = detail::project_map(X, p.wk, p.bk),
                  v = detail::project_map(X, p.wv, p.bv);
    TensorD y({B, C, H, W});
    std::size_t head0 = 0;
    for (std::size_t gi = 0; gi < p.groups.size(); ++gi) {
        const GroupW& g = p.groups[gi];
        const long r = long(g.k - 1) / 2;
        const TensorD* off = gi < offsets.size() && offsets[gi] ? &*offsets[gi] : nullptr;
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t hl = 0; hl < g.heads; ++hl) {
                const std::size_t h = head0 + hl;
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) {
                        std::vector<double> logits;
                        std::vector<std::vector<double>> vals;
                        for (long u = -r; u <= r; ++u)
                            for (long w = -r; w <= r; ++w) {
                                const std::size_t slot = std::size_t((u + r) * long(g.k) + (w + r));
                                std::vector<double> kv(d), vv(d);
                                if (off) {
                                    const double yy = double(long(i) + u) + off->at({n, 2 * slot, i, j});
                                    const double xx = double(long(j) + w) + off->at({n, 2 * slot + 1, i, j});
                                    for (std::size_t e = 0; e < d; ++e) {
                                        kv[e] = naive_bilinear(k.ptr() + (n * C + h * d + e) * H * W, H, W, yy, xx);
                                        vv[e] = naive_bilinear(v.ptr() + (n * C + h * d + e) * H * W, H, W, yy, xx);
                                    }
                                } else {
                                    const std::size_t a = detail::clampi(long(i) + u, H), c = detail::clampi(long(j) + w, W);
                                    for (std::size_t e = 0; e < d; ++e) {
                                        kv[e] = k.at({n, h * d + e, a, c});
                                        vv[e] = v.at({n, h * d + e, a, c});
                                    }
                                }
                                double s = 0.0;
                                for (std::size_t e = 0; e < d; ++e) s += q.at({n, h * d + e, i, j}) * kv[e];
                                logits.push_back(s / std::sqrt(double(d)) + g.bias.at({hl, std::size_t(u + r), std::size_t(w + r)}));
                                vals.push_back(vv);
                            }
                        const auto alpha = naive_softmax(logits);
                        for (std::size_t e = 0; e < d; ++e) {
                            double s = 0.0;
                            for (std::size_t t = 0; t < alpha.size(); ++t) s += alpha[t] * vals[t][e];
                            y.at({n, h * d + e, i, j}) = s;
                        }
                    }
            }
        head0 += g.heads;
    }
    return detail::project_map(y, p.wo, p.bo);
}

inline TensorD naive_sliding_attention(const TensorD& X, const AttnW& p) { return naive_grouped_attention(X, p, {}); }

/// Deformable attention with the given per-group offset fields.
inline TensorD naive_dswin(const TensorD& X, const AttnW& p, const std::vector<std::optional<TensorD>>& offsets) {
    return naive_grouped_attention(X, p, offsets);
}

/// Multi-scale deformable attention with offsets predicted from the queries.
inline TensorD naive_ms_dswin(const TensorD& X, const AttnW& p) {
    const TensorD q = detail::project_map(X, p.wq, p.bq);
    std::vector<std::optional<TensorD>> offsets;
    for (const auto& g : p.groups) offsets.push_back(g.has_offsets ? std::optional(naive_predict_offsets(q, g)) : std::nullopt);
    return naive_grouped_attention(X, p, offsets);
}

// ---------------------------------------------------------------------------
// Feed-forward and block

inline TensorD naive_msg_ffn(const TensorD& x, const FfnW& f) {
    if (!f.msg) return naive_conv2d(naive_gelu(naive_conv2d(x, f.expand)), f.project);
    const TensorD h = naive_conv2d(x, f.expand);
    const std::size_t B = h.dim(0), H = h.dim(2), W = h.dim(3), R = f.hidden;
    TensorD content({B, R, H, W}), gate({B, R, H, W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < R; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    content.at({n, c, i, j}) = h.at({n, c, i, j});
                    gate.at({n, c, i, j}) = h.at({n, R + c, i, j});
                }
    const std::size_t nb = f.branches.size();
    TensorD cat({B, nb * R, H, W});
    for (std::size_t t = 0; t < nb; ++t) {
        const TensorD o = naive_conv2d(gate, f.branches[t]);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < R; ++c)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) cat.at({n, t * R + c, i, j}) = o.at({n, c, i, j});
    }
    const TensorD g = naive_gelu(naive_conv2d(cat, f.fuse));
    TensorD prod(content.shape());
    for (std::size_t i = 0; i < prod.numel(); ++i) prod[i] = content[i] * g[i];
    return naive_conv2d(prod, f.project);
}

inline TensorD naive_dstb(const TensorD& x, const BlockW& p) {
    const TensorD a = p.attn.window_bias.numel() > 1 && p.attn.groups.empty()
                          ? naive_window_attention(naive_layernorm(x, p.n1g, p.n1b), p.attn,
                                                   std::min({(p.attn.window_bias.dim(1) + 1) / 2, x.dim(2), x.dim(3)}))
                          : naive_ms_dswin(naive_layernorm(x, p.n1g, p.n1b), p.attn);
    TensorD y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x[i] + a[i];
    const TensorD f = naive_msg_ffn(naive_layernorm(y, p.n2g, p.n2b), p.ffn);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += f[i];
    return y;
}

// ---------------------------------------------------------------------------
// Reports

struct OracleReport {
    std::string kernel;
    Shape shape;
    double max_abs_diff = 0.0;
    double max_rel_diff = 0.0;
    bool pass = false;
};

/// Compares a kernel result with its reference; relative differences use the
/// denominator max(1, |reference|).
template <class T>
OracleReport compare(const std::string& kernel, const Tensor<T>& got, const TensorD& ref, double tol) {
    OracleReport r{kernel, ref.shape(), 0.0, 0.0, false};
    if (got.shape() != ref.shape()) return r;
    for (std::size_t i = 0; i < ref.numel(); ++i) {
        const double a = std::abs(double(got[i]) - ref[i]);
        r.max_abs_diff = std::max(r.max_abs_diff, a);
        r.max_rel_diff = std::max(r.max_rel_diff, a / std::max(1.0, std::abs(ref[i])));
    }
    r.pass = r.max_rel_diff <= tol;
    return r;
}

template <class T>
constexpr double tolerance() {
    return sizeof(T) == 4 ? 1e-5 : 1e-10;
}

}  // namespace dswinir::oracle
