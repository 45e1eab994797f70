#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dswinir/autograd.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/params.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

enum class AttentionKind { window, sliding };

/// Shape-level description of one attention module.
struct AttentionConfig {
    std::size_t channels = 8;
    std::size_t heads = 1;
    // One kernel size per head group; heads are split evenly across groups.
    std::vector<std::size_t> kernel_sizes{7};
    bool offsets_enabled = true;
    AttentionKind kind = AttentionKind::sliding;
    std::size_t window_size = 8;  // used by the window baseline only

    std::size_t groups() const { return kernel_sizes.size(); }
    std::size_t head_dim() const { return channels / heads; }
    std::size_t heads_per_group() const { return heads / groups(); }

    void validate() const {
        if (heads == 0 || channels % heads != 0)
            throw ParameterError("channels " + std::to_string(channels) + " not divisible by heads " +
                                 std::to_string(heads));
        if (kind == AttentionKind::window) {
            if (window_size == 0) throw ParameterError("window size must be positive");
            return;
        }
        if (kernel_sizes.empty()) throw ParameterError("at least one kernel size is required");
        if (heads % kernel_sizes.size() != 0)
            throw ParameterError("heads " + std::to_string(heads) + " not divisible by " +
                                 std::to_string(kernel_sizes.size()) + " kernel-size groups");
        for (auto k : kernel_sizes)
            if (k % 2 == 0 || k < 3) throw ParameterError("kernel size must be odd and >= 3, got " + std::to_string(k));
    }
};

/// f_theta for one head group: depthwise k×k → pointwise → GELU → pointwise to 2k² channels.
template <Scalar T>
struct OffsetNet {
    Conv2dParams<T> depthwise, pointwise, project;
};

template <Scalar T>
struct HeadGroup {
    std::size_t heads = 1;
    std::size_t kernel = 3;
    Var<T> bias;  // [heads, kernel, kernel], indexed by the nominal (u, v) slot
    std::optional<OffsetNet<T>> offsets;
};

/// Attention weights bound on a tape.
template <Scalar T>
struct AttentionParams {
    Var<T> wq, bq, wk, bk, wv, bv, wo, bo;  // [C, C] and [C]
    std::size_t channels = 0;
    std::size_t heads = 1;
    std::vector<HeadGroup<T>> groups;
    std::optional<Var<T>> window_bias;  // [heads, 2M-1, 2M-1]
    std::size_t window_size = 0;
};

/// Optional capture of intermediate attention quantities.
template <Scalar T>
struct AttentionTrace {
    std::vector<Tensor<T>> weights;  // per group: [B, heads_g, H*W, k²]
    std::vector<Tensor<T>> offsets;  // per group: [B, 2k², H, W] (empty tensor list when disabled)
};

// ---------------------------------------------------------------------------
// Parameter creation

template <Scalar T>
void init_attention(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t C = cfg.channels;
    for (const char* n : {"q", "k", "v", "o"}) {
        const std::string w = prefix + ".w" + n;
        store.add(w, fan_in_uniform<T>({C, C}, C, seed, w));
        store.add(prefix + ".b" + n, Tensor<T>({C}));
    }
    if (cfg.kind == AttentionKind::window) {
        const std::size_t R = 2 * cfg.window_size - 1;
        store.add(prefix + ".rel_bias", Tensor<T>({cfg.heads, R, R}));
        return;
    }
    for (std::size_t g = 0; g < cfg.groups(); ++g) {
        const std::size_t k = cfg.kernel_sizes[g];
        const std::string gp = prefix + ".g" + std::to_string(g);
        store.add(gp + ".bias", Tensor<T>({cfg.heads_per_group(), k, k}));
        if (cfg.offsets_enabled) {
            init_conv(store, gp + ".off.dw", C, C, k, C, seed);
            init_conv(store, gp + ".off.pw1", C, C, 1, 1, seed);
            init_conv(store, gp + ".off.pw2", C, 2 * k * k, 1, 1, seed, /*zero=*/true);
        }
    }
}

template <Scalar T>
AttentionParams<T> bind_attention(Binder<T>& bind, const std::string& prefix, const AttentionConfig& cfg) {
    cfg.validate();
    AttentionParams<T> p;
    p.wq = bind(prefix + ".wq");
    p.bq = bind(prefix + ".bq");
    p.wk = bind(prefix + ".wk");
    p.bk = bind(prefix + ".bk");
    p.wv = bind(prefix + ".wv");
    p.bv = bind(prefix + ".bv");
    p.wo = bind(prefix + ".wo");
    p.bo = bind(prefix + ".bo");
    p.channels = cfg.channels;
    p.heads = cfg.heads;
    if (cfg.kind == AttentionKind::window) {
        p.window_bias = bind(prefix + ".rel_bias");
        p.window_size = cfg.window_size;
        return p;
    }
    for (std::size_t g = 0; g < cfg.groups(); ++g) {
        const std::size_t k = cfg.kernel_sizes[g];
        const std::string gp = prefix + ".g" + std::to_string(g);
        HeadGroup<T> hg{cfg.heads_per_group(), k, bind(gp + ".bias"), std::nullopt};
        if (cfg.offsets_enabled) {
            hg.offsets = OffsetNet<T>{
                bind_conv(bind, gp + ".off.dw", Conv2dOptions{1, (k - 1) / 2, 1, cfg.channels}),
                bind_conv(bind, gp + ".off.pw1", Conv2dOptions{}),
                bind_conv(bind, gp + ".off.pw2", Conv2dOptions{}),
            };
        }
        p.groups.push_back(std::move(hg));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Kernels

namespace detail {

// [B, heads*d, H, W] → [B, heads, H*W, d]
template <Scalar T>
std::vector<T> to_token_major(const Tensor<T>& x, std::size_t heads) {
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3), d = C / heads;
    std::vector<T> out(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t c = 0; c < d; ++c) {
                const T* src = x.ptr() + (b * C + h * d + c) * P;
                T* dst = out.data() + (b * heads + h) * P * d + c;
                for (std::size_t p = 0; p < P; ++p) dst[p * d] = src[p];
            }
    return out;
}

template <Scalar T, class S>
Tensor<T> from_token_major(const std::vector<S>& t, const Shape& shape, std::size_t heads) {
    const std::size_t B = shape[0], C = shape[1], P = shape[2] * shape[3], d = C / heads;
    Tensor<T> out(shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t c = 0; c < d; ++c) {
                const S* src = t.data() + (b * heads + h) * P * d + c;
                T* dst = out.ptr() + (b * C + h * d + c) * P;
                for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<T>(src[p * d]);
            }
    return out;
}

// Where each of the k² neighborhood points of one query reads from: an
// integer pixel (sliding) or a bilinear tap (deformable).
struct PointSampler {
    std::size_t H, W, k;
    long r;
    std::vector<BilinearTap> taps;
    std::vector<std::size_t> pix;
    bool deformable;

    PointSampler(std::size_t H_, std::size_t W_, std::size_t k_, bool deformable_)
        : H(H_), W(W_), k(k_), r(long(k_ - 1) / 2), deformable(deformable_) {
        if (deformable) taps.reserve(k * k);
        else pix.resize(k * k);
    }

    // offs points at channel 0 of the [2k², H, W] offset field for one batch item.
    template <class T>
    void locate(std::size_t i, std::size_t j, const T* offs) {
        const std::size_t HW = H * W;
        if (deformable) taps.clear();
        for (std::size_t n = 0; n < k * k; ++n) {
            const long u = long(n / k) - r, v = long(n % k) - r;
            if (deformable) {
                const double y = double(long(i) + u) + double(offs[(2 * n) * HW + i * W + j]);
                const double x = double(long(j) + v) + double(offs[(2 * n + 1) * HW + i * W + j]);
                taps.emplace_back(y, x, H, W);
            } else {
                pix[n] = std::size_t(clamp_index(long(i) + u, H)) * W + std::size_t(clamp_index(long(j) + v, W));
            }
        }
    }

    // Sampled feature vector of point n from token-major base [H*W, d].
    template <class T>
    void sample(std::size_t n, const T* base, std::size_t d, double* out) const {
        if (deformable) {
            for (std::size_t c = 0; c < d; ++c) out[c] = taps[n].sample(base + c, d);
        } else {
            const T* src = base + pix[n] * d;
            for (std::size_t c = 0; c < d; ++c) out[c] = double(src[c]);
        }
    }

    template <class A>
    void scatter(std::size_t n, A* base, std::size_t d, const double* g) const {
        if (deformable) {
            for (std::size_t c = 0; c < d; ++c) taps[n].scatter(base + c, g[c], d);
        } else {
            A* dst = base + pix[n] * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += static_cast<A>(g[c]);
        }
    }
};

struct NeighborhoodSaved {
    std::size_t heads, kernel;
};

}  // namespace detail

/// Token-centric neighborhood attention over q, k, v [B, heads*d, H, W] with
/// per-head bias [heads, k, k]. With `offsets` [B, 2k², H, W] the keys and
/// values of point (u, v) are bilinearly sampled at (i+u+dy, j+v+dx); without
/// them they are read at the clamped integer position. Optional `weights_out`
/// receives the attention weights [B, heads, H*W, k²].
template <Scalar T>
Var<T> neighborhood_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> bias, std::optional<Var<T>> offsets,
                              std::size_t heads, std::size_t kernel, Tensor<T>* weights_out = nullptr) {
    if (kernel % 2 == 0) throw ParameterError("neighborhood kernel size must be odd, got " + std::to_string(kernel));
    const Shape& s = q.shape();
    if (s.size() != 4 || k.shape() != s || v.shape() != s)
        throw ShapeError("neighborhood attention expects matching NCHW q/k/v");
    if (heads == 0 || s[1] % heads != 0) throw ParameterError("channels not divisible by heads");
    if (bias.shape() != Shape{heads, kernel, kernel})
        throw ShapeError("bias table " + shape_str(bias.shape()) + " does not match heads/kernel");
    const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], P = H * W, d = C / heads, K2 = kernel * kernel;
    if (offsets && offsets->shape() != Shape{B, 2 * K2, H, W})
        throw ShapeError("offset field " + shape_str(offsets->shape()) + " does not match");
    const double scale = 1.0 / std::sqrt(double(d));

    const std::vector<T> qt = detail::to_token_major(q.value(), heads);
    const std::vector<T> kt = detail::to_token_major(k.value(), heads);
    const std::vector<T> vt = detail::to_token_major(v.value(), heads);
    std::vector<double> ot(qt.size(), 0.0);
    Tensor<T> alpha({B, heads, P, K2});
    const T* bt = bias.value().ptr();

    detail::PointSampler sampler(H, W, kernel, offsets.has_value());
    std::vector<double> ks(K2 * d), vs(K2 * d), logit(K2);
    for (std::size_t b = 0; b < B; ++b) {
        const T* offs = offsets ? offsets->value().ptr() + b * 2 * K2 * P : nullptr;
        for (std::size_t p = 0; p < P; ++p) {
            sampler.locate(p / W, p % W, offs);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t base = (b * heads + h) * P * d;
                const T* qv = qt.data() + base + p * d;
                double mx = -INFINITY;
                for (std::size_t n = 0; n < K2; ++n) {
                    sampler.sample(n, kt.data() + base, d, ks.data() + n * d);
                    sampler.sample(n, vt.data() + base, d, vs.data() + n * d);
                    double dot = 0.0;
                    for (std::size_t c = 0; c < d; ++c) dot += double(qv[c]) * ks[n * d + c];
                    logit[n] = dot * scale + double(bt[h * K2 + n]);
                    mx = std::max(mx, logit[n]);
                }
                double z = 0.0;
                for (std::size_t n = 0; n < K2; ++n) z += (logit[n] = std::exp(logit[n] - mx));
                double* o = ot.data() + base + p * d;
                T* a = alpha.ptr() + ((b * heads + h) * P + p) * K2;
                for (std::size_t n = 0; n < K2; ++n) {
                    const double w = logit[n] / z;
                    a[n] = static_cast<T>(w);
                    for (std::size_t c = 0; c < d; ++c) o[c] += w * vs[n * d + c];
                }
            }
        }
    }
    Tensor<T> out = detail::from_token_major<T>(ot, s, heads);
    if (weights_out) *weights_out = alpha;

    std::vector<Var<T>> inputs{q, k, v, bias};
    if (offsets) inputs.push_back(*offsets);
    return q.tape->record(
        offsets ? "dswin_attention" : "sliding_attention", inputs, std::move(out),
        [q, k, v, offsets, alpha, heads, kernel, scale, bt_var = bias](const Tensor<T>& g, GradSink<T>& sk) {
            const Shape& s = q.shape();
            const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], P = H * W, d = C / heads, K2 = kernel * kernel;
            const std::vector<T> qt = detail::to_token_major(q.value(), heads);
            const std::vector<T> kt = detail::to_token_major(k.value(), heads);
            const std::vector<T> vt = detail::to_token_major(v.value(), heads);
            const std::vector<T> gt = detail::to_token_major(g, heads);
            const T* bt = bt_var.value().ptr();
            (void)bt;
            std::vector<double> dq(qt.size(), 0.0), dk(qt.size(), 0.0), dv(qt.size(), 0.0);
            std::vector<double> dbias(heads * K2, 0.0);
            std::optional<Tensor<T>> doff;
            std::vector<double> doff_acc;
            if (offsets && sk.needs(4)) doff_acc.assign(B * 2 * K2 * P, 0.0);
            const bool need_coords = !doff_acc.empty();

            detail::PointSampler sampler(H, W, kernel, offsets.has_value());
            std::vector<double> ks(K2 * d), vs(K2 * d), da(K2), dl(K2), dks(d), dvs(d);
            for (std::size_t b = 0; b < B; ++b) {
                const T* offs = offsets ? offsets->value().ptr() + b * 2 * K2 * P : nullptr;
                for (std::size_t p = 0; p < P; ++p) {
                    sampler.locate(p / W, p % W, offs);
                    for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t base = (b * heads + h) * P * d;
                        const T* qv = qt.data() + base + p * d;
                        const T* gv = gt.data() + base + p * d;
                        const T* a = alpha.ptr() + ((b * heads + h) * P + p) * K2;
                        double sdot = 0.0;
                        for (std::size_t n = 0; n < K2; ++n) {
                            sampler.sample(n, kt.data() + base, d, ks.data() + n * d);
                            sampler.sample(n, vt.data() + base, d, vs.data() + n * d);
                            double acc = 0.0;
                            for (std::size_t c = 0; c < d; ++c) acc += double(gv[c]) * vs[n * d + c];
                            da[n] = acc;
                            sdot += double(a[n]) * acc;
                        }
                        double* dqv = dq.data() + base + p * d;
                        for (std::size_t n = 0; n < K2; ++n) {
                            dl[n] = double(a[n]) * (da[n] - sdot);
                            dbias[h * K2 + n] += dl[n];
                            for (std::size_t c = 0; c < d; ++c) {
                                dqv[c] += scale * dl[n] * ks[n * d + c];
                                dks[c] = scale * dl[n] * double(qv[c]);
                                dvs[c] = double(a[n]) * double(gv[c]);
                            }
                            sampler.scatter(n, dk.data() + base, d, dks.data());
                            sampler.scatter(n, dv.data() + base, d, dvs.data());
                            if (need_coords) {
                                const auto& tap = sampler.taps[n];
                                double gy = 0.0, gx = 0.0;
                                for (std::size_t c = 0; c < d; ++c) {
                                    gy += dks[c] * tap.d_dy(kt.data() + base + c, d) +
                                          dvs[c] * tap.d_dy(vt.data() + base + c, d);
                                    gx += dks[c] * tap.d_dx(kt.data() + base + c, d) +
                                          dvs[c] * tap.d_dx(vt.data() + base + c, d);
                                }
                                doff_acc[(b * 2 * K2 + 2 * n) * P + p] += gy;
                                doff_acc[(b * 2 * K2 + 2 * n + 1) * P + p] += gx;
                            }
                        }
                    }
                }
            }
            if (sk.needs(0)) sk.add(0, detail::from_token_major<T>(dq, s, heads));
            if (sk.needs(1)) sk.add(1, detail::from_token_major<T>(dk, s, heads));
            if (sk.needs(2)) sk.add(2, detail::from_token_major<T>(dv, s, heads));
            if (sk.needs(3)) {
                Tensor<T> db({heads, kernel, kernel});
                for (std::size_t i = 0; i < db.numel(); ++i) db[i] = static_cast<T>(dbias[i]);
                sk.add(3, std::move(db));
            }
            if (need_coords) {
                Tensor<T> dof({B, 2 * K2, H, W});
                for (std::size_t i = 0; i < dof.numel(); ++i) dof[i] = static_cast<T>(doff_acc[i]);
                sk.add(4, std::move(dof));
            }
        });
}

/// Non-overlapping M×M window attention with relative position bias. The table
/// [heads, 2Mt-1, 2Mt-1] may belong to a larger window Mt ≥ M; it is indexed by
/// (key - query) + (Mt - 1).
template <Scalar T>
Var<T> window_attention_core(Var<T> q, Var<T> k, Var<T> v, Var<T> bias, std::size_t heads, std::size_t M) {
    const Shape& s = q.shape();
    if (s.size() != 4 || k.shape() != s || v.shape() != s) throw ShapeError("window attention expects matching NCHW q/k/v");
    if (M == 0 || s[2] % M != 0 || s[3] % M != 0)
        throw ShapeError("spatial extents " + shape_str(s) + " not divisible by window size " + std::to_string(M));
    if (heads == 0 || s[1] % heads != 0) throw ParameterError("channels not divisible by heads");
    const Shape& bs = bias.shape();
    if (bs.size() != 3 || bs[0] != heads || bs[1] != bs[2] || bs[1] % 2 == 0 || (bs[1] + 1) / 2 < M)
        throw ShapeError("window bias table " + shape_str(bs) + " mismatch");
    const std::size_t R = bs[1], Mt = (R + 1) / 2;
    const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], P = H * W, d = C / heads, N = M * M;
    const double scale = 1.0 / std::sqrt(double(d));

    // Token index of the t-th member of window (wy, wx).
    auto token = [W, M](std::size_t wy, std::size_t wx, std::size_t t) {
        return (wy * M + t / M) * W + wx * M + t % M;
    };
    auto bias_index = [M, R, Mt](std::size_t t, std::size_t u) {
        const long dy = long(u / M) - long(t / M) + long(Mt) - 1, dx = long(u % M) - long(t % M) + long(Mt) - 1;
        return std::size_t(dy) * R + std::size_t(dx);
    };

    const std::vector<T> qt = detail::to_token_major(q.value(), heads);
    const std::vector<T> kt = detail::to_token_major(k.value(), heads);
    const std::vector<T> vt = detail::to_token_major(v.value(), heads);
    std::vector<double> ot(qt.size(), 0.0);
    Tensor<T> alpha({B, heads, P, N});
    std::vector<double> logit(N);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = (b * heads + h) * P * d;
            const T* bt = bias.value().ptr() + h * R * R;
            for (std::size_t wy = 0; wy < H / M; ++wy)
                for (std::size_t wx = 0; wx < W / M; ++wx)
                    for (std::size_t t = 0; t < N; ++t) {
                        const std::size_t pq = token(wy, wx, t);
                        const T* qv = qt.data() + base + pq * d;
                        double mx = -INFINITY;
                        for (std::size_t u = 0; u < N; ++u) {
                            const T* kv = kt.data() + base + token(wy, wx, u) * d;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < d; ++c) dot += double(qv[c]) * double(kv[c]);
                            logit[u] = dot * scale + double(bt[bias_index(t, u)]);
                            mx = std::max(mx, logit[u]);
                        }
                        double z = 0.0;
                        for (std::size_t u = 0; u < N; ++u) z += (logit[u] = std::exp(logit[u] - mx));
                        double* o = ot.data() + base + pq * d;
                        T* a = alpha.ptr() + ((b * heads + h) * P + pq) * N;
                        for (std::size_t u = 0; u < N; ++u) {
                            const double w = logit[u] / z;
                            a[u] = static_cast<T>(w);
                            const T* vv = vt.data() + base + token(wy, wx, u) * d;
                            for (std::size_t c = 0; c < d; ++c) o[c] += w * double(vv[c]);
                        }
                    }
        }
    Tensor<T> out = detail::from_token_major<T>(ot, s, heads);
    return q.tape->record("window_attention", {q, k, v, bias}, std::move(out),
                          [q, k, v, alpha, heads, M, R, N, scale, token, bias_index](const Tensor<T>& g, GradSink<T>& sk) {
                              const Shape& s = q.shape();
                              const std::size_t B = s[0], H = s[2], W = s[3], P = H * W, d = s[1] / heads;
                              const std::vector<T> qt = detail::to_token_major(q.value(), heads);
                              const std::vector<T> kt = detail::to_token_major(k.value(), heads);
                              const std::vector<T> vt = detail::to_token_major(v.value(), heads);
                              const std::vector<T> gt = detail::to_token_major(g, heads);
                              std::vector<double> dq(qt.size(), 0.0), dk(qt.size(), 0.0), dv(qt.size(), 0.0);
                              std::vector<double> dbias(heads * R * R, 0.0), da(N);
                              for (std::size_t b = 0; b < B; ++b)
                                  for (std::size_t h = 0; h < heads; ++h) {
                                      const std::size_t base = (b * heads + h) * P * d;
                                      for (std::size_t wy = 0; wy < H / M; ++wy)
                                          for (std::size_t wx = 0; wx < W / M; ++wx)
                                              for (std::size_t t = 0; t < N; ++t) {
                                                  const std::size_t pq = token(wy, wx, t);
                                                  const T* qv = qt.data() + base + pq * d;
                                                  const T* gv = gt.data() + base + pq * d;
                                                  const T* a = alpha.ptr() + ((b * heads + h) * P + pq) * N;
                                                  double sdot = 0.0;
                                                  for (std::size_t u = 0; u < N; ++u) {
                                                      const T* vv = vt.data() + base + token(wy, wx, u) * d;
                                                      double acc = 0.0;
                                                      for (std::size_t c = 0; c < d; ++c) acc += double(gv[c]) * double(vv[c]);
                                                      da[u] = acc;
                                                      sdot += double(a[u]) * acc;
                                                  }
                                                  for (std::size_t u = 0; u < N; ++u) {
                                                      const std::size_t pk = token(wy, wx, u);
                                                      const double dl = double(a[u]) * (da[u] - sdot);
                                                      dbias[h * R * R + bias_index(t, u)] += dl;
                                                      const T* kv = kt.data() + base + pk * d;
                                                      for (std::size_t c = 0; c < d; ++c) {
                                                          dq[base + pq * d + c] += scale * dl * double(kv[c]);
                                                          dk[base + pk * d + c] += scale * dl * double(qv[c]);
                                                          dv[base + pk * d + c] += double(a[u]) * double(gv[c]);
                                                      }
                                                  }
                                              }
                                  }
                              if (sk.needs(0)) sk.add(0, detail::from_token_major<T>(dq, s, heads));
                              if (sk.needs(1)) sk.add(1, detail::from_token_major<T>(dk, s, heads));
                              if (sk.needs(2)) sk.add(2, detail::from_token_major<T>(dv, s, heads));
                              if (sk.needs(3)) {
                                  Tensor<T> db({heads, R, R});
                                  for (std::size_t i = 0; i < db.numel(); ++i) db[i] = static_cast<T>(dbias[i]);
                                  sk.add(3, std::move(db));
                              }
                          });
}

// ---------------------------------------------------------------------------
// Module-level operations

/// k×k patch [k, k, C] of X[b] centred at (i, j), with border replication.
template <Scalar T>
Tensor<T> extract_neighborhood(const Tensor<T>& X, std::size_t i, std::size_t j, std::size_t k, std::size_t b = 0) {
    if (k % 2 == 0) throw ParameterError("neighborhood size must be odd");
    if (X.rank() != 4) throw ShapeError("extract_neighborhood expects NCHW");
    const std::size_t C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const long r = long(k - 1) / 2;
    Tensor<T> patch({k, k, C});
    for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) {
            const long y = detail::clamp_index(long(i) + long(u) - r, H);
            const long x = detail::clamp_index(long(j) + long(v) - r, W);
            for (std::size_t c = 0; c < C; ++c) patch[(u * k + v) * C + c] = X[((b * C + c) * H + y) * W + x];
        }
    return patch;
}

/// Dense offset field [B, 2k², H, W] of one head group, predicted from the
/// query-projected map. Channel 2n holds dy and 2n+1 holds dx of point n.
template <Scalar T>
Var<T> predict_offsets(Var<T> query_map, const OffsetNet<T>& net) {
    Var<T> h = conv2d(query_map, net.depthwise);
    h = conv2d(h, net.pointwise);
    h = gelu(h);
    return conv2d(h, net.project);
}

enum class OffsetMode { predicted, none };

namespace detail {

template <Scalar T>
Var<T> multi_group_attention(Var<T> X, const AttentionParams<T>& p, OffsetMode mode,
                             const std::vector<std::optional<Var<T>>>* forced, AttentionTrace<T>* trace) {
    if (X.shape().size() != 4 || X.shape()[1] != p.channels)
        throw ShapeError("attention input " + shape_str(X.shape()) + " does not have " + std::to_string(p.channels) +
                         " channels");
    if (p.groups.empty()) throw ParameterError("attention parameters carry no head groups");
    Var<T> q = channel_linear(X, p.wq, p.bq);
    Var<T> k = channel_linear(X, p.wk, p.bk);
    Var<T> v = channel_linear(X, p.wv, p.bv);
    const std::size_t d = p.channels / p.heads;
    std::vector<Var<T>> outs;
    std::size_t c0 = 0;
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const HeadGroup<T>& grp = p.groups[g];
        const std::size_t cg = grp.heads * d;
        const bool whole = cg == p.channels;
        Var<T> qg = whole ? q : slice_channels(q, c0, c0 + cg);
        Var<T> kg = whole ? k : slice_channels(k, c0, c0 + cg);
        Var<T> vg = whole ? v : slice_channels(v, c0, c0 + cg);
        std::optional<Var<T>> off;
        if (forced && g < forced->size() && (*forced)[g]) {
            off = (*forced)[g];
        } else if (mode == OffsetMode::predicted && grp.offsets) {
            off = predict_offsets(q, *grp.offsets);
        }
        Tensor<T> weights;
        outs.push_back(neighborhood_attention(qg, kg, vg, grp.bias, off, grp.heads, grp.kernel,
                                              trace ? &weights : nullptr));
        if (trace) {
            trace->weights.push_back(std::move(weights));
            if (off) trace->offsets.push_back(off->value());
        }
        c0 += cg;
    }
    Var<T> y = outs.size() == 1 ? outs[0] : concat_channels(outs);
    return channel_linear(y, p.wo, p.bo);
}

template <Scalar T>
void require_single_group(const AttentionParams<T>& p, std::size_t k) {
    if (k % 2 == 0) throw ParameterError("kernel size must be odd, got " + std::to_string(k));
    if (p.groups.size() != 1 || p.groups[0].kernel != k)
        throw ParameterError("parameters are not a single head group of kernel size " + std::to_string(k));
}

}  // namespace detail

/// Window actually used on an H×W map: the configured size, shrunk to the map
/// when the map is smaller.
inline std::size_t effective_window(std::size_t M, std::size_t H, std::size_t W) { return std::min({M, H, W}); }

/// Non-overlapping window self-attention with relative position bias.
template <Scalar T>
Var<T> window_attention_baseline(Var<T> X, const AttentionParams<T>& p, std::size_t M) {
    if (!p.window_bias || M > p.window_size) throw ParameterError("parameters carry no window bias for this size");
    Var<T> q = channel_linear(X, p.wq, p.bq);
    Var<T> k = channel_linear(X, p.wk, p.bk);
    Var<T> v = channel_linear(X, p.wv, p.bv);
    return channel_linear(window_attention_core(q, k, v, *p.window_bias, p.heads, M), p.wo, p.bo);
}

/// Token-centric sliding-window attention with a single kernel size k.
template <Scalar T>
Var<T> sliding_window_attention(Var<T> X, const AttentionParams<T>& p, std::size_t k,
                                AttentionTrace<T>* trace = nullptr) {
    detail::require_single_group(p, k);
    return detail::multi_group_attention<T>(X, p, OffsetMode::none, nullptr, trace);
}

/// Deformable sliding-window attention with a single kernel size k.
template <Scalar T>
Var<T> dswin_attention(Var<T> X, const AttentionParams<T>& p, std::size_t k, AttentionTrace<T>* trace = nullptr) {
    detail::require_single_group(p, k);
    return detail::multi_group_attention<T>(X, p, OffsetMode::predicted, nullptr, trace);
}

/// Deformable attention with externally supplied offset fields (one per group).
template <Scalar T>
Var<T> dswin_attention_with_offsets(Var<T> X, const AttentionParams<T>& p, const std::vector<std::optional<Var<T>>>& offsets,
                                    AttentionTrace<T>* trace = nullptr) {
    return detail::multi_group_attention(X, p, OffsetMode::none, &offsets, trace);
}

/// Multi-scale deformable attention: each head group uses its own kernel size
/// and offset field; group outputs are concatenated and projected.
template <Scalar T>
Var<T> ms_dswin_attention(Var<T> X, const AttentionParams<T>& p, AttentionTrace<T>* trace = nullptr) {
    if (p.window_bias)
        return window_attention_baseline(X, p, effective_window(p.window_size, X.shape()[2], X.shape()[3]));
    return detail::multi_group_attention<T>(X, p, OffsetMode::predicted, nullptr, trace);
}

}  // namespace dswinir
