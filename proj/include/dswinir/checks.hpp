#pragma once

// Gradient-check and oracle-equivalence suites shared by the CLI, the
// acceptance runner and the unit tests.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dswinir/attention.hpp"
#include "dswinir/autograd.hpp"
#include "dswinir/block.hpp"
#include "dswinir/model.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/oracle/naive.hpp"
#include "dswinir/params.hpp"
#include "dswinir/rng.hpp"
#include "dswinir/train.hpp"

namespace dswinir::checks {

using oracle::OracleReport;

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradEps = 1e-3;

inline nlohmann::json to_json(const OracleReport& r) {
    return nlohmann::json{{"kernel", r.kernel},
                          {"shape", r.shape},
                          {"max_abs_diff", r.max_abs_diff},
                          {"max_rel_diff", r.max_rel_diff},
                          {"pass", r.pass}};
}

template <Scalar T = double>
Tensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Replaces every parameter with random values. Layernorm gains stay near 1.
/// With `kink_safe`, offset-net outputs are pinned to fractional values in
/// ±[0.25, 0.75] so no sampling point sits on an integer grid line, where the
/// bilinear interpolant is not differentiable.
template <Scalar T>
void randomize(ParamStore<T>& st, std::uint64_t seed, bool kink_safe, double offset_scale = 0.05) {
    for (auto& [name, t] : st) {
        Rng rng(seed, "randomize/" + name);
        const bool gain = ends_with(name, ".norm1.g") || ends_with(name, ".norm2.g");
        for (std::size_t i = 0; i < t.numel(); ++i) {
            double v = rng.uniform(-0.5, 0.5);
            if (gain) v = 1.0 + 0.4 * v;
            if (ends_with(name, ".off.pw2.w")) v = kink_safe ? 0.02 * v : offset_scale * v;
            if (ends_with(name, ".off.pw2.b"))
                v = kink_safe ? (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 0.75) : 2.0 * v;
            t[i] = static_cast<T>(v);
        }
    }
}

/// Keeps the model's own initialization but gives every zero-initialized
/// offset head kink-safe nonzero weights, so the deformable path is exercised.
template <Scalar T>
void activate_offsets(ParamStore<T>& st, std::uint64_t seed) {
    for (auto& [name, t] : st) {
        const bool w = ends_with(name, ".off.pw2.w"), b = ends_with(name, ".off.pw2.b");
        if (!w && !b) continue;
        Rng rng(seed, "randomize/" + name);
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<T>(w ? rng.uniform(-0.01, 0.01)
                                    : (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 0.75));
    }
}

template <Scalar U, Scalar T>
ParamStore<U> cast_store(const ParamStore<T>& st) {
    ParamStore<U> out;
    for (const auto& [name, t] : st) out.add(name, t.template cast<U>());
    return out;
}

// ---------------------------------------------------------------------------
// Parameter store → oracle weights

template <Scalar T>
oracle::ConvW conv_w(const ParamStore<T>& st, const std::string& prefix, const Conv2dOptions& o) {
    return oracle::ConvW{st.at(prefix + ".w").template cast<double>(), st.at(prefix + ".b").template cast<double>(),
                         o.stride, o.padding, o.dilation, o.groups};
}

template <Scalar T>
oracle::AttnW attn_w(const ParamStore<T>& st, const std::string& prefix, const AttentionConfig& cfg) {
    auto d = [&](const std::string& n) { return st.at(prefix + n).template cast<double>(); };
    oracle::AttnW a{d(".wq"), d(".bq"), d(".wk"), d(".bk"), d(".wv"), d(".bv"), d(".wo"), d(".bo"), cfg.heads, {}, {}};
    if (cfg.kind == AttentionKind::window) {
        a.window_bias = d(".rel_bias");
        return a;
    }
    for (std::size_t g = 0; g < cfg.groups(); ++g) {
        const std::size_t k = cfg.kernel_sizes[g];
        const std::string gp = ".g" + std::to_string(g);
        oracle::GroupW gw{cfg.heads_per_group(), k, d(gp + ".bias"), cfg.offsets_enabled, {}, {}, {}};
        if (cfg.offsets_enabled) {
            gw.dw = conv_w(st, prefix + gp + ".off.dw", Conv2dOptions{1, (k - 1) / 2, 1, cfg.channels});
            gw.pw1 = conv_w(st, prefix + gp + ".off.pw1", Conv2dOptions{});
            gw.pw2 = conv_w(st, prefix + gp + ".off.pw2", Conv2dOptions{});
        }
        a.groups.push_back(std::move(gw));
    }
    return a;
}

template <Scalar T>
oracle::FfnW ffn_w(const ParamStore<T>& st, const std::string& prefix, const FfnConfig& cfg) {
    oracle::FfnW f;
    f.msg = cfg.msg_enabled;
    f.hidden = cfg.hidden();
    if (!cfg.msg_enabled) {
        f.expand = conv_w(st, prefix + ".fc1", Conv2dOptions{});
        f.project = conv_w(st, prefix + ".fc2", Conv2dOptions{});
        return f;
    }
    f.expand = conv_w(st, prefix + ".expand", Conv2dOptions{});
    for (std::size_t i = 0; i < cfg.branches.size(); ++i) {
        const auto& b = cfg.branches[i];
        f.branches.push_back(conv_w(st, prefix + ".br" + std::to_string(i),
                                    Conv2dOptions{1, b.dilation * (b.kernel - 1) / 2, b.dilation, f.hidden}));
    }
    f.fuse = conv_w(st, prefix + ".fuse", Conv2dOptions{});
    f.project = conv_w(st, prefix + ".project", Conv2dOptions{});
    return f;
}

template <Scalar T>
oracle::BlockW block_w(const ParamStore<T>& st, const std::string& prefix, const BlockConfig& cfg) {
    auto d = [&](const std::string& n) { return st.at(prefix + n).template cast<double>(); };
    return oracle::BlockW{d(".norm1.g"), d(".norm1.b"), d(".norm2.g"), d(".norm2.b"),
                          attn_w(st, prefix + ".attn", cfg.attn), ffn_w(st, prefix + ".ffn", cfg.ffn)};
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace detail {

inline std::vector<std::size_t> coord_subset(std::size_t numel, std::size_t max_coords, std::uint64_t seed) {
    if (numel <= max_coords) return {};
    std::vector<std::size_t> all(numel);
    for (std::size_t i = 0; i < numel; ++i) all[i] = i;
    Rng rng(seed, "coords");
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(all[i], all[i + rng.below(numel - i)]);
    all.resize(max_coords);
    std::sort(all.begin(), all.end());
    return all;
}

inline OracleReport grad_report(const std::string& name, const Shape& shape, const GradCheckResult& r) {
    return OracleReport{name, shape, r.max_abs_err, r.max_rel_err, r.max_rel_err <= kGradTolerance};
}

}  // namespace detail

/// Checks d(project(f(x)))/d(input) and d/d(each named parameter) for a module
/// forward `fwd(binder, input)`.
template <class Fwd>
std::vector<OracleReport> check_module(const std::string& name, const ParamStore<double>& st, const TensorD& x,
                                       Fwd fwd, const std::vector<std::string>& params, std::size_t max_coords = 96) {
    Shape out_shape;
    {
        Tape<double> t;
        Binder<double> b(t, st);
        out_shape = fwd(b, t.constant(x)).shape();
    }
    Rng rng(stream_id(name), "projection");
    const TensorD w = random_tensor(out_shape, rng);
    std::vector<OracleReport> out;
    {
        auto f = [&](Tape<double>& t, Var<double> v) {
            Binder<double> b(t, st);
            return project(fwd(b, v), w);
        };
        out.push_back(detail::grad_report(name + "/input", x.shape(),
                                          grad_check(f, x, kGradEps, detail::coord_subset(x.numel(), max_coords, 1))));
    }
    for (const auto& p : params) {
        auto f = [&](Tape<double>& t, Var<double> v) {
            Binder<double> b(t, st);
            b.override_param(p, v);
            return project(fwd(b, t.constant(x)), w);
        };
        const TensorD& pv = st.at(p);
        out.push_back(detail::grad_report(name + "/" + p, pv.shape(),
                                          grad_check(f, pv, kGradEps, detail::coord_subset(pv.numel(), max_coords, 2))));
    }
    return out;
}

/// Checks a free function of several tensors with respect to each of them.
template <class Fn>
std::vector<OracleReport> check_fn(const std::string& name, std::vector<TensorD> inputs, Fn fn,
                                   const std::vector<std::string>& labels) {
    Shape out_shape;
    {
        Tape<double> t;
        std::vector<Var<double>> vs;
        for (const auto& in : inputs) vs.push_back(t.constant(in));
        out_shape = fn(vs).shape();
    }
    Rng rng(stream_id(name), "projection");
    const TensorD w = random_tensor(out_shape, rng);
    std::vector<OracleReport> out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](Tape<double>& t, Var<double> v) {
            std::vector<Var<double>> vs;
            for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(j == i ? v : t.constant(inputs[j]));
            return project(fn(vs), w);
        };
        out.push_back(detail::grad_report(name + "/" + labels[i], inputs[i].shape(),
                                          grad_check(f, inputs[i], kGradEps, detail::coord_subset(inputs[i].numel(), 96, 3))));
    }
    return out;
}

struct Case {
    std::string name;
    std::function<std::vector<OracleReport>()> run;
};

inline AttentionConfig small_attention(std::vector<std::size_t> kernels, std::size_t channels = 4, std::size_t heads = 2,
                                       bool offsets = true) {
    AttentionConfig c;
    c.channels = channels;
    c.heads = heads;
    c.kernel_sizes = std::move(kernels);
    c.offsets_enabled = offsets;
    return c;
}

inline BlockConfig small_block(std::size_t channels = 4, std::size_t heads = 2, std::vector<std::size_t> kernels = {3}) {
    BlockConfig b;
    b.attn = small_attention(std::move(kernels), channels, heads, true);
    b.ffn.channels = channels;
    return b;
}

/// The 2-block / tiny-model configuration used for end-to-end gradient checks.
inline ModelConfig gradcheck_model_config() {
    ModelConfig c = ModelConfig::tiny();
    c.base_channels = 4;
    c.heads = {1, 2, 2, 4};
    c.kernel_sizes = {std::vector<std::size_t>{3}, {3}, {3, 5}, {3, 5}};
    c.ffn_branches = {{3, 1}, {3, 2}};
    return c;
}

inline std::vector<Case> gradcheck_cases() {
    std::vector<Case> cases;
    auto reg = [&](std::string n, std::function<std::vector<OracleReport>()> f) { cases.push_back({std::move(n), std::move(f)}); };
    using V = std::vector<Var<double>>;

    reg("add", [] {
        Rng r(1, "add");
        return check_fn("add", {random_tensor({2, 3}, r), random_tensor({2, 3}, r)}, [](const V& v) { return add(v[0], v[1]); },
                        {"a", "b"});
    });
    reg("sub", [] {
        Rng r(2, "sub");
        return check_fn("sub", {random_tensor({2, 3}, r), random_tensor({2, 3}, r)}, [](const V& v) { return sub(v[0], v[1]); },
                        {"a", "b"});
    });
    reg("mul", [] {
        Rng r(3, "mul");
        return check_fn("mul", {random_tensor({2, 3}, r), random_tensor({2, 3}, r)}, [](const V& v) { return mul(v[0], v[1]); },
                        {"a", "b"});
    });
    reg("scale", [] {
        Rng r(4, "scale");
        return check_fn("scale", {random_tensor({4}, r)}, [](const V& v) { return add_scalar(scale(neg(v[0]), 1.7), 0.3); },
                        {"x"});
    });
    reg("exp", [] {
        Rng r(5, "exp");
        return check_fn("exp", {random_tensor({5}, r)}, [](const V& v) { return exp(v[0]); }, {"x"});
    });
    reg("sum_mean", [] {
        Rng r(6, "sum");
        return check_fn("sum_mean", {random_tensor({2, 4}, r)},
                        [](const V& v) { return add(sum(v[0]), scale(mean(mul(v[0], v[0])), 3.0)); }, {"x"});
    });
    reg("matmul", [] {
        Rng r(7, "matmul");
        return check_fn("matmul", {random_tensor({3, 4}, r), random_tensor({4, 2}, r)},
                        [](const V& v) { return matmul(v[0], v[1]); }, {"a", "b"});
    });
    reg("reshape_pick", [] {
        Rng r(8, "reshape");
        return check_fn("reshape_pick", {random_tensor({2, 3}, r)},
                        [](const V& v) { return mul(pick(reshape(v[0], {3, 2}), 4), pick(v[0], 1)); }, {"x"});
    });
    reg("conv2d", [] {
        Rng r(9, "conv2d");
        std::vector<OracleReport> out;
        for (const auto& o : {Conv2dOptions{2, 1, 1, 2}, Conv2dOptions{1, 2, 2, 1}, Conv2dOptions{1, 1, 1, 4}}) {
            const std::size_t ocpg = o.groups == 4 ? 1 : 3;
            auto rep = check_fn("conv2d/s" + std::to_string(o.stride) + "d" + std::to_string(o.dilation) + "g" +
                                    std::to_string(o.groups),
                                {random_tensor({1, 4, 6, 6}, r), random_tensor({ocpg * o.groups, 4 / o.groups, 3, 3}, r),
                                 random_tensor({ocpg * o.groups}, r)},
                                [o](const V& v) { return conv2d(v[0], Conv2dParams<double>{v[1], v[2], o}); },
                                {"x", "w", "b"});
            out.insert(out.end(), rep.begin(), rep.end());
        }
        return out;
    });
    reg("linear", [] {
        Rng r(10, "linear");
        return check_fn("linear", {random_tensor({2, 3, 4}, r), random_tensor({4, 5}, r), random_tensor({5}, r)},
                        [](const V& v) { return linear(v[0], v[1], v[2]); }, {"x", "w", "b"});
    });
    reg("channel_linear", [] {
        Rng r(11, "channel_linear");
        return check_fn("channel_linear", {random_tensor({1, 3, 4, 4}, r), random_tensor({3, 5}, r), random_tensor({5}, r)},
                        [](const V& v) { return channel_linear(v[0], v[1], v[2]); }, {"x", "w", "b"});
    });
    reg("softmax", [] {
        Rng r(12, "softmax");
        return check_fn("softmax", {random_tensor({3, 5}, r, -2, 2)}, [](const V& v) { return softmax_lastdim(v[0]); }, {"x"});
    });
    reg("gelu", [] {
        Rng r(13, "gelu");
        return check_fn("gelu", {random_tensor({2, 8}, r, -3, 3)}, [](const V& v) { return gelu(v[0]); }, {"x"});
    });
    reg("layernorm", [] {
        Rng r(14, "layernorm");
        return check_fn("layernorm", {random_tensor({1, 4, 3, 3}, r), random_tensor({4}, r, 0.5, 1.5), random_tensor({4}, r)},
                        [](const V& v) { return layernorm(v[0], v[1], v[2]); }, {"x", "gamma", "beta"});
    });
    reg("bilinear_sample", [] {
        Rng r(15, "bilinear");
        TensorD coords({1, 8, 2});
        for (std::size_t i = 0; i < coords.numel(); ++i)
            coords[i] = double(long(r.below(7)) - 1) + r.uniform(0.25, 0.75);  // in [-0.75, 5.75], never integral
        return check_fn("bilinear_sample", {random_tensor({1, 2, 5, 5}, r), coords},
                        [](const V& v) { return bilinear_sample(v[0], v[1]); }, {"F", "coords"});
    });
    reg("layout_ops", [] {
        Rng r(16, "layout");
        return check_fn("layout_ops", {random_tensor({1, 4, 3, 3}, r), random_tensor({1, 4, 3, 3}, r)},
                        [](const V& v) {
                            Var<double> c = concat_channels(V{v[0], v[1]});
                            Var<double> s = slice_channels(c, 2, 6);
                            Var<double> d = depth_to_space(s, 2);
                            return crop(pad_replicate(d, 2, 1), 5, 6);
                        },
                        {"a", "b"});
    });
    reg("l1_loss", [] {
        Rng r(17, "l1");
        TensorD pred = random_tensor({2, 6}, r), target(pred.shape());
        for (std::size_t i = 0; i < pred.numel(); ++i) target[i] = pred[i] + (r.uniform() < 0.5 ? -1 : 1) * r.uniform(0.1, 0.5);
        return check_fn("l1_loss", {pred, target}, [](const V& v) { return l1_loss(v[0], v[1]); }, {"pred", "target"});
    });
    reg("window_attention", [] {
        AttentionConfig c = small_attention({3}, 4, 2, false);
        c.kind = AttentionKind::window;
        c.window_size = 2;
        ParamStore<double> st;
        init_attention(st, "a", c, 1);
        randomize(st, 21, true);
        Rng r(21, "x");
        return check_module("window_attention", st, random_tensor({1, 4, 4, 4}, r),
                            [c](Binder<double>& b, Var<double> x) { return window_attention_baseline(x, bind_attention(b, "a", c), 2); },
                            {"a.wq", "a.wv", "a.rel_bias"});
    });
    reg("sliding_attention", [] {
        const AttentionConfig c = small_attention({3}, 4, 2, false);
        ParamStore<double> st;
        init_attention(st, "a", c, 1);
        randomize(st, 22, true);
        Rng r(22, "x");
        return check_module("sliding_attention", st, random_tensor({1, 4, 6, 6}, r),
                            [c](Binder<double>& b, Var<double> x) { return sliding_window_attention(x, bind_attention(b, "a", c), 3); },
                            {"a.wk", "a.bk", "a.wo", "a.g0.bias"});
    });
    reg("dswin_attention", [] {
        const AttentionConfig c = small_attention({3}, 4, 2, true);
        ParamStore<double> st;
        init_attention(st, "a", c, 1);
        randomize(st, 23, true);
        Rng r(23, "x");
        return check_module("dswin_attention", st, random_tensor({1, 4, 6, 6}, r),
                            [c](Binder<double>& b, Var<double> x) { return dswin_attention(x, bind_attention(b, "a", c), 3); },
                            {"a.wq", "a.bq", "a.wk", "a.wv", "a.wo", "a.bo", "a.g0.bias", "a.g0.off.dw.w", "a.g0.off.pw1.w",
                             "a.g0.off.pw2.w", "a.g0.off.pw2.b"});
    });
    reg("ms_dswin_attention", [] {
        const AttentionConfig c = small_attention({3, 5}, 4, 2, true);
        ParamStore<double> st;
        init_attention(st, "a", c, 1);
        randomize(st, 24, true);
        Rng r(24, "x");
        return check_module("ms_dswin_attention", st, random_tensor({1, 4, 6, 6}, r),
                            [c](Binder<double>& b, Var<double> x) { return ms_dswin_attention(x, bind_attention(b, "a", c)); },
                            {"a.g1.bias", "a.g1.off.dw.w", "a.g1.off.pw2.w"});
    });
    reg("predict_offsets", [] {
        const AttentionConfig c = small_attention({3}, 4, 2, true);
        ParamStore<double> st;
        init_attention(st, "a", c, 1);
        randomize(st, 25, true);
        Rng r(25, "x");
        return check_module("predict_offsets", st, random_tensor({1, 4, 6, 6}, r),
                            [c](Binder<double>& b, Var<double> x) {
                                return predict_offsets(x, *bind_attention(b, "a", c).groups[0].offsets);
                            },
                            {"a.g0.off.dw.w", "a.g0.off.pw1.b"});
    });
    reg("msg_ffn", [] {
        FfnConfig f;
        f.channels = 4;
        ParamStore<double> st;
        init_ffn(st, "f", f, 1);
        randomize(st, 26, true);
        Rng r(26, "x");
        return check_module("msg_ffn", st, random_tensor({1, 4, 6, 6}, r),
                            [f](Binder<double>& b, Var<double> x) { return msg_ffn(x, bind_ffn(b, "f", f)); },
                            {"f.expand.w", "f.br0.w", "f.br2.w", "f.fuse.w", "f.project.b"});
    });
    reg("dstb_x2", [] {
        const BlockConfig bc = small_block();
        ParamStore<double> st;
        init_block(st, "b0", bc, 1);
        init_block(st, "b1", bc, 1);
        randomize(st, 27, true);
        Rng r(27, "x");
        return check_module("dstb_x2", st, random_tensor({1, 4, 6, 6}, r),
                            [bc](Binder<double>& b, Var<double> x) {
                                return dstb_forward(dstb_forward(x, bind_block(b, "b0", bc)), bind_block(b, "b1", bc));
                            },
                            {"b0.norm1.g", "b0.attn.wq", "b0.attn.g0.off.pw2.b", "b0.ffn.br1.w", "b1.norm2.b", "b1.attn.g0.bias"});
    });
    reg("model_e2e", [] {
        const ModelConfig cfg = gradcheck_model_config();
        Model<double> m = build_model<double>(cfg, 1);
        activate_offsets(m.params, 28);
        // Spread the embedding channels; a near-constant pixel makes the first
        // layernorm so curved that eps=1e-3 differences lose accuracy.
        Rng r(28, "x");
        for (std::size_t i = 0; i < m.params.at("embed.b").numel(); ++i) m.params.at("embed.b")[i] = r.uniform(-1.0, 1.0);
        return check_module("model_e2e", m.params, random_tensor({1, 3, 8, 8}, r, 0.0, 1.0),
                            [cfg](Binder<double>& b, Var<double> x) { return model_forward(b, cfg, x); },
                            {"embed.w", "embed.b", "enc0.b0.attn.g0.off.pw2.w", "enc1.b0.attn.wk", "down1.w", "mid.b0.attn.g1.bias",
                             "up0.w", "fuse2.w", "dec0.b0.ffn.project.w", "head.b"},
                            48);
    });
    return cases;
}

inline std::vector<OracleReport> run_gradchecks(const std::string& filter = "") {
    std::vector<OracleReport> out;
    for (const auto& c : gradcheck_cases()) {
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        auto r = c.run();
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle equivalence

namespace detail {

// Aggregates per-instance comparisons into one report per kernel and dtype.
struct Aggregate {
    OracleReport total;
    std::size_t instances = 0;

    explicit Aggregate(std::string name) { total = OracleReport{std::move(name), {}, 0.0, 0.0, true}; }
    void add(const OracleReport& r) {
        total.shape = r.shape;
        total.max_abs_diff = std::max(total.max_abs_diff, r.max_abs_diff);
        total.max_rel_diff = std::max(total.max_rel_diff, r.max_rel_diff);
        total.pass = total.pass && r.pass;
        ++instances;
    }
};

template <Scalar T>
Var<T> input_of(Tape<T>& t, const TensorD& x) {
    return t.constant(x.cast<T>());
}

// One randomized instance of `kernel` in precision T, seeded by `seed`.
template <Scalar T>
OracleReport oracle_instance(const std::string& kernel, std::uint64_t seed) {
    Rng r(seed, "oracle/" + kernel);
    const double tol = oracle::tolerance<T>();
    auto round_trip = [](const TensorD& x) { return x.cast<T>().template cast<double>(); };
    if (kernel == "conv2d") {
        const std::size_t groups = 1 + r.below(2), cin = groups * (1 + r.below(3)), cout = groups * (1 + r.below(3));
        const std::size_t k = 1 + 2 * r.below(3), dil = 1 + r.below(2), stride = 1 + r.below(2), pad = r.below(3);
        const std::size_t H = dil * (k - 1) + 1 + r.below(6), W = dil * (k - 1) + 1 + r.below(6);
        const TensorD x = round_trip(random_tensor({1 + r.below(2), cin, H, W}, r));
        oracle::ConvW c{round_trip(random_tensor({cout, cin / groups, k, k}, r)), round_trip(random_tensor({cout}, r)), stride,
                        pad, dil, groups};
        Tape<T> t;
        Conv2dParams<T> p{t.constant(c.w.cast<T>()), t.constant(c.b.cast<T>()), Conv2dOptions{stride, pad, dil, groups}};
        return oracle::compare(kernel, conv2d(input_of(t, x), p).value(), oracle::naive_conv2d(x, c), tol);
    }
    if (kernel == "matmul") {
        const std::size_t n = 1 + r.below(8), k = 1 + r.below(8), m = 1 + r.below(8);
        const TensorD a = round_trip(random_tensor({n, k}, r)), b = round_trip(random_tensor({k, m}, r));
        return oracle::compare(kernel, matmul(a.cast<T>(), b.cast<T>()), oracle::naive_matmul(a, b), tol);
    }
    if (kernel == "linear") {
        const std::size_t din = 1 + r.below(6), dout = 1 + r.below(6);
        const TensorD x = round_trip(random_tensor({2, 3, din}, r)), w = round_trip(random_tensor({din, dout}, r)),
                      b = round_trip(random_tensor({dout}, r));
        Tape<T> t;
        return oracle::compare(kernel, linear(input_of(t, x), t.constant(w.cast<T>()), t.constant(b.cast<T>())).value(),
                               oracle::naive_linear(x, w, &b), tol);
    }
    if (kernel == "softmax") {
        const TensorD x = round_trip(random_tensor({3, 1 + r.below(9)}, r, -4, 4));
        Tape<T> t;
        return oracle::compare(kernel, softmax_lastdim(input_of(t, x)).value(), oracle::naive_softmax(x), tol);
    }
    if (kernel == "bilinear_sample") {
        const std::size_t H = 2 + r.below(6), W = 2 + r.below(6);
        const TensorD F = round_trip(random_tensor({1, 2, H, W}, r));
        TensorD coords({1, 10, 2});
        for (std::size_t p = 0; p < 10; ++p) {
            coords[p * 2] = r.uniform(-1.5, double(H) + 0.5);
            coords[p * 2 + 1] = r.uniform(-1.5, double(W) + 0.5);
        }
        coords = round_trip(coords);
        Tape<T> t;
        return oracle::compare(kernel, bilinear_sample(input_of(t, F), input_of(t, coords)).value(),
                               oracle::naive_bilinear_sample(F, coords), tol);
    }
    auto attention_case = [&](AttentionConfig c, const Shape& xs, auto&& run, auto&& ref, double offset_scale) {
        ParamStore<double> st;
        init_attention(st, "a", c, seed);
        randomize(st, seed, false, offset_scale);
        const ParamStore<T> stt = cast_store<T>(st);
        const TensorD x = round_trip(random_tensor(xs, r));
        Tape<T> t;
        Binder<T> b(t, stt);
        const AttentionParams<T> p = bind_attention(b, "a", c);
        return oracle::compare(kernel, run(input_of(t, x), p, t).value(), ref(x, attn_w(stt, "a", c)), tol);
    };
    if (kernel == "window_attention") {
        AttentionConfig c = small_attention({3}, 4, 2, false);
        c.kind = AttentionKind::window;
        // Odd seeds use a table built for 8×8 windows on a 4×4 map.
        c.window_size = seed % 2 ? 8 : 4;
        const Shape xs = seed % 2 ? Shape{1, 4, 4, 4} : Shape{1, 4, 8, 8};
        return attention_case(
            c, xs, [](Var<T> x, const AttentionParams<T>& p, Tape<T>&) { return window_attention_baseline(x, p, 4); },
            [](const TensorD& x, const oracle::AttnW& w) { return oracle::naive_window_attention(x, w, 4); }, 0.0);
    }
    if (kernel == "sliding_attention") {
        return attention_case(
            small_attention({5}, 8, 2, false), {1, 8, 10, 10},
            [](Var<T> x, const AttentionParams<T>& p, Tape<T>&) { return sliding_window_attention(x, p, 5); },
            [](const TensorD& x, const oracle::AttnW& w) { return oracle::naive_sliding_attention(x, w); }, 0.0);
    }
    if (kernel == "dswin_attention") {
        TensorD off = round_trip(random_tensor({1, 50, 8, 8}, r, -2.0, 2.0));
        return attention_case(
            small_attention({5}, 8, 2, false), {1, 8, 8, 8},
            [&](Var<T> x, const AttentionParams<T>& p, Tape<T>& t) {
                return dswin_attention_with_offsets(x, p, std::vector<std::optional<Var<T>>>{t.constant(off.cast<T>())});
            },
            [&](const TensorD& x, const oracle::AttnW& w) {
                return oracle::naive_dswin(x, w, std::vector<std::optional<TensorD>>{off});
            },
            0.0);
    }
    if (kernel == "ms_dswin_attention") {
        return attention_case(
            small_attention({3, 5}, 8, 2, true), {1, 8, 8, 8},
            [](Var<T> x, const AttentionParams<T>& p, Tape<T>&) { return ms_dswin_attention(x, p); },
            [](const TensorD& x, const oracle::AttnW& w) { return oracle::naive_ms_dswin(x, w); }, 0.3);
    }
    if (kernel == "msg_ffn") {
        FfnConfig f;
        f.channels = 4;
        ParamStore<double> st;
        init_ffn(st, "f", f, seed);
        randomize(st, seed, false);
        const ParamStore<T> stt = cast_store<T>(st);
        const TensorD x = round_trip(random_tensor({1, 4, 6, 6}, r));
        Tape<T> t;
        Binder<T> b(t, stt);
        return oracle::compare(kernel, msg_ffn(input_of(t, x), bind_ffn(b, "f", f)).value(),
                               oracle::naive_msg_ffn(x, ffn_w(stt, "f", f)), tol);
    }
    if (kernel == "dstb") {
        const BlockConfig bc = small_block(8, 2, {3, 5});
        ParamStore<double> st;
        init_block(st, "b", bc, seed);
        randomize(st, seed, false, 0.3);
        const ParamStore<T> stt = cast_store<T>(st);
        const TensorD x = round_trip(random_tensor({1, 8, 8, 8}, r));
        Tape<T> t;
        Binder<T> b(t, stt);
        return oracle::compare(kernel, dstb_forward(input_of(t, x), bind_block(b, "b", bc)).value(),
                               oracle::naive_dstb(x, block_w(stt, "b", bc)), tol);
    }
    throw ParameterError("unknown oracle kernel " + kernel);
}

}  // namespace detail

inline const std::vector<std::string>& oracle_kernels() {
    static const std::vector<std::string> k{"conv2d",          "matmul",           "linear",           "softmax",
                                            "bilinear_sample", "window_attention", "sliding_attention", "dswin_attention",
                                            "ms_dswin_attention", "msg_ffn",       "dstb"};
    return k;
}

/// One aggregated report per kernel and precision over `seeds` random instances.
inline std::vector<OracleReport> run_oracle_suite(std::size_t seeds, const std::string& filter = "") {
    std::vector<OracleReport> out;
    for (const auto& k : oracle_kernels()) {
        if (!filter.empty() && k.find(filter) == std::string::npos) continue;
        detail::Aggregate f32(k + "/f32"), f64(k + "/f64");
        for (std::size_t s = 0; s < seeds; ++s) {
            f32.add(detail::oracle_instance<float>(k, s));
            f64.add(detail::oracle_instance<double>(k, s));
        }
        out.push_back(f32.total);
        out.push_back(f64.total);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural properties

namespace props {

template <Scalar T>
Tensor<T> run_attention(const ParamStore<T>& st, const AttentionConfig& c, const Tensor<T>& x,
                        const std::function<Var<T>(Var<T>, const AttentionParams<T>&, Tape<T>&)>& f) {
    Tape<T> t;
    Binder<T> b(t, st);
    return f(t.constant(x), bind_attention(b, "a", c), t).value();
}

/// max |dswin(X, Δ=0) − sliding(X)| in f32 on a random 1×8×8×8 instance.
inline double zero_offset_gap(std::uint64_t seed) {
    const AttentionConfig c = small_attention({5}, 8, 2, true);
    ParamStore<double> sd;
    init_attention(sd, "a", c, seed);
    randomize(sd, seed, false, 0.3);
    const ParamStore<float> st = cast_store<float>(sd);
    Rng r(seed, "zero_offset");
    const TensorF x = random_tensor<float>({1, 8, 8, 8}, r);
    const TensorF a = run_attention<float>(st, c, x, [](Var<float> v, const AttentionParams<float>& p, Tape<float>& t) {
        return dswin_attention_with_offsets(v, p, std::vector<std::optional<Var<float>>>{t.constant(TensorF({1, 50, 8, 8}))});
    });
    const TensorF b = run_attention<float>(st, c, x, [](Var<float> v, const AttentionParams<float>& p, Tape<float>&) {
        return sliding_window_attention(v, p, 5);
    });
    return max_abs_diff(a, b);
}

/// max |model_offsets_on(x) − model_offsets_off(x)| for freshly built f32 models.
inline double fresh_model_gap(std::uint64_t seed, std::size_t hw = 32) {
    ModelConfig on = ModelConfig::tiny(), off = on;
    off.offsets_enabled = false;
    const Model<float> a = build_model<float>(on, seed), b = build_model<float>(off, seed);
    Rng r(seed, "fresh_model");
    const TensorF x = random_tensor<float>({1, 3, hw, hw}, r, 0.0, 1.0);
    return max_abs_diff(infer(a, x), infer(b, x));
}

/// Largest |Σ weights − 1| over every query, head and group of a multi-scale
/// deformable layer with nonzero offsets, and over random softmax rows.
inline double weight_sum_error(std::uint64_t seed) {
    const AttentionConfig c = small_attention({3, 5, 7}, 6, 3, true);
    ParamStore<double> sd;
    init_attention(sd, "a", c, seed);
    randomize(sd, seed, false, 0.5);
    const ParamStore<float> st = cast_store<float>(sd);
    Rng r(seed, "weight_sum");
    const TensorF x = random_tensor<float>({2, 6, 9, 7}, r);
    AttentionTrace<float> trace;
    run_attention<float>(st, c, x, [&](Var<float> v, const AttentionParams<float>& p, Tape<float>&) {
        return ms_dswin_attention(v, p, &trace);
    });
    double worst = 0.0;
    for (const auto& w : trace.weights) {
        const std::size_t n = w.dim(3);
        for (std::size_t row = 0; row < w.numel() / n; ++row) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += w[row * n + i];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    Tape<float> t;
    const TensorF sm = softmax_lastdim(t.constant(random_tensor<float>({64, 49}, r, -20, 20))).value();
    for (std::size_t row = 0; row < 64; ++row) {
        double s = 0.0;
        for (std::size_t i = 0; i < 49; ++i) s += sm[row * 49 + i];
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

/// Sliding attention commutes with a one-pixel diagonal shift away from the
/// border: max |Y'(i, j) − Y(i−1, j−1)| over positions whose neighborhoods
/// stay inside the map.
inline double shift_equivariance_error(std::uint64_t seed) {
    const std::size_t k = 5, r = 2, H = 14, W = 12, C = 4;
    const AttentionConfig c = small_attention({k}, C, 2, false);
    ParamStore<double> sd;
    init_attention(sd, "a", c, seed);
    randomize(sd, seed, false);
    const ParamStore<float> st = cast_store<float>(sd);
    Rng rng(seed, "shift");
    const TensorF x = random_tensor<float>({1, C, H, W}, rng);
    TensorF xs({1, C, H, W});
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) xs.at({0, ch, i, j}) = x.at({0, ch, i ? i - 1 : 0, j ? j - 1 : 0});
    auto run = [&](const TensorF& in) {
        return run_attention<float>(st, c, in, [](Var<float> v, const AttentionParams<float>& p, Tape<float>&) {
            return sliding_window_attention(v, p, 5);
        });
    };
    const TensorF y = run(x), ys = run(xs);
    double worst = 0.0;
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t i = r + 1; i + r < H; ++i)
            for (std::size_t j = r + 1; j + r < W; ++j)
                worst = std::max(worst, double(std::abs(ys.at({0, ch, i, j}) - y.at({0, ch, i - 1, j - 1}))));
    return worst;
}

struct Sensitivity {
    double window = 0.0;   // non-overlapping windows
    double sliding = 0.0;  // token-centric neighborhoods
};

/// Perturbs the last column of one 4×4 window and measures the change at the
/// first column of the neighboring window.
inline Sensitivity boundary_sensitivity(std::uint64_t seed) {
    const std::size_t C = 4, H = 8, W = 8;
    AttentionConfig wc = small_attention({3}, C, 2, false);
    wc.kind = AttentionKind::window;
    wc.window_size = 4;
    const AttentionConfig sc = small_attention({3}, C, 2, false);
    ParamStore<double> sd;
    init_attention(sd, "a", sc, seed);
    randomize(sd, seed, false);
    ParamStore<double> wd;
    init_attention(wd, "a", wc, seed);
    randomize(wd, seed, false);
    Rng rng(seed, "boundary");
    const TensorD x = random_tensor({1, C, H, W}, rng);
    TensorD xp = x;
    for (std::size_t ch = 0; ch < C; ++ch) xp.at({0, ch, 2, 3}) += 1.0;
    auto delta = [&](const TensorD& a, const TensorD& b) {
        double m = 0.0;
        for (std::size_t ch = 0; ch < C; ++ch) m = std::max(m, std::abs(a.at({0, ch, 2, 4}) - b.at({0, ch, 2, 4})));
        return m;
    };
    auto win = [&](const TensorD& in) {
        return run_attention<double>(wd, wc, in, [](Var<double> v, const AttentionParams<double>& p, Tape<double>&) {
            return window_attention_baseline(v, p, 4);
        });
    };
    auto sld = [&](const TensorD& in) {
        return run_attention<double>(sd, sc, in, [](Var<double> v, const AttentionParams<double>& p, Tape<double>&) {
            return sliding_window_attention(v, p, 3);
        });
    };
    return Sensitivity{delta(win(x), win(xp)), delta(sld(x), sld(xp))};
}

}  // namespace props

// ---------------------------------------------------------------------------
// Accounting cross-check

/// Second counting path: walks the built parameter list and charges each
/// tensor by its shape and the feature-map extent its name runs at.
template <Scalar T>
Counts hand_count(const Model<T>& m, std::size_t H, std::size_t W) {
    const ModelConfig& cfg = m.config;
    const std::size_t h0 = (H + 7) / 8 * 8, w0 = (W + 7) / 8 * 8;
    auto digit_after = [](const std::string& name, std::size_t at) { return std::size_t(name[at] - '0'); };
    auto stage_of = [&](const std::string& name) -> std::size_t {
        if (name.rfind("embed", 0) == 0 || name.rfind("head", 0) == 0) return 0;
        if (name.rfind("mid", 0) == 0) return kStages - 1;
        if (name.rfind("enc", 0) == 0 || name.rfind("dec", 0) == 0 || name.rfind("up", 0) == 0) {
            const std::size_t s = digit_after(name, name[0] == 'u' ? 2 : 3);
            return name[0] == 'u' ? s + 1 : s;
        }
        if (name.rfind("down", 0) == 0) return digit_after(name, 4) + 1;
        if (name.rfind("fuse", 0) == 0) return digit_after(name, 4);
        throw ParameterError("unplaced parameter " + name);
    };
    Counts c;
    c.params = m.params.total_numel();
    for (const auto& [name, t] : m.params) {
        const std::size_t s = stage_of(name), h = h0 >> s, w = w0 >> s, P = h * w;
        const std::size_t heads = cfg.heads[s], d = cfg.channels(s) / heads;
        if (ends_with(name, ".w") && t.rank() == 4) {
            c.conv_macs += std::uint64_t(t.numel()) * P;
            c.macs += std::uint64_t(t.numel()) * P;
        } else if (ends_with(name, ".wq") || ends_with(name, ".wk") || ends_with(name, ".wv") || ends_with(name, ".wo")) {
            c.macs += std::uint64_t(t.numel()) * P;
        } else if (ends_with(name, ".bias")) {
            const std::size_t hg = t.dim(0), k = t.dim(1);
            c.macs += std::uint64_t(P) * hg * 2 * k * k * d;
            const std::string group = name.substr(0, name.size() - 5);
            if (m.params.contains(group + ".off.dw.w")) c.macs += std::uint64_t(P) * 4 * k * k * hg * d;
        } else if (ends_with(name, ".rel_bias")) {
            const std::size_t M = std::min({(t.dim(1) + 1) / 2, h, w});
            c.macs += std::uint64_t(P) * t.dim(0) * 2 * M * M * d;
        }
    }
    return c;
}

}  // namespace dswinir::checks
