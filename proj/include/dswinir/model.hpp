#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dswinir/attention.hpp"
#include "dswinir/block.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/params.hpp"

namespace dswinir {

inline constexpr std::size_t kStages = 4;  // three encoder levels plus the bottleneck

struct ModelConfig {
    std::size_t base_channels = 8;
    std::array<std::size_t, kStages> stage_depths{1, 1, 1, 1};
    std::array<std::size_t, kStages> heads{1, 2, 4, 8};
    std::array<std::vector<std::size_t>, kStages> kernel_sizes{
        std::vector<std::size_t>{7}, {5, 7}, {5, 7}, {3, 5}};
    std::size_t ffn_expansion = 2;
    std::vector<BranchSpec> ffn_branches{{3, 1}, {5, 1}, {3, 2}};
    bool msg_ffn_enabled = true;
    bool offsets_enabled = true;
    std::optional<std::size_t> single_kernel_override;
    AttentionKind attention = AttentionKind::sliding;
    std::size_t window_size = 8;

    /// Desk-scale default: C0=8, one block per stage.
    static ModelConfig tiny() { return ModelConfig{}; }

    /// Layout of the full-size network (depths [4,6,6,8], multi-scale kernels).
    static ModelConfig full_size() {
        ModelConfig c;
        c.base_channels = 48;
        c.stage_depths = {4, 6, 6, 8};
        c.heads = {3, 6, 12, 24};
        c.kernel_sizes = {std::vector<std::size_t>{5, 7, 9}, {5, 7, 9}, {3, 5, 7}, {3, 5, 7}};
        return c;
    }

    std::size_t channels(std::size_t stage) const { return base_channels << stage; }

    std::vector<std::size_t> stage_kernels(std::size_t stage) const {
        if (single_kernel_override) return {*single_kernel_override};
        return kernel_sizes[stage];
    }

    BlockConfig block_config(std::size_t stage) const {
        BlockConfig b;
        b.attn.channels = channels(stage);
        b.attn.heads = heads[stage];
        b.attn.kernel_sizes = stage_kernels(stage);
        b.attn.offsets_enabled = offsets_enabled;
        b.attn.kind = attention;
        b.attn.window_size = window_size;
        b.ffn.channels = channels(stage);
        b.ffn.expansion = ffn_expansion;
        b.ffn.branches = ffn_branches;
        b.ffn.msg_enabled = msg_ffn_enabled;
        return b;
    }

    void validate() const {
        if (base_channels == 0) throw ConfigError("base_channels must be positive");
        for (std::size_t s = 0; s < kStages; ++s) {
            if (stage_depths[s] == 0) throw ConfigError("stage depth must be positive at stage " + std::to_string(s));
            try {
                const BlockConfig b = block_config(s);
                b.attn.validate();
                b.ffn.validate();
            } catch (const ParameterError& e) {
                throw ConfigError("stage " + std::to_string(s) + ": " + e.what());
            }
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <Scalar T>
struct Model {
    ModelConfig config;
    ParamStore<T> params;
};

inline std::string block_prefix(const std::string& level, std::size_t stage, std::size_t j) {
    return level + (level == "mid" ? "" : std::to_string(stage)) + ".b" + std::to_string(j);
}

template <Scalar T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m{cfg, {}};
    auto& st = m.params;
    const std::size_t C0 = cfg.base_channels;
    init_conv(st, "embed", 3, C0, 3, 1, seed);
    for (std::size_t s = 0; s < kStages - 1; ++s) {
        for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j)
            init_block(st, block_prefix("enc", s, j), cfg.block_config(s), seed);
        init_conv(st, "down" + std::to_string(s), cfg.channels(s), cfg.channels(s + 1), 3, 1, seed);
    }
    for (std::size_t j = 0; j < cfg.stage_depths[kStages - 1]; ++j)
        init_block(st, block_prefix("mid", kStages - 1, j), cfg.block_config(kStages - 1), seed);
    for (std::size_t s = 0; s < kStages - 1; ++s) {
        init_conv(st, "up" + std::to_string(s), cfg.channels(s + 1), 4 * cfg.channels(s), 1, 1, seed);
        init_conv(st, "fuse" + std::to_string(s), 2 * cfg.channels(s), cfg.channels(s), 1, 1, seed);
        for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j)
            init_block(st, block_prefix("dec", s, j), cfg.block_config(s), seed);
    }
    init_conv(st, "head", C0, 3, 3, 1, seed);
    return m;
}

/// Per-block attention traces keyed by block prefix, plus the feature-map
/// extents seen at every stage.
template <Scalar T>
struct ModelTrace {
    std::map<std::string, AttentionTrace<T>> blocks;
    std::array<std::pair<std::size_t, std::size_t>, kStages> extents{};
};

struct ForwardOptions {
    bool auto_pad = false;
};

namespace detail {

inline std::size_t round_up8(std::size_t n) { return (n + 7) / 8 * 8; }

template <Scalar T>
Var<T> run_blocks(Var<T> h, Binder<T>& bind, const ModelConfig& cfg, const std::string& level, std::size_t s,
                  ModelTrace<T>* trace) {
    const BlockConfig bc = cfg.block_config(s);
    for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j) {
        const std::string name = block_prefix(level, s, j);
        AttentionTrace<T>* t = trace ? &trace->blocks[name] : nullptr;
        h = dstb_forward(h, bind_block(bind, name, bc), t);
    }
    return h;
}

}  // namespace detail

/// U-shaped forward pass on x [B,3,H,W]; returns x + correction. Parameters are
/// bound through `bind`, so the caller decides whether they are trainable.
template <Scalar T>
Var<T> model_forward(Binder<T>& bind, const ModelConfig& cfg, Var<T> x, ForwardOptions opts = {},
                     ModelTrace<T>* trace = nullptr) {
    const Shape& s0 = x.shape();
    if (s0.size() != 4 || s0[1] != 3) throw ShapeError("model input must be [B,3,H,W], got " + shape_str(s0));
    const std::size_t H = s0[2], W = s0[3];
    Var<T> input = x;
    if (H % 8 != 0 || W % 8 != 0) {
        if (!opts.auto_pad)
            throw ShapeError("input extents " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by 8");
        input = pad_replicate(x, detail::round_up8(H) - H, detail::round_up8(W) - W);
    }

    Var<T> h = conv2d(input, bind_conv(bind, "embed", Conv2dOptions{1, 1, 1, 1}));
    std::array<std::optional<Var<T>>, kStages - 1> skips;
    for (std::size_t s = 0; s < kStages - 1; ++s) {
        if (trace) trace->extents[s] = {h.shape()[2], h.shape()[3]};
        h = detail::run_blocks(h, bind, cfg, "enc", s, trace);
        skips[s] = h;
        h = conv2d(h, bind_conv(bind, "down" + std::to_string(s), Conv2dOptions{2, 1, 1, 1}));
    }
    if (trace) trace->extents[kStages - 1] = {h.shape()[2], h.shape()[3]};
    h = detail::run_blocks(h, bind, cfg, "mid", kStages - 1, trace);
    for (std::size_t s = kStages - 1; s-- > 0;) {
        h = depth_to_space(conv2d(h, bind_conv(bind, "up" + std::to_string(s), Conv2dOptions{})), 2);
        if (h.shape() != skips[s]->shape())
            throw ShapeError("skip junction mismatch at stage " + std::to_string(s) + ": " + shape_str(h.shape()) +
                             " vs " + shape_str(skips[s]->shape()));
        h = conv2d(concat_channels(std::vector<Var<T>>{h, *skips[s]}),
                   bind_conv(bind, "fuse" + std::to_string(s), Conv2dOptions{}));
        h = detail::run_blocks<T>(h, bind, cfg, "dec", s, nullptr);
    }
    Var<T> out = add(input, conv2d(h, bind_conv(bind, "head", Conv2dOptions{1, 1, 1, 1})));
    if (out.shape()[2] != H || out.shape()[3] != W) out = crop(out, H, W);
    return out;
}

/// Forward pass without gradients; pads and crops as needed.
template <Scalar T>
Tensor<T> infer(const Model<T>& m, const Tensor<T>& x, ModelTrace<T>* trace = nullptr) {
    Tape<T> tape;
    Binder<T> bind(tape, m.params, false);
    return model_forward(bind, m.config, tape.constant(x), ForwardOptions{true}, trace).value();
}

// ---------------------------------------------------------------------------
// Accounting

struct Counts {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;       // everything counted below
    std::uint64_t conv_macs = 0;  // convolution share only
};

inline std::uint64_t conv_macs(std::size_t in, std::size_t out, std::size_t groups, std::size_t k, std::size_t Ho,
                               std::size_t Wo) {
    return std::uint64_t(out) * (in / groups) * k * k * Ho * Wo;
}

/// Analytic parameter and multiply-accumulate counts for an H×W input.
/// Convolutions: out·(in/groups)·k²·H'·W'. q/k/v/out projections: C²·H·W each.
/// Neighborhood attention: 2·k²·d per query per head, plus 4·k²·C_g per query
/// for bilinear sampling when offsets are on. Window attention: 2·M²·d per
/// query per head. Normalization, activations, softmax and gating are free.
inline Counts count_params_flops(const ModelConfig& cfg, std::size_t H, std::size_t W) {
    cfg.validate();
    Counts c;
    auto conv = [&](std::size_t in, std::size_t out, std::size_t groups, std::size_t k, std::size_t Ho,
                    std::size_t Wo) {
        c.params += std::uint64_t(out) * (in / groups) * k * k + out;
        const auto m = conv_macs(in, out, groups, k, Ho, Wo);
        c.macs += m;
        c.conv_macs += m;
    };
    auto block = [&](std::size_t s, std::size_t h, std::size_t w) {
        const BlockConfig b = cfg.block_config(s);
        const std::size_t C = b.attn.channels, P = h * w, d = b.attn.head_dim();
        c.params += 4 * C;  // two layernorms
        c.params += 4 * (C * C + C);
        c.macs += 4 * std::uint64_t(C) * C * P;
        if (b.attn.kind == AttentionKind::window) {
            const std::size_t M = b.attn.window_size, Me = effective_window(M, h, w);
            c.params += b.attn.heads * (2 * M - 1) * (2 * M - 1);
            c.macs += std::uint64_t(P) * b.attn.heads * 2 * Me * Me * d;
        } else {
            const std::size_t hg = b.attn.heads_per_group();
            for (auto k : b.attn.kernel_sizes) {
                c.params += hg * k * k;
                c.macs += std::uint64_t(P) * hg * 2 * k * k * d;
                if (b.attn.offsets_enabled) {
                    c.macs += std::uint64_t(P) * 4 * k * k * (hg * d);
                    conv(C, C, C, k, h, w);
                    conv(C, C, 1, 1, h, w);
                    conv(C, 2 * k * k, 1, 1, h, w);
                }
            }
        }
        const std::size_t R = b.ffn.hidden();
        if (!b.ffn.msg_enabled) {
            conv(C, R, 1, 1, h, w);
            conv(R, C, 1, 1, h, w);
            return;
        }
        conv(C, 2 * R, 1, 1, h, w);
        for (const auto& br : b.ffn.branches) conv(R, R, R, br.kernel, h, w);
        conv(b.ffn.branches.size() * R, R, 1, 1, h, w);
        conv(R, C, 1, 1, h, w);
    };

    std::size_t h = detail::round_up8(H), w = detail::round_up8(W);
    conv(3, cfg.channels(0), 1, 3, h, w);
    for (std::size_t s = 0; s < kStages - 1; ++s) {
        for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j) block(s, h, w);
        h /= 2;
        w /= 2;
        conv(cfg.channels(s), cfg.channels(s + 1), 1, 3, h, w);
    }
    for (std::size_t j = 0; j < cfg.stage_depths[kStages - 1]; ++j) block(kStages - 1, h, w);
    for (std::size_t s = kStages - 1; s-- > 0;) {
        conv(cfg.channels(s + 1), 4 * cfg.channels(s), 1, 1, h, w);
        h *= 2;
        w *= 2;
        conv(2 * cfg.channels(s), cfg.channels(s), 1, 1, h, w);
        for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j) block(s, h, w);
    }
    conv(cfg.channels(0), 3, 1, 3, h, w);
    return c;
}

}  // namespace dswinir
