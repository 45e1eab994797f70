#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dswinir/attention.hpp"
#include "dswinir/autograd.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/params.hpp"

namespace dswinir {

struct BranchSpec {
    std::size_t kernel = 3;
    std::size_t dilation = 1;
    friend auto operator<=>(const BranchSpec&, const BranchSpec&) = default;
};

struct FfnConfig {
    std::size_t channels = 8;
    std::size_t expansion = 2;
    std::vector<BranchSpec> branches{{3, 1}, {5, 1}, {3, 2}};
    bool msg_enabled = true;

    std::size_t hidden() const { return expansion * channels; }

    void validate() const {
        if (channels == 0 || expansion == 0) throw ParameterError("ffn channels and expansion must be positive");
        if (!msg_enabled) return;
        if (branches.empty()) throw ParameterError("gated ffn needs at least one branch");
        std::set<BranchSpec> seen;
        for (const auto& b : branches) {
            if (b.kernel % 2 == 0 || b.dilation == 0)
                throw ParameterError("branch kernel must be odd and dilation positive");
            if (!seen.insert(b).second) throw ParameterError("duplicate (kernel, dilation) branch");
        }
    }
};

/// Multi-scale gated FFN weights, or the plain two-layer variant when `msg` is false.
template <Scalar T>
struct FfnParams {
    bool msg = true;
    std::size_t hidden = 0;
    Conv2dParams<T> expand;             // msg: C → 2rC; plain: fc1 C → rC
    std::vector<Conv2dParams<T>> branches;  // depthwise on the gate half
    Conv2dParams<T> fuse;               // nb·rC → rC
    Conv2dParams<T> project;            // msg: rC → C; plain: fc2
};

struct BlockConfig {
    AttentionConfig attn;
    FfnConfig ffn;
};

template <Scalar T>
struct DstbParams {
    Var<T> norm1_g, norm1_b, norm2_g, norm2_b;
    AttentionParams<T> attn;
    FfnParams<T> ffn;
};

template <Scalar T>
void init_ffn(ParamStore<T>& store, const std::string& prefix, const FfnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t C = cfg.channels, R = cfg.hidden();
    if (!cfg.msg_enabled) {
        init_conv(store, prefix + ".fc1", C, R, 1, 1, seed);
        init_conv(store, prefix + ".fc2", R, C, 1, 1, seed);
        return;
    }
    init_conv(store, prefix + ".expand", C, 2 * R, 1, 1, seed);
    for (std::size_t i = 0; i < cfg.branches.size(); ++i)
        init_conv(store, prefix + ".br" + std::to_string(i), R, R, cfg.branches[i].kernel, R, seed);
    init_conv(store, prefix + ".fuse", cfg.branches.size() * R, R, 1, 1, seed);
    init_conv(store, prefix + ".project", R, C, 1, 1, seed);
}

template <Scalar T>
FfnParams<T> bind_ffn(Binder<T>& bind, const std::string& prefix, const FfnConfig& cfg) {
    cfg.validate();
    FfnParams<T> p;
    p.msg = cfg.msg_enabled;
    p.hidden = cfg.hidden();
    if (!cfg.msg_enabled) {
        p.expand = bind_conv(bind, prefix + ".fc1", Conv2dOptions{});
        p.project = bind_conv(bind, prefix + ".fc2", Conv2dOptions{});
        return p;
    }
    p.expand = bind_conv(bind, prefix + ".expand", Conv2dOptions{});
    for (std::size_t i = 0; i < cfg.branches.size(); ++i) {
        const auto& b = cfg.branches[i];
        p.branches.push_back(bind_conv(bind, prefix + ".br" + std::to_string(i),
                                       Conv2dOptions{1, b.dilation * (b.kernel - 1) / 2, b.dilation, p.hidden}));
    }
    p.fuse = bind_conv(bind, prefix + ".fuse", Conv2dOptions{});
    p.project = bind_conv(bind, prefix + ".project", Conv2dOptions{});
    return p;
}

/// expand → split into content and gate halves → gate through parallel
/// depthwise branches, concatenated and fused by a pointwise conv → GELU →
/// content ⊙ gate → project back to C.
template <Scalar T>
Var<T> msg_ffn(Var<T> x, const FfnParams<T>& p) {
    if (!p.msg) return conv2d(gelu(conv2d(x, p.expand)), p.project);
    Var<T> h = conv2d(x, p.expand);
    Var<T> content = slice_channels(h, 0, p.hidden);
    Var<T> gate = slice_channels(h, p.hidden, 2 * p.hidden);
    std::vector<Var<T>> outs;
    outs.reserve(p.branches.size());
    for (const auto& br : p.branches) outs.push_back(conv2d(gate, br));
    Var<T> fused = conv2d(outs.size() == 1 ? outs[0] : concat_channels(outs), p.fuse);
    return conv2d(mul(content, gelu(fused)), p.project);
}

template <Scalar T>
void init_block(ParamStore<T>& store, const std::string& prefix, const BlockConfig& cfg, std::uint64_t seed) {
    if (cfg.attn.channels != cfg.ffn.channels) throw ConfigError("attention and ffn channel widths differ");
    const std::size_t C = cfg.attn.channels;
    store.add(prefix + ".norm1.g", Tensor<T>({C}, T(1)));
    store.add(prefix + ".norm1.b", Tensor<T>({C}));
    init_attention(store, prefix + ".attn", cfg.attn, seed);
    store.add(prefix + ".norm2.g", Tensor<T>({C}, T(1)));
    store.add(prefix + ".norm2.b", Tensor<T>({C}));
    init_ffn(store, prefix + ".ffn", cfg.ffn, seed);
}

template <Scalar T>
DstbParams<T> bind_block(Binder<T>& bind, const std::string& prefix, const BlockConfig& cfg) {
    return DstbParams<T>{bind(prefix + ".norm1.g"), bind(prefix + ".norm1.b"),   bind(prefix + ".norm2.g"),
                         bind(prefix + ".norm2.b"), bind_attention(bind, prefix + ".attn", cfg.attn),
                         bind_ffn(bind, prefix + ".ffn", cfg.ffn)};
}

/// y = x + attn(norm1(x)); out = y + ffn(norm2(y)).
template <Scalar T>
Var<T> dstb_forward(Var<T> x, const DstbParams<T>& p, AttentionTrace<T>* trace = nullptr) {
    Var<T> y = add(x, ms_dswin_attention(layernorm(x, p.norm1_g, p.norm1_b), p.attn, trace));
    return add(y, msg_ffn(layernorm(y, p.norm2_g, p.norm2_b), p.ffn));
}

}  // namespace dswinir
