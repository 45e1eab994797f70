#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>

#include "dswinir/error.hpp"
#include "dswinir/params.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

/// eta_min + (lr0 - eta_min)(1 + cos(pi step / total)) / 2.
inline double cosine_lr(std::size_t step, std::size_t total, double lr0, double eta_min) {
    if (total == 0) throw ParameterError("cosine schedule needs total >= 1");
    if (step > total)
        throw ParameterError("step " + std::to_string(step) + " beyond schedule length " + std::to_string(total));
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * double(step) / double(total)));
}

struct AdamHyper {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <Scalar T>
struct AdamState {
    std::map<std::string, Tensor<T>> m, v;
    std::uint64_t step = 0;

    bool operator==(const AdamState&) const = default;
};

/// One AdamW update: p ← p − lr·λ·p, then the bias-corrected Adam step.
template <Scalar T>
void adamw_step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state,
                const AdamHyper& h) {
    if (grads.size() != params.size())
        throw OptimizerError("got " + std::to_string(grads.size()) + " gradients for " +
                             std::to_string(params.size()) + " parameters");
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw OptimizerError("missing gradient for " + name);
        if (it->second.shape() != p.shape()) throw OptimizerError("gradient shape mismatch for " + name);
    }
    if (state.step == 0 && state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.emplace(name, Tensor<T>(p.shape()));
            state.v.emplace(name, Tensor<T>(p.shape()));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw OptimizerError("optimizer state does not match the parameter set");
    state.step += 1;
    const double t = double(state.step);
    const double c1 = 1.0 - std::pow(h.beta1, t), c2 = 1.0 - std::pow(h.beta2, t);
    for (auto& [name, p] : params) {
        auto mi = state.m.find(name), vi = state.v.find(name);
        if (mi == state.m.end() || vi == state.v.end()) throw OptimizerError("no optimizer state for " + name);
        const Tensor<T>& g = grads.at(name);
        Tensor<T>& m = mi->second;
        Tensor<T>& v = vi->second;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            const double mn = h.beta1 * double(m[i]) + (1.0 - h.beta1) * gi;
            const double vn = h.beta2 * double(v[i]) + (1.0 - h.beta2) * gi * gi;
            m[i] = static_cast<T>(mn);
            v[i] = static_cast<T>(vn);
            double pi = double(p[i]);
            pi -= h.lr * h.weight_decay * pi;
            pi -= h.lr * (mn / c1) / (std::sqrt(vn / c2) + h.eps);
            p[i] = static_cast<T>(pi);
        }
    }
}

}  // namespace dswinir
