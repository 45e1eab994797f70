#pragma once

#include <cstddef>
#include <vector>

#include "dswinir/tensor.hpp"

namespace dswinir::oracle {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// coordinate listed in `coords` (all coordinates when empty). Coordinates not
/// probed are left at zero.
template <class F>
TensorD finite_diff(F&& f, const TensorD& x, double eps, const std::vector<std::size_t>& coords = {}) {
    TensorD grad(x.shape());
    TensorD probe = x;
    auto visit = [&](std::size_t i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    };
    if (coords.empty())
        for (std::size_t i = 0; i < x.numel(); ++i) visit(i);
    else
        for (auto i : coords) visit(i);
    return grad;
}

}  // namespace dswinir::oracle
