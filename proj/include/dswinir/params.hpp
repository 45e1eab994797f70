#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "dswinir/autograd.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/rng.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

/// Named parameter tensors, ordered by name.
template <Scalar T>
class ParamStore {
public:
    using Map = std::map<std::string, Tensor<T>>;

    void add(const std::string& name, Tensor<T> t) {
        if (!tensors_.emplace(name, std::move(t)).second) throw ConfigError("duplicate parameter " + name);
    }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor<T>& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

    std::size_t size() const { return tensors_.size(); }
    std::size_t total_numel() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.numel();
        return n;
    }
    typename Map::const_iterator begin() const { return tensors_.begin(); }
    typename Map::const_iterator end() const { return tensors_.end(); }
    typename Map::iterator begin() { return tensors_.begin(); }
    typename Map::iterator end() { return tensors_.end(); }

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

private:
    Map tensors_;
};

/// Puts parameters on a tape on first use. Overrides substitute an arbitrary
/// node for a named parameter (used by gradient checks).
template <Scalar T>
class Binder {
public:
    Binder(Tape<T>& tape, const ParamStore<T>& store, bool trainable = false)
        : tape_(tape), store_(store), trainable_(trainable) {}

    Var<T> operator()(const std::string& name) {
        if (auto it = overrides_.find(name); it != overrides_.end()) return it->second;
        if (auto it = bound_.find(name); it != bound_.end()) return it->second;
        Var<T> v = tape_.leaf(store_.at(name), trainable_);
        bound_.emplace(name, v);
        return v;
    }
    bool has(const std::string& name) const { return store_.contains(name) || overrides_.count(name); }

    void override_param(const std::string& name, Var<T> v) { overrides_.insert_or_assign(name, v); }

    Tape<T>& tape() { return tape_; }
    const std::map<std::string, Var<T>>& bound() const { return bound_; }

private:
    Tape<T>& tape_;
    const ParamStore<T>& store_;
    bool trainable_;
    std::map<std::string, Var<T>> bound_;
    std::map<std::string, Var<T>> overrides_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn from the stream named after
/// the parameter, so a parameter's initial value does not depend on which
/// other parameters exist.
template <Scalar T>
Tensor<T> fan_in_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, const std::string& name) {
    Tensor<T> t(shape);
    Rng rng(seed, name);
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

/// Adds "<prefix>.w" [out, in/groups, k, k] and "<prefix>.b" [out] (zero).
template <Scalar T>
void init_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k,
               std::size_t groups, std::uint64_t seed, bool zero = false) {
    const Shape ws{out, in / groups, k, k};
    const std::size_t fan_in = (in / groups) * k * k;
    store.add(prefix + ".w", zero ? Tensor<T>(ws) : fan_in_uniform<T>(ws, fan_in, seed, prefix + ".w"));
    store.add(prefix + ".b", Tensor<T>({out}));
}

template <Scalar T>
Conv2dParams<T> bind_conv(Binder<T>& bind, const std::string& prefix, Conv2dOptions opts) {
    return Conv2dParams<T>{bind(prefix + ".w"), bind(prefix + ".b"), opts};
}

}  // namespace dswinir
