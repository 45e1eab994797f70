#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dswinir/oracle/finite_diff.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

template <Scalar T>
class Tape;

/// Handle to a node on a tape.
template <Scalar T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    bool requires_grad() const { return tape->requires_grad(id); }
};

/// Receives the per-parent gradients produced by one vector-Jacobian product.
template <Scalar T>
class GradSink {
public:
    GradSink(std::vector<std::optional<Tensor<T>>>& store, const std::vector<std::size_t>& parents,
             const std::vector<bool>& needs)
        : store_(store), parents_(parents), needs_(needs) {}

    bool needs(std::size_t slot) const { return needs_.at(slot); }

    void add(std::size_t slot, Tensor<T> g) {
        if (!needs_.at(slot)) return;
        auto& dst = store_[parents_[slot]];
        if (!dst) {
            dst = std::move(g);
            return;
        }
        require_same_shape(*dst, g, "gradient accumulation");
        for (std::size_t i = 0; i < g.numel(); ++i) (*dst)[i] += g[i];
    }

private:
    std::vector<std::optional<Tensor<T>>>& store_;
    const std::vector<std::size_t>& parents_;
    const std::vector<bool>& needs_;
};

/// Leaf gradients produced by Tape::backward, keyed by node id.
template <Scalar T>
class Gradients {
public:
    bool has(Var<T> v) const { return grads_.count(v.id) != 0; }
    const Tensor<T>& operator[](Var<T> v) const {
        auto it = grads_.find(v.id);
        if (it == grads_.end()) throw TapeError("no gradient for node " + std::to_string(v.id));
        return it->second;
    }
    std::size_t size() const { return grads_.size(); }
    void set(std::size_t id, Tensor<T> g) { grads_.insert_or_assign(id, std::move(g)); }

private:
    std::map<std::size_t, Tensor<T>> grads_;
};

/// Define-by-run reverse-mode tape. Nodes are appended in topological order;
/// backward walks ids downward, visiting each node once.
template <Scalar T>
class Tape {
public:
    using Vjp = std::function<void(const Tensor<T>& upstream, GradSink<T>& sink)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        check_finite(value, "leaf");
        nodes_.push_back(Node{std::move(value), {}, requires_grad, true, "leaf", {}});
        return {this, nodes_.size() - 1};
    }
    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var<T> record(std::string_view op, const std::vector<Var<T>>& inputs, Tensor<T> value, Vjp vjp) {
        std::vector<std::size_t> parents;
        parents.reserve(inputs.size());
        bool rg = false;
        for (const auto& in : inputs) {
            if (in.tape != this || in.id >= nodes_.size())
                throw TapeError(std::string(op) + ": input " + std::to_string(in.id) +
                                " is not on this tape");
            parents.push_back(in.id);
            rg = rg || nodes_[in.id].requires_grad;
        }
        check_finite(value, std::string(op).c_str());
        nodes_.push_back(Node{std::move(value), std::move(parents), rg, false, std::string(op),
                              rg ? std::move(vjp) : Vjp{}});
        return {this, nodes_.size() - 1};
    }

    const Tensor<T>& value(std::size_t id) const { return node(id).value; }
    bool requires_grad(std::size_t id) const { return node(id).requires_grad; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return node(id).parents; }
    const std::string& op(std::size_t id) const { return node(id).op; }
    std::size_t size() const { return nodes_.size(); }

    Gradients<T> backward(Var<T> loss) {
        if (loss.tape != this || loss.id >= nodes_.size()) throw TapeError("loss is not on this tape");
        if (value(loss.id).numel() != 1)
            throw ShapeError("backward needs a single-element loss, got " +
                             shape_str(value(loss.id).shape()));
        Gradients<T> out;
        if (!nodes_[loss.id].requires_grad) return out;
        std::vector<std::optional<Tensor<T>>> grads(loss.id + 1);
        grads[loss.id] = Tensor<T>(value(loss.id).shape(), T(1));
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            if (!grads[id]) continue;
            Node& n = nodes_[id];
            if (n.leaf) {
                if (n.requires_grad) out.set(id, std::move(*grads[id]));
                grads[id].reset();
                continue;
            }
            if (n.vjp) {
                std::vector<bool> needs(n.parents.size());
                for (std::size_t k = 0; k < n.parents.size(); ++k)
                    needs[k] = nodes_[n.parents[k]].requires_grad;
                GradSink<T> sink(grads, n.parents, needs);
                n.vjp(*grads[id], sink);
            }
            grads[id].reset();
        }
        return out;
    }

private:
    struct Node {
        Tensor<T> value;
        std::vector<std::size_t> parents;
        bool requires_grad = false;
        bool leaf = false;
        std::string op;
        Vjp vjp;
    };

    const Node& node(std::size_t id) const {
        if (id >= nodes_.size()) throw TapeError("dangling node id " + std::to_string(id));
        return nodes_[id];
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Tensor-level primitives

template <Scalar T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = ew(EwOp::add, a.value(), b.value());
    return a.tape->record("add", {a, b}, std::move(out), [](const Tensor<T>& g, GradSink<T>& s) {
        s.add(0, g);
        s.add(1, g);
    });
}

template <Scalar T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = ew(EwOp::sub, a.value(), b.value());
    return a.tape->record("sub", {a, b}, std::move(out), [](const Tensor<T>& g, GradSink<T>& s) {
        s.add(0, g);
        if (s.needs(1)) s.add(1, ew(EwOp::neg, g));
    });
}

template <Scalar T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = ew(EwOp::mul, a.value(), b.value());
    return a.tape->record("mul", {a, b}, std::move(out), [a, b](const Tensor<T>& g, GradSink<T>& s) {
        if (s.needs(0)) s.add(0, ew(EwOp::mul, g, b.value()));
        if (s.needs(1)) s.add(1, ew(EwOp::mul, g, a.value()));
    });
}

template <Scalar T>
Var<T> scale(Var<T> a, T c) {
    return a.tape->record("scale", {a}, ew(EwOp::mul, a.value(), c),
                          [c](const Tensor<T>& g, GradSink<T>& s) { s.add(0, ew(EwOp::mul, g, c)); });
}

template <Scalar T>
Var<T> add_scalar(Var<T> a, T c) {
    return a.tape->record("add_scalar", {a}, ew(EwOp::add, a.value(), c),
                          [](const Tensor<T>& g, GradSink<T>& s) { s.add(0, g); });
}

template <Scalar T>
Var<T> neg(Var<T> a) {
    return a.tape->record("neg", {a}, ew(EwOp::neg, a.value()),
                          [](const Tensor<T>& g, GradSink<T>& s) { s.add(0, ew(EwOp::neg, g)); });
}

template <Scalar T>
Var<T> exp(Var<T> a) {
    Tensor<T> out = ew(EwOp::exp, a.value());
    return a.tape->record("exp", {a}, out, [out](const Tensor<T>& g, GradSink<T>& s) {
        s.add(0, ew(EwOp::mul, g, out));
    });
}

template <Scalar T>
Var<T> sum(Var<T> a) {
    Tensor<T> out({1}, static_cast<T>(sum_all(a.value())));
    return a.tape->record("sum", {a}, std::move(out), [shape = a.shape()](const Tensor<T>& g, GradSink<T>& s) {
        s.add(0, Tensor<T>(shape, g[0]));
    });
}

template <Scalar T>
Var<T> mean(Var<T> a) {
    const double n = double(a.value().numel());
    Tensor<T> out({1}, static_cast<T>(sum_all(a.value()) / n));
    return a.tape->record("mean", {a}, std::move(out),
                          [shape = a.shape(), n](const Tensor<T>& g, GradSink<T>& s) {
                              s.add(0, Tensor<T>(shape, static_cast<T>(g[0] / n)));
                          });
}

template <Scalar T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tensor<T> out = matmul(a.value(), b.value());
    return a.tape->record("matmul", {a, b}, std::move(out), [a, b](const Tensor<T>& g, GradSink<T>& s) {
        const auto& av = a.value();
        const auto& bv = b.value();
        if (s.needs(0)) {
            // g · bᵀ
            Tensor<T> bt({bv.dim(1), bv.dim(0)});
            for (std::size_t i = 0; i < bv.dim(0); ++i)
                for (std::size_t j = 0; j < bv.dim(1); ++j) bt[j * bv.dim(0) + i] = bv[i * bv.dim(1) + j];
            s.add(0, matmul(g, bt));
        }
        if (s.needs(1)) {
            Tensor<T> at({av.dim(1), av.dim(0)});
            for (std::size_t i = 0; i < av.dim(0); ++i)
                for (std::size_t j = 0; j < av.dim(1); ++j) at[j * av.dim(0) + i] = av[i * av.dim(1) + j];
            s.add(1, matmul(at, g));
        }
    });
}

template <Scalar T>
Var<T> reshape(Var<T> a, Shape shape) {
    return a.tape->record("reshape", {a}, a.value().reshape(shape),
                          [old = a.shape()](const Tensor<T>& g, GradSink<T>& s) { s.add(0, g.reshape(old)); });
}

/// Single element of `a` at a flat index, as a [1] tensor.
template <Scalar T>
Var<T> pick(Var<T> a, std::size_t flat) {
    if (flat >= a.value().numel()) throw ShapeError("pick index out of range");
    return a.tape->record("pick", {a}, Tensor<T>({1}, a.value()[flat]),
                          [shape = a.shape(), flat](const Tensor<T>& g, GradSink<T>& s) {
                              Tensor<T> d(shape);
                              d[flat] = g[0];
                              s.add(0, std::move(d));
                          });
}

/// sum(a ⊙ w) for a constant weight tensor: a random scalar projection.
template <Scalar T>
Var<T> project(Var<T> a, const Tensor<T>& w) {
    require_same_shape(a.value(), w, "project");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) acc += double(a.value()[i]) * double(w[i]);
    return a.tape->record("project", {a}, Tensor<T>({1}, static_cast<T>(acc)),
                          [w](const Tensor<T>& g, GradSink<T>& s) { s.add(0, ew(EwOp::mul, w, g[0])); });
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckResult {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // |analytic - numeric| / max(1, |numeric|)
    std::size_t worst_index = 0;
    std::size_t probed = 0;
};

/// Compares the tape gradient of the scalar f(x) against central differences.
/// `f` is a callable (Tape<double>&, Var<double>) -> Var<double> that builds
/// its graph from scratch. `coords` restricts probing to a subset.
template <class F>
GradCheckResult grad_check(F&& f, const TensorD& x, double eps, const std::vector<std::size_t>& coords = {}) {
    if (!(eps >= 1e-6 && eps <= 1e-2)) throw ParameterError("grad_check eps must lie in [1e-6, 1e-2]");
    auto eval = [&](const TensorD& at) {
        Tape<double> tape;
        Var<double> v = tape.leaf(at, false);
        Var<double> out = f(tape, v);
        if (out.value().numel() != 1) throw ShapeError("grad_check function must return a scalar");
        return out.value()[0];
    };

    Tape<double> tape;
    Var<double> xv = tape.leaf(x, true);
    Var<double> loss = f(tape, xv);
    const double base = loss.value()[0];
    Gradients<double> grads = tape.backward(loss);
    TensorD analytic = grads.has(xv) ? grads[xv] : TensorD(x.shape());

    const double again = eval(x);
    if (again != base) throw CheckError("function is not deterministic across evaluations");

    TensorD numeric = oracle::finite_diff(eval, x, eps, coords);
    if (eval(x) != base) throw CheckError("function is not deterministic across evaluations");

    GradCheckResult r;
    auto visit = [&](std::size_t i) {
        const double diff = std::abs(analytic[i] - numeric[i]);
        const double rel = diff / std::max(1.0, std::abs(numeric[i]));
        r.max_abs_err = std::max(r.max_abs_err, diff);
        if (r.probed == 0 || rel > r.max_rel_err) {
            r.worst_index = i;
            r.max_rel_err = rel;
        }
        ++r.probed;
    };
    if (coords.empty())
        for (std::size_t i = 0; i < x.numel(); ++i) visit(i);
    else
        for (auto i : coords) visit(i);
    return r;
}

}  // namespace dswinir
