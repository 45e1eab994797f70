#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dswinir/error.hpp"

namespace dswinir {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Scalar T>
constexpr DType dtype_of() {
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > kMaxRank)
        throw ShapeError("rank must be in [1," + std::to_string(kMaxRank) + "], got shape " +
                         shape_str(s));
    for (auto e : s)
        if (e == 0) throw ShapeError("zero extent in shape " + shape_str(s));
}

// NaN/Inf detection after public operations. On by default; `bench` turns it off.
inline std::atomic<bool>& finite_checks_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
inline bool finite_checks_enabled() { return finite_checks_flag().load(std::memory_order_relaxed); }
inline void set_finite_checks(bool on) { finite_checks_flag().store(on, std::memory_order_relaxed); }

/// Dense row-major tensor of float or double. Value semantics: copying a
/// tensor copies its buffer.
template <Scalar T>
class Tensor {
public:
    using value_type = T;
    static constexpr DType dtype = dtype_of<T>();

    Tensor() : shape_{1}, data_(1, T(0)) {}

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("buffer length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::initializer_list<T> data)
        : Tensor(std::move(shape), std::vector<T>(data)) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                             std::to_string(shape_.size()));
        std::size_t off = 0, k = 0;
        for (auto i : idx) {
            if (i >= shape_[k]) throw ShapeError("index out of range on axis " + std::to_string(k));
            off = off * shape_[k++] + i;
        }
        return off;
    }
    T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Slicing and reshaping copy; there are no views.
    Tensor reshape(Shape s) const {
        validate_shape(s);
        if (shape_numel(s) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    template <Scalar U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <Scalar T>
void check_finite(const Tensor<T>& t, const char* what) {
    if (finite_checks_enabled() && !t.all_finite())
        throw NumericError(std::string("non-finite value produced by ") + what);
}

template <Scalar T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

/// Fixed-order pairwise summation in double. The split points depend only on
/// the length, so results are reproducible.
template <class It>
double pairwise_sum(It first, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(first[i]);
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(first, h) + pairwise_sum(first + h, n - h);
}

// ---------------------------------------------------------------------------
// Elementwise math

enum class EwOp { add, sub, mul, div, neg, exp, sqrt, max };

inline bool ew_is_unary(EwOp op) { return op == EwOp::neg || op == EwOp::exp || op == EwOp::sqrt; }

namespace detail {

template <Scalar T>
T ew_apply(EwOp op, T a, T b) {
    switch (op) {
        case EwOp::add: return a + b;
        case EwOp::sub: return a - b;
        case EwOp::mul: return a * b;
        case EwOp::div:
            if (b == T(0)) throw NumericError("division by exact zero");
            return a / b;
        case EwOp::neg: return -a;
        case EwOp::exp: return std::exp(a);
        case EwOp::sqrt: return std::sqrt(a);
        case EwOp::max: return std::max(a, b);
    }
    return a;
}

// b broadcasts onto a when, after dropping b's leading unit extents, b's shape
// is a suffix of a's shape.
inline bool broadcastable(const Shape& a, const Shape& b) {
    if (shape_numel(b) == 1) return true;
    std::size_t lead = 0;
    while (b[lead] == 1) ++lead;
    const std::size_t tail = b.size() - lead;
    if (tail > a.size()) return false;
    return std::equal(b.begin() + lead, b.end(), a.end() - tail);
}

}  // namespace detail

template <Scalar T>
Tensor<T> ew(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
    if (ew_is_unary(op)) throw ParameterError("unary elementwise op given a second operand");
    if (a.shape() != b.shape() && !detail::broadcastable(a.shape(), b.shape()))
        throw ShapeError("cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
    Tensor<T> out(a.shape());
    const std::size_t bn = b.numel();
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_apply(op, a[i], b[i % bn]);
    check_finite(out, "ew");
    return out;
}

template <Scalar T>
Tensor<T> ew(EwOp op, const Tensor<T>& a, T scalar) {
    if (ew_is_unary(op)) throw ParameterError("unary elementwise op given a second operand");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_apply(op, a[i], scalar);
    check_finite(out, "ew");
    return out;
}

template <Scalar T>
Tensor<T> ew(EwOp op, const Tensor<T>& a) {
    if (!ew_is_unary(op)) throw ParameterError("binary elementwise op given one operand");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_apply(op, a[i], T(0));
    check_finite(out, "ew");
    return out;
}

// ---------------------------------------------------------------------------
// Contractions and reductions

/// c[i,j] = sum_t a[i,t] * b[t,j], accumulated in double.
template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
    if (b.dim(0) != p)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Tensor<T> c({m, n});
    std::vector<double> row(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t t = 0; t < p; ++t) {
            const double av = a[i * p + t];
            const T* brow = b.ptr() + t * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * static_cast<double>(brow[j]);
        }
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = static_cast<T>(row[j]);
    }
    check_finite(c, "matmul");
    return c;
}

enum class ReduceOp { sum, mean, max };

/// Reduces one axis. A rank-1 input yields shape [1].
template <Scalar T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape os;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) os.push_back(s[i]);
    if (os.empty()) os.push_back(1);
    Tensor<T> out(os);
    std::vector<double> buf(len);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            for (std::size_t l = 0; l < len; ++l) buf[l] = x[(o * len + l) * inner + in];
            double r = 0.0;
            switch (op) {
                case ReduceOp::sum: r = pairwise_sum(buf.begin(), len); break;
                case ReduceOp::mean: r = pairwise_sum(buf.begin(), len) / double(len); break;
                case ReduceOp::max: r = *std::max_element(buf.begin(), buf.end()); break;
            }
            out[o * inner + in] = static_cast<T>(r);
        }
    check_finite(out, "reduce");
    return out;
}

template <Scalar T>
double sum_all(const Tensor<T>& x) {
    return pairwise_sum(x.ptr(), x.numel());
}

template <Scalar T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace dswinir
