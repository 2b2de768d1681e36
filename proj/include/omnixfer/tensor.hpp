#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omnixfer {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("negative axis length in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Runtime toggle for post-op finiteness validation (verification mode).
bool finite_checks_enabled();
void set_finite_checks(bool on);

/// Dense row-major n-d array of real values. Immutable by convention:
/// operations return new tensors and never modify their inputs.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        for (T& v : t.data_) v = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    template <typename... Ix>
    T& operator()(Ix... ix) {
        return data_[static_cast<size_t>(flat_index({static_cast<int64_t>(ix)...}))];
    }
    template <typename... Ix>
    const T& operator()(Ix... ix) const {
        return data_[static_cast<size_t>(flat_index({static_cast<int64_t>(ix)...}))];
    }

    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel()) {
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                        shape_str(new_shape) + ": element count differs");
        }
        return Tensor(std::move(new_shape), data_);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    int64_t flat_index(std::initializer_list<int64_t> ix) const {
        if (ix.size() != shape_.size()) {
            throw std::invalid_argument("index rank " + std::to_string(ix.size()) +
                                        " vs tensor rank " + std::to_string(shape_.size()));
        }
        int64_t off = 0;
        size_t a = 0;
        for (int64_t i : ix) {
#ifndef NDEBUG
            if (i < 0 || i >= shape_[a]) {
                throw std::out_of_range("index " + std::to_string(i) + " out of range on axis " +
                                        std::to_string(a) + " of " + shape_str(shape_));
            }
#endif
            off = off * shape_[a] + i;
            ++a;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (finite_checks_enabled() && !t.all_finite()) {
        throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "hadamard");
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

/// Concatenates a and b along `axis`. All other axis lengths must match.
template <typename T>
Tensor<T> concat(int axis, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank()) {
        throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    if (axis < 0 || axis >= a.rank()) {
        throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(a.shape()));
    }
    for (int d = 0; d < a.rank(); ++d) {
        if (d != axis && a.dim(d) != b.dim(d)) {
            throw std::invalid_argument("concat: incompatible shapes " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()) + " on axis " +
                                        std::to_string(d));
        }
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = a.dim(axis) + b.dim(axis);

    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    int64_t inner = 1;
    for (int d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    const int64_t a_block = a.dim(axis) * inner;
    const int64_t b_block = b.dim(axis) * inner;

    Tensor<T> out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (a_block + b_block), a.data() + o * a_block,
                    static_cast<size_t>(a_block) * sizeof(T));
        std::memcpy(out.data() + o * (a_block + b_block) + a_block, b.data() + o * b_block,
                    static_cast<size_t>(b_block) * sizeof(T));
    }
    return out;
}

template <typename T>
Tensor<T> concat_all(int axis, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_all: no tensors");
    Tensor<T> out = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) out = concat(axis, out, parts[i]);
    return out;
}

/// Copies `len` entries starting at `start` along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& t, int axis, int64_t start, int64_t len) {
    if (axis < 0 || axis >= t.rank()) {
        throw std::invalid_argument("slice: axis " + std::to_string(axis) + " out of range");
    }
    if (start < 0 || len < 0 || start + len > t.dim(axis)) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds axis length " +
                                    std::to_string(t.dim(axis)));
    }
    Shape out_shape = t.shape();
    out_shape[static_cast<size_t>(axis)] = len;

    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= t.dim(d);
    int64_t inner = 1;
    for (int d = axis + 1; d < t.rank(); ++d) inner *= t.dim(d);
    const int64_t in_block = t.dim(axis) * inner;
    const int64_t out_block = len * inner;

    Tensor<T> out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * out_block, t.data() + o * in_block + start * inner,
                    static_cast<size_t>(out_block) * sizeof(T));
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& t) {
    if (t.rank() != 2) throw std::invalid_argument("transpose2d: need rank 2, got " + shape_str(t.shape()));
    const int64_t m = t.dim(0), n = t.dim(1);
    Tensor<T> out({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out(j, i) = t(i, j);
    return out;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

/// Max over entries of |a-b| / max(|a|,|b|,floor).
template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
    check_same_shape(a, b, "max_rel_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        m = std::max(m, std::abs(x - y) / denom);
    }
    return m;
}

}  // namespace omnixfer
