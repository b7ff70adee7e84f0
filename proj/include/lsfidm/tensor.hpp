#pragma once

// Dense row-major tensor over float or double. Rank is at most 2 in practice;
// every model quantity here is a matrix, a row vector, or a 1x1 scalar.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsfidm::numerics {

template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Tensor from(std::size_t rows, std::size_t cols, std::vector<T> values) {
        if (values.size() != rows * cols)
            throw std::invalid_argument("tensor data length does not match shape");
        Tensor t;
        t.rows_ = rows;
        t.cols_ = cols;
        t.data_ = std::move(values);
        return t;
    }

    static Tensor scalar(T v) { return from(1, 1, {v}); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row(std::size_t i) { return data_.data() + i * cols_; }
    const T* row(std::size_t i) const { return data_.data() + i * cols_; }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

#if !defined(NDEBUG) || defined(LSFIDM_CHECK_FINITE)
template <typename T>
inline void debug_check_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}
#else
template <typename T>
inline void debug_check_finite(const Tensor<T>&, const char*) {}
#endif

namespace kernels {

// c += a * b. The ikj order keeps the inner loop contiguous in both b and c.
template <typename T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a * b^T. Rows dotted against rows.
template <typename T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.row(j);
            T acc{};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c += a^T * b. Rank-1 updates keep rows contiguous.
template <typename T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a.row(p);
        const T* brow = b.row(p);
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c.row(i);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Tensor<T> c(a.rows(), b.cols());
    kernels::matmul_acc(a, b, c);
    debug_check_finite(c, "matmul");
    return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    Tensor<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

namespace detail {

// Shared shape rule for binary elementwise ops: identical shapes, or the
// right side is a single row broadcast across the left.
template <typename T>
bool row_broadcasts(const Tensor<T>& a, const Tensor<T>& b) {
    return b.rows() == 1 && b.cols() == a.cols();
}

}  // namespace detail

template <typename T, typename F>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* name) {
    Tensor<T> out(a.rows(), a.cols());
    if (a.same_shape(b)) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    } else if (detail::row_broadcasts(a, b)) {
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = f(a(i, j), b(0, j));
    } else {
        throw std::invalid_argument(std::string(name) + ": incompatible shapes");
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, [](T x, T y) { return x - y; }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
    if (axis == 0) {
        if (a.cols() != b.cols()) throw std::invalid_argument("concat axis 0: column mismatch");
        Tensor<T> out(a.rows() + b.rows(), a.cols());
        std::copy(a.data(), a.data() + a.size(), out.data());
        std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
        return out;
    }
    if (axis == 1) {
        if (a.rows() != b.rows()) throw std::invalid_argument("concat axis 1: row mismatch");
        Tensor<T> out(a.rows(), a.cols() + b.cols());
        for (std::size_t i = 0; i < a.rows(); ++i) {
            std::copy(a.row(i), a.row(i) + a.cols(), out.row(i));
            std::copy(b.row(i), b.row(i) + b.cols(), out.row(i) + a.cols());
        }
        return out;
    }
    throw std::invalid_argument("concat: axis must be 0 or 1");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
    return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    Tensor<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    Tensor<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const T* in = x.row(i);
        T* o = out.row(i);
        T mx = in[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, in[j]);
        T sum{};
        for (std::size_t j = 0; j < x.cols(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < x.cols(); ++j) o[j] /= sum;
    }
    return out;
}

}  // namespace lsfidm::numerics
