#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace appemb {

/// Dense row-major tensor. The network only ever needs rank 1/2, so the
/// shape is kept as (rows, cols); rank-1 data lives as a 1xN row.
template <typename T>
struct Tensor {
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, T fill = T{0}) : rows_(r), cols_(c), data(r * c, fill) {}

    static Tensor scalar(T v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }

    static Tensor row(std::initializer_list<T> vs) {
        Tensor t(1, vs.size());
        std::size_t i = 0;
        for (T v : vs) t.data[i++] = v;
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    T& at(std::size_t r, std::size_t c) { return data[r * cols_ + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols_ + c]; }

    T* row_ptr(std::size_t r) { return data.data() + r * cols_; }
    const T* row_ptr(std::size_t r) const { return data.data() + r * cols_; }

    T item() const {
        if (numel() != 1) throw std::runtime_error("Tensor::item on non-scalar");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void zero() { fill(T{0}); }

    std::string shape_str() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

/// C (+)= op(A) * op(B); transposition handled by loop order, no copies.
template <typename T>
void matmul_into(Tensor<T>& c, const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb,
                 bool accumulate) {
    const std::size_t m = ta ? a.cols() : a.rows();
    const std::size_t k = ta ? a.rows() : a.cols();
    const std::size_t kb = tb ? b.cols() : b.rows();
    const std::size_t n = tb ? b.rows() : b.cols();
    if (k != kb)
        throw std::runtime_error("matmul: inner dimensions differ " + a.shape_str() + (ta ? "^T" : "") +
                                 " * " + b.shape_str() + (tb ? "^T" : ""));
    if (!accumulate) {
        c.rows_ = m;
        c.cols_ = n;
        c.data.assign(m * n, T{0});
    } else if (c.rows() != m || c.cols() != n) {
        throw std::runtime_error("matmul: accumulate target shape mismatch");
    }

    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            T* cr = c.row_ptr(i);
            const T* ar = a.row_ptr(i);
            for (std::size_t p = 0; p < k; ++p) {
                const T av = ar[p];
                if (av == T{0}) continue;
                const T* br = b.row_ptr(p);
                for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const T* ar = a.row_ptr(i);
            T* cr = c.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) {
                const T* br = b.row_ptr(j);
                T acc{0};
                for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
                cr[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const T* ar = a.row_ptr(p);
            const T* br = b.row_ptr(p);
            for (std::size_t i = 0; i < m; ++i) {
                const T av = ar[i];
                if (av == T{0}) continue;
                T* cr = c.row_ptr(i);
                for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    } else {
        // rare path, only hit through generic adjoints
        for (std::size_t i = 0; i < m; ++i) {
            T* cr = c.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) {
                T acc{0};
                for (std::size_t p = 0; p < k; ++p) acc += a.at(p, i) * b.at(j, p);
                cr[j] += acc;
            }
        }
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    Tensor<T> c;
    matmul_into(c, a, b, ta, tb, /*accumulate=*/false);
    return c;
}

template <typename T>
void axpy(Tensor<T>& y, T alpha, const Tensor<T>& x) {
    if (!y.same_shape(x)) throw std::runtime_error("axpy: shape mismatch");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

template <typename T>
bool has_non_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return true;
    return false;
}

}  // namespace appemb
