#pragma once

// Minimal dense kernel: row-major double matrices and the handful of
// operations the encoder needs. Everything is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "speechformer/errors.hpp"

namespace speechformer {

using Vector = std::vector<double>;

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                             " does not match " + shape_string(rows_, cols_));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged initializer for Matrix");
            data.insert(data.end(), row.begin(), row.end());
        }
        return {r, c, std::move(data)};
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    std::string shape() const { return shape_string(rows_, cols_); }

    bool operator==(const Matrix&) const = default;

    static std::string shape_string(std::size_t r, std::size_t c) {
        return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape() + " x " + b.shape());
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

/// a * b^T without materializing the transpose.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed shape mismatch: " + a.shape() + " x " +
                         b.shape() + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
            out(i, j) = acc;
        }
    }
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add shape mismatch: " + a.shape() + " + " + b.shape());
    }
    Matrix out = a;
    auto dst = out.values();
    const auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

/// Numerically stable softmax: each row has its maximum subtracted first.
inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto in = m.row(r);
        auto dst = out.row(r);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - mx);
            sum += dst[c];
        }
        for (double& v : dst) v /= sum;
    }
    return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization with population variance, eps inside the root.
inline Matrix layer_norm(const Matrix& x, std::span<const double> gamma,
                         std::span<const double> beta, double eps = kLayerNormEps) {
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw ShapeError("layer_norm: gamma/beta length " + std::to_string(gamma.size()) +
                         "/" + std::to_string(beta.size()) + " vs input " + x.shape());
    }
    if (!(eps > 0.0)) throw InvalidArgument("layer_norm: eps must be positive");
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = (in[c] - mean) * inv_std * gamma[c] + beta[c];
        }
    }
    return out;
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Averages consecutive groups of m rows. The trailing partial group is
/// averaged over its actual members; output has ceil(T/m) rows.
inline Matrix avg_pool_groups(const Matrix& x, std::size_t m) {
    if (m == 0) throw InvalidArgument("avg_pool_groups: merge scale must be >= 1");
    const std::size_t groups = ceil_div(x.rows(), m);
    Matrix out(groups, x.cols());
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t begin = g * m;
        const std::size_t end = std::min(begin + m, x.rows());
        auto dst = out.row(g);
        for (std::size_t r = begin; r < end; ++r) {
            const auto src = x.row(r);
            for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
        }
        const double count = static_cast<double>(end - begin);
        for (double& v : dst) v /= count;
    }
    return out;
}

/// Mean over all rows, as a 1 x cols matrix.
inline Matrix mean_rows(const Matrix& x) {
    if (x.rows() == 0) throw InvalidArgument("mean_rows: empty input");
    return avg_pool_groups(x, x.rows());
}

/// x * w + bias (bias broadcast over rows).
inline Matrix linear(const Matrix& x, const Matrix& w, std::span<const double> bias) {
    if (x.cols() != w.rows()) {
        throw ShapeError("linear shape mismatch: input " + x.shape() + " weight " + w.shape());
    }
    if (bias.size() != w.cols()) {
        throw ShapeError("linear bias length " + std::to_string(bias.size()) +
                         " does not match weight " + w.shape());
    }
    Matrix out = matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto dst = out.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += bias[c];
    }
    return out;
}

inline Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

/// entry(p, 2i) = sin(p / 10000^(2i/d)), entry(p, 2i+1) = cos(same).
inline Matrix sinusoidal_positions(std::size_t t, std::size_t d) {
    if (d % 2 != 0) {
        throw InvalidArgument("sinusoidal_positions: dimension must be even, got " +
                              std::to_string(d));
    }
    Matrix out(t, d);
    for (std::size_t i = 0; i < d / 2; ++i) {
        const double freq =
            std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
        for (std::size_t p = 0; p < t; ++p) {
            const double angle = static_cast<double>(p) / freq;
            out(p, 2 * i) = std::sin(angle);
            out(p, 2 * i + 1) = std::cos(angle);
        }
    }
    return out;
}

/// Column block [begin, begin + width).
inline Matrix slice_cols(const Matrix& x, std::size_t begin, std::size_t width) {
    if (begin + width > x.cols()) {
        throw ShapeError("slice_cols out of range for " + x.shape());
    }
    Matrix out(x.rows(), width);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto src = x.row(r);
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(begin), width, out.row(r).begin());
    }
    return out;
}

/// Writes `block` into the columns of `dst` starting at `begin`.
inline void set_cols(Matrix& dst, std::size_t begin, const Matrix& block) {
    if (block.rows() != dst.rows() || begin + block.cols() > dst.cols()) {
        throw ShapeError("set_cols: block " + block.shape() + " does not fit " + dst.shape());
    }
    for (std::size_t r = 0; r < dst.rows(); ++r) {
        const auto src = block.row(r);
        std::copy(src.begin(), src.end(), dst.row(r).begin() + static_cast<std::ptrdiff_t>(begin));
    }
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("max_abs_diff shape mismatch: " + a.shape() + " vs " + b.shape());
    }
    double worst = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
    return worst;
}

inline bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

} // namespace speechformer
