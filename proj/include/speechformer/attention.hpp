#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "speechformer/errors.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

/// Divisor applied to q.k scores: d_h itself, or the conventional sqrt(d_h).
enum class ScaleMode { dh, sqrt_dh };

inline double score_divisor(ScaleMode mode, std::size_t head_dim) {
    const auto d = static_cast<double>(head_dim);
    return mode == ScaleMode::dh ? d : std::sqrt(d);
}

inline const char* to_string(ScaleMode mode) {
    return mode == ScaleMode::dh ? "dh" : "sqrt_dh";
}

/// Q/K/V projections (d_model x d_model each, no bias) and the head split.
struct AttentionParams {
    Matrix wq;
    Matrix wk;
    Matrix wv;
    std::size_t num_heads = 1;

    std::size_t model_dim() const { return wq.rows(); }
    std::size_t head_dim() const { return model_dim() / num_heads; }

    void validate(std::size_t input_cols) const {
        const std::size_t d = model_dim();
        if (num_heads == 0) throw ConfigError("attention: num_heads must be >= 1");
        if (d % num_heads != 0) {
            throw ConfigError("attention: d_model " + std::to_string(d) +
                              " is not divisible by num_heads " + std::to_string(num_heads));
        }
        for (const Matrix* w : {&wq, &wk, &wv}) {
            if (w->rows() != d || w->cols() != d) {
                throw ShapeError("attention: projection " + w->shape() + " expected " +
                                 Matrix::shape_string(d, d));
            }
        }
        if (input_cols != d) {
            throw ShapeError("attention: input width " + std::to_string(input_cols) +
                             " does not match d_model " + std::to_string(d));
        }
    }
};

/// Token t attends to [t - half, t + half] clamped to the sequence.
struct WindowSpec {
    std::size_t tw = 1;

    std::size_t half() const { return tw / 2; }
    std::size_t lo(std::size_t t) const { return t > half() ? t - half() : 0; }
    std::size_t hi(std::size_t t, std::size_t seq_len) const {
        return std::min(seq_len - 1, t + half());
    }
};

/// Single-head attention: softmax(q k^T / s) v.
inline Matrix ssa(const Matrix& q, const Matrix& k, const Matrix& v,
                  ScaleMode mode = ScaleMode::sqrt_dh) {
    if (q.cols() != k.cols() || k.cols() != v.cols() || k.rows() != v.rows()) {
        throw ShapeError("ssa shape mismatch: q " + q.shape() + " k " + k.shape() + " v " +
                         v.shape());
    }
    const Matrix scores = scale(matmul_transposed(q, k), 1.0 / score_divisor(mode, q.cols()));
    return matmul(softmax_rows(scores), v);
}

struct Projections {
    Matrix q;
    Matrix k;
    Matrix v;
};

inline Projections project_qkv(const Matrix& x, const AttentionParams& p) {
    p.validate(x.cols());
    return {matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv)};
}

/// Full multi-head self-attention. Heads are contiguous column blocks; their
/// outputs are concatenated with no output projection.
inline Matrix msa(const Matrix& x, const AttentionParams& p, ScaleMode mode = ScaleMode::sqrt_dh) {
    const Projections qkv = project_qkv(x, p);
    const std::size_t dh = p.head_dim();
    Matrix out(x.rows(), p.model_dim());
    for (std::size_t h = 0; h < p.num_heads; ++h) {
        const std::size_t c0 = h * dh;
        set_cols(out, c0,
                 ssa(slice_cols(qkv.q, c0, dh), slice_cols(qkv.k, c0, dh),
                     slice_cols(qkv.v, c0, dh), mode));
    }
    return out;
}

/// Windowed multi-head attention. Scores, softmax and the weighted sum are
/// computed only over each token's clamped span, summed left to right.
inline Matrix speech_msa(const Matrix& x, const AttentionParams& p, WindowSpec window,
                         ScaleMode mode = ScaleMode::sqrt_dh) {
    if (window.tw == 0) throw InvalidArgument("speech_msa: window must be >= 1 token");
    const Projections qkv = project_qkv(x, p);
    const std::size_t T = x.rows();
    const std::size_t dh = p.head_dim();
    const double inv_scale = 1.0 / score_divisor(mode, dh);
    Matrix out(T, p.model_dim());
    Vector weights;
    for (std::size_t h = 0; h < p.num_heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t lo = window.lo(t);
            const std::size_t hi = window.hi(t, T);
            weights.assign(hi - lo + 1, 0.0);
            double mx = -INFINITY;
            for (std::size_t j = lo; j <= hi; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qkv.q(t, c0 + c) * qkv.k(j, c0 + c);
                s *= inv_scale;
                weights[j - lo] = s;
                mx = std::max(mx, s);
            }
            double sum = 0.0;
            for (double& w : weights) {
                w = std::exp(w - mx);
                sum += w;
            }
            for (double& w : weights) w /= sum;
            for (std::size_t j = lo; j <= hi; ++j) {
                const double w = weights[j - lo];
                for (std::size_t c = 0; c < dh; ++c) out(t, c0 + c) += w * qkv.v(j, c0 + c);
            }
        }
    }
    return out;
}

} // namespace speechformer
