#pragma once

// Reference implementation of windowed attention through the full-attention
// route: every score is computed, scores outside the band are set to -inf,
// then a masked softmax and a dense weighted sum follow. Used to cross-check
// speech_msa, never on the inference path.

#include <cmath>
#include <cstddef>
#include <cstdlib>

#include "speechformer/attention.hpp"

namespace speechformer {

inline Matrix band_mask_oracle(const Matrix& x, const AttentionParams& p, WindowSpec window,
                               ScaleMode mode = ScaleMode::sqrt_dh) {
    if (window.tw == 0) throw InvalidArgument("band_mask_oracle: window must be >= 1 token");
    const Projections qkv = project_qkv(x, p);
    const std::size_t T = x.rows();
    const std::size_t dh = p.head_dim();
    const auto half = static_cast<long long>(window.half());
    Matrix out(T, p.model_dim());
    for (std::size_t h = 0; h < p.num_heads; ++h) {
        const std::size_t c0 = h * dh;
        const Matrix q = slice_cols(qkv.q, c0, dh);
        const Matrix k = slice_cols(qkv.k, c0, dh);
        const Matrix v = slice_cols(qkv.v, c0, dh);
        Matrix scores = scale(matmul_transposed(q, k), 1.0 / score_divisor(mode, dh));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < T; ++j) {
                const long long dist = static_cast<long long>(t) - static_cast<long long>(j);
                if (std::llabs(dist) > half) scores(t, j) = -INFINITY;
            }
        }
        // masked softmax: exp(-inf) contributes exactly zero
        Matrix probs(T, T);
        for (std::size_t t = 0; t < T; ++t) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < T; ++j) mx = std::max(mx, scores(t, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
                probs(t, j) = std::exp(scores(t, j) - mx);
                sum += probs(t, j);
            }
            for (std::size_t j = 0; j < T; ++j) probs(t, j) /= sum;
        }
        set_cols(out, c0, matmul(probs, v));
    }
    return out;
}

} // namespace speechformer
