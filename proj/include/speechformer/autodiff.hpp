#pragma once

// Analytic backward passes. Each differentiable piece has a `*_record`
// forward that stores the intermediates its backward needs in a tape, and a
// `*_backward` that consumes the tape and an upstream gradient. Recorded
// forwards perform the same floating-point operations, in the same order,
// as the plain forwards in attention.hpp and model.hpp.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "speechformer/attention.hpp"
#include "speechformer/errors.hpp"
#include "speechformer/model.hpp"
#include "speechformer/rng.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

namespace detail {

inline void require_recorded(bool recorded, const char* what) {
    if (!recorded) {
        throw UsageError(std::string(what) + ": backward called without a recorded forward");
    }
}

inline void require_same_shape(const Matrix& a, std::size_t rows, std::size_t cols,
                               const char* what) {
    if (a.rows() != rows || a.cols() != cols) {
        throw ShapeError(std::string(what) + ": upstream gradient " + a.shape() + " expected " +
                         Matrix::shape_string(rows, cols));
    }
}

inline Vector column_sums(const Matrix& m) {
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
    }
    return out;
}

inline void accumulate(Matrix& dst, const Matrix& src) {
    auto d = dst.values();
    const auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// primitives

struct MatmulGrads {
    Matrix da;
    Matrix db;
};

inline MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dy) {
    detail::require_same_shape(dy, a.rows(), b.cols(), "matmul_backward");
    return {matmul_transposed(dy, b), matmul(a.transpose(), dy)};
}

struct LinearGrads {
    Matrix dx;
    Matrix dw;
    Vector dbias;
};

inline LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy) {
    detail::require_same_shape(dy, x.rows(), w.cols(), "linear_backward");
    auto [dx, dw] = matmul_backward(x, w, dy);
    return {std::move(dx), std::move(dw), detail::column_sums(dy)};
}

/// Gradient through y = softmax_rows(x), given y.
inline Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
    detail::require_same_shape(dy, y.rows(), y.cols(), "softmax_rows_backward");
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * dy(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dy(r, c) - dot);
    }
    return dx;
}

inline Matrix relu_backward(const Matrix& pre_activation, const Matrix& dy) {
    detail::require_same_shape(dy, pre_activation.rows(), pre_activation.cols(), "relu_backward");
    Matrix dx = dy;
    const auto pre = pre_activation.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!(pre[i] > 0.0)) d[i] = 0.0;
    return dx;
}

/// Each input row receives its group's gradient divided by the group size.
inline Matrix avg_pool_groups_backward(const Matrix& dy, std::size_t input_rows, std::size_t m) {
    if (m == 0) throw InvalidArgument("avg_pool_groups_backward: merge scale must be >= 1");
    detail::require_same_shape(dy, ceil_div(input_rows, m), dy.cols(), "avg_pool_groups_backward");
    Matrix dx(input_rows, dy.cols());
    for (std::size_t g = 0; g < dy.rows(); ++g) {
        const std::size_t begin = g * m;
        const std::size_t end = std::min(begin + m, input_rows);
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (std::size_t r = begin; r < end; ++r)
            for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, c) = dy(g, c) * inv;
    }
    return dx;
}

inline Matrix mean_rows_backward(const Matrix& dy, std::size_t input_rows) {
    return avg_pool_groups_backward(dy, input_rows, input_rows);
}

struct LayerNormTape {
    Matrix normalized; // (x - mean) * inv_std, before gain/bias
    Vector inv_std;
    Vector gain;
    bool recorded = false;
};

inline Matrix layer_norm_record(const Matrix& x, std::span<const double> gamma,
                                std::span<const double> beta, LayerNormTape& tape,
                                double eps = kLayerNormEps) {
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw ShapeError("layer_norm: gamma/beta length does not match input " + x.shape());
    }
    if (!(eps > 0.0)) throw InvalidArgument("layer_norm: eps must be positive");
    tape.normalized = Matrix(x.rows(), x.cols());
    tape.inv_std.assign(x.rows(), 0.0);
    tape.gain.assign(gamma.begin(), gamma.end());
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
        tape.inv_std[r] = inv_std;
        for (std::size_t c = 0; c < in.size(); ++c) {
            tape.normalized(r, c) = (in[c] - mean) * inv_std;
            out(r, c) = (in[c] - mean) * inv_std * gamma[c] + beta[c];
        }
    }
    tape.recorded = true;
    return out;
}

struct LayerNormGrads {
    Matrix dx;
    Vector dgain;
    Vector dbias;
};

inline LayerNormGrads layer_norm_backward(const LayerNormTape& tape, const Matrix& dy) {
    detail::require_recorded(tape.recorded, "layer_norm");
    const Matrix& xhat = tape.normalized;
    detail::require_same_shape(dy, xhat.rows(), xhat.cols(), "layer_norm_backward");
    const std::size_t d = xhat.cols();
    LayerNormGrads g{Matrix(xhat.rows(), d), Vector(d, 0.0), Vector(d, 0.0)};
    Vector dxhat(d);
    for (std::size_t r = 0; r < xhat.rows(); ++r) {
        double mean_g = 0.0;
        double mean_gx = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            g.dgain[c] += dy(r, c) * xhat(r, c);
            g.dbias[c] += dy(r, c);
            dxhat[c] = dy(r, c) * tape.gain[c];
            mean_g += dxhat[c];
            mean_gx += dxhat[c] * xhat(r, c);
        }
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
            g.dx(r, c) = tape.inv_std[r] * (dxhat[c] - mean_g - xhat(r, c) * mean_gx);
        }
    }
    return g;
}

struct SoftmaxCrossEntropy {
    double loss = 0.0;
    Vector dlogits; // probabilities minus one-hot target
};

inline SoftmaxCrossEntropy softmax_cross_entropy(std::span<const double> logits,
                                                 std::size_t target) {
    if (target >= logits.size()) {
        throw InvalidArgument("softmax_cross_entropy: target " + std::to_string(target) +
                              " out of range for " + std::to_string(logits.size()) + " classes");
    }
    const Matrix row(1, logits.size(), Vector(logits.begin(), logits.end()));
    const Matrix probs = softmax_rows(row);
    SoftmaxCrossEntropy out;
    out.loss = -std::log(probs(0, target));
    out.dlogits.assign(probs.values().begin(), probs.values().end());
    out.dlogits[target] -= 1.0;
    return out;
}

// ---------------------------------------------------------------------------
// attention

struct SsaTape {
    Matrix q;
    Matrix k;
    Matrix v;
    Matrix probs;
    double inv_scale = 1.0;
    bool recorded = false;
};

inline Matrix ssa_record(const Matrix& q, const Matrix& k, const Matrix& v, ScaleMode mode,
                         SsaTape& tape) {
    if (q.cols() != k.cols() || k.cols() != v.cols() || k.rows() != v.rows()) {
        throw ShapeError("ssa shape mismatch: q " + q.shape() + " k " + k.shape() + " v " +
                         v.shape());
    }
    tape.inv_scale = 1.0 / score_divisor(mode, q.cols());
    tape.probs = softmax_rows(scale(matmul_transposed(q, k), tape.inv_scale));
    tape.q = q;
    tape.k = k;
    tape.v = v;
    tape.recorded = true;
    return matmul(tape.probs, v);
}

struct SsaGrads {
    Matrix dq;
    Matrix dk;
    Matrix dv;
};

inline SsaGrads ssa_backward(const SsaTape& tape, const Matrix& dy) {
    detail::require_recorded(tape.recorded, "ssa");
    detail::require_same_shape(dy, tape.q.rows(), tape.v.cols(), "ssa_backward");
    const Matrix dv = matmul(tape.probs.transpose(), dy);
    const Matrix dscores =
        scale(softmax_rows_backward(tape.probs, matmul_transposed(dy, tape.v)), tape.inv_scale);
    return {matmul(dscores, tape.k), matmul(dscores.transpose(), tape.q), dv};
}

/// Tape for msa (no window) or speech_msa (window set).
struct AttentionTape {
    Matrix x;
    Projections qkv;
    std::optional<WindowSpec> window;
    std::size_t num_heads = 1;
    double inv_scale = 1.0;
    std::vector<SsaTape> heads;   // full attention
    std::vector<Vector> weights;  // windowed: index head * T + t, span-sized
    bool recorded = false;
};

inline Matrix attention_record(const Matrix& x, const AttentionParams& p,
                               std::optional<WindowSpec> window, ScaleMode mode,
                               AttentionTape& tape) {
    if (window && window->tw == 0) throw InvalidArgument("speech_msa: window must be >= 1 token");
    tape = AttentionTape{};
    tape.qkv = project_qkv(x, p);
    tape.x = x;
    tape.window = window;
    tape.num_heads = p.num_heads;
    const std::size_t T = x.rows();
    const std::size_t dh = p.head_dim();
    tape.inv_scale = 1.0 / score_divisor(mode, dh);
    Matrix out(T, p.model_dim());
    if (!window) {
        tape.heads.resize(p.num_heads);
        for (std::size_t h = 0; h < p.num_heads; ++h) {
            const std::size_t c0 = h * dh;
            set_cols(out, c0,
                     ssa_record(slice_cols(tape.qkv.q, c0, dh), slice_cols(tape.qkv.k, c0, dh),
                                slice_cols(tape.qkv.v, c0, dh), mode, tape.heads[h]));
        }
        tape.recorded = true;
        return out;
    }
    const Projections& qkv = tape.qkv;
    tape.weights.resize(p.num_heads * T);
    for (std::size_t h = 0; h < p.num_heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t lo = window->lo(t);
            const std::size_t hi = window->hi(t, T);
            Vector& weights = tape.weights[h * T + t];
            weights.assign(hi - lo + 1, 0.0);
            double mx = -INFINITY;
            for (std::size_t j = lo; j <= hi; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qkv.q(t, c0 + c) * qkv.k(j, c0 + c);
                s *= tape.inv_scale;
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
    tape.recorded = true;
    return out;
}

struct AttentionGrads {
    Matrix dx;
    Matrix dwq;
    Matrix dwk;
    Matrix dwv;
};

inline AttentionGrads attention_backward(const AttentionTape& tape, const AttentionParams& p,
                                         const Matrix& dy) {
    detail::require_recorded(tape.recorded, "attention");
    const std::size_t T = tape.x.rows();
    const std::size_t d = p.model_dim();
    const std::size_t dh = p.head_dim();
    detail::require_same_shape(dy, T, d, "attention_backward");

    Matrix dq(T, d);
    Matrix dk(T, d);
    Matrix dv(T, d);
    if (!tape.window) {
        for (std::size_t h = 0; h < p.num_heads; ++h) {
            const std::size_t c0 = h * dh;
            const SsaGrads g = ssa_backward(tape.heads[h], slice_cols(dy, c0, dh));
            set_cols(dq, c0, g.dq);
            set_cols(dk, c0, g.dk);
            set_cols(dv, c0, g.dv);
        }
    } else {
        const Projections& qkv = tape.qkv;
        Vector dp;
        for (std::size_t h = 0; h < p.num_heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t lo = tape.window->lo(t);
                const std::size_t hi = tape.window->hi(t, T);
                const Vector& w = tape.weights[h * T + t];
                dp.assign(w.size(), 0.0);
                double dot = 0.0;
                for (std::size_t j = lo; j <= hi; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        acc += dy(t, c0 + c) * qkv.v(j, c0 + c);
                        dv(j, c0 + c) += w[j - lo] * dy(t, c0 + c);
                    }
                    dp[j - lo] = acc;
                    dot += w[j - lo] * acc;
                }
                for (std::size_t j = lo; j <= hi; ++j) {
                    const double ds = w[j - lo] * (dp[j - lo] - dot) * tape.inv_scale;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dq(t, c0 + c) += ds * qkv.k(j, c0 + c);
                        dk(j, c0 + c) += ds * qkv.q(t, c0 + c);
                    }
                }
            }
        }
    }
    const Matrix xt = tape.x.transpose();
    AttentionGrads g;
    g.dwq = matmul(xt, dq);
    g.dwk = matmul(xt, dk);
    g.dwv = matmul(xt, dv);
    g.dx = matmul_transposed(dq, p.wq);
    detail::accumulate(g.dx, matmul_transposed(dk, p.wk));
    detail::accumulate(g.dx, matmul_transposed(dv, p.wv));
    return g;
}

// ---------------------------------------------------------------------------
// model pieces

struct BlockTape {
    LayerNormTape norm1;
    AttentionTape attn;
    LayerNormTape norm2;
    Matrix normed2;
    Matrix pre_activation;
    Matrix activation;
    bool recorded = false;
};

inline Matrix block_record(const Matrix& x, const BlockWeights& w, std::optional<WindowSpec> window,
                           ScaleMode mode, BlockTape& tape) {
    if (x.cols() != w.attn.model_dim()) {
        throw ShapeError("block input " + x.shape() + " does not match block width " +
                         std::to_string(w.attn.model_dim()));
    }
    const Matrix n1 = layer_norm_record(x, w.norm1_gain, w.norm1_bias, tape.norm1);
    const Matrix h = add(x, attention_record(n1, w.attn, window, mode, tape.attn));
    tape.normed2 = layer_norm_record(h, w.norm2_gain, w.norm2_bias, tape.norm2);
    tape.pre_activation = linear(tape.normed2, w.ffn_in, w.ffn_in_bias);
    tape.activation = relu(tape.pre_activation);
    tape.recorded = true;
    return add(h, linear(tape.activation, w.ffn_out, w.ffn_out_bias));
}

struct BlockGrads {
    Matrix dx;
    BlockWeights dw;
};

inline BlockGrads block_backward(const BlockTape& tape, const BlockWeights& w, const Matrix& dy) {
    detail::require_recorded(tape.recorded, "block");
    BlockGrads g;
    // y = h + ffn(norm2(h))
    const LinearGrads out = linear_backward(tape.activation, w.ffn_out, dy);
    const LinearGrads in =
        linear_backward(tape.normed2, w.ffn_in, relu_backward(tape.pre_activation, out.dx));
    LayerNormGrads n2 = layer_norm_backward(tape.norm2, in.dx);
    Matrix dh = add(dy, n2.dx);
    // h = x + attn(norm1(x))
    AttentionGrads a = attention_backward(tape.attn, w.attn, dh);
    LayerNormGrads n1 = layer_norm_backward(tape.norm1, a.dx);
    g.dx = add(dh, n1.dx);

    g.dw.attn = {std::move(a.dwq), std::move(a.dwk), std::move(a.dwv), w.attn.num_heads};
    g.dw.norm1_gain = std::move(n1.dgain);
    g.dw.norm1_bias = std::move(n1.dbias);
    g.dw.ffn_in = in.dw;
    g.dw.ffn_in_bias = in.dbias;
    g.dw.ffn_out = out.dw;
    g.dw.ffn_out_bias = out.dbias;
    g.dw.norm2_gain = std::move(n2.dgain);
    g.dw.norm2_bias = std::move(n2.dbias);
    return g;
}

struct MergeTape {
    Matrix pooled;
    std::size_t input_rows = 0;
    std::size_t scale = 1;
    bool recorded = false;
};

inline Matrix merge_record(const Matrix& x, std::size_t m, const MergeWeights& w, MergeTape& tape) {
    if (w.weight.rows() != x.cols()) {
        throw ShapeError("merging block weight " + w.weight.shape() + " does not match input " +
                         x.shape());
    }
    tape.pooled = avg_pool_groups(x, m);
    tape.input_rows = x.rows();
    tape.scale = m;
    tape.recorded = true;
    return linear(tape.pooled, w.weight, w.bias);
}

struct MergeGrads {
    Matrix dx;
    MergeWeights dw;
};

inline MergeGrads merge_backward(const MergeTape& tape, const MergeWeights& w, const Matrix& dy) {
    detail::require_recorded(tape.recorded, "merging block");
    LinearGrads lin = linear_backward(tape.pooled, w.weight, dy);
    return {avg_pool_groups_backward(lin.dx, tape.input_rows, tape.scale),
            {std::move(lin.dw), std::move(lin.dbias)}};
}

struct HeadTape {
    Matrix pooled;
    std::size_t input_rows = 0;
    bool recorded = false;
};

inline Matrix head_record(const Matrix& x, const HeadWeights& head, HeadTape& tape) {
    tape.pooled = mean_rows(x);
    tape.input_rows = x.rows();
    tape.recorded = true;
    return linear(tape.pooled, head.weight, head.bias);
}

struct HeadGrads {
    Matrix dx;
    HeadWeights dw;
};

inline HeadGrads head_backward(const HeadTape& tape, const HeadWeights& head,
                               std::span<const double> dlogits) {
    detail::require_recorded(tape.recorded, "head");
    const Matrix dy(1, dlogits.size(), Vector(dlogits.begin(), dlogits.end()));
    LinearGrads lin = linear_backward(tape.pooled, head.weight, dy);
    return {mean_rows_backward(lin.dx, tape.input_rows), {std::move(lin.dw), std::move(lin.dbias)}};
}

struct ModelTape {
    std::vector<std::vector<BlockTape>> blocks;
    std::vector<MergeTape> merges;
    HeadTape head;
    std::size_t input_rows = 0;
    bool recorded = false;
};

/// Same computation as forward(); returns the logits.
inline Vector model_record(const Matrix& features, const ModelWeights& weights,
                           const ModelConfig& config, const StageSchedule& schedule,
                           ModelTape& tape) {
    config.validate();
    if (features.cols() != config.d_model) {
        throw ShapeError("features " + features.shape() + " do not match d_model " +
                         std::to_string(config.d_model));
    }
    if (features.rows() == 0) throw InvalidArgument("forward: input has no frames");
    tape = ModelTape{};
    tape.input_rows = features.rows();
    Matrix x = add(features, sinusoidal_positions(features.rows(), features.cols()));
    tape.blocks.resize(config.num_stages());
    tape.merges.resize(weights.merges.size());
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
        const auto window = stage_window(config, schedule, s, x.rows());
        tape.blocks[s].resize(weights.stages[s].size());
        for (std::size_t b = 0; b < weights.stages[s].size(); ++b) {
            x = block_record(x, weights.stages[s][b], window, config.scale_mode, tape.blocks[s][b]);
        }
        if (s < weights.merges.size()) {
            x = merge_record(x, schedule.merge_scales[s], weights.merges[s], tape.merges[s]);
        }
    }
    const Matrix logits = head_record(x, weights.head, tape.head);
    tape.recorded = true;
    return {logits.values().begin(), logits.values().end()};
}

struct ModelGrads {
    Matrix dfeatures;
    ModelWeights dw;
};

inline ModelGrads model_backward(const ModelTape& tape, const ModelWeights& weights,
                                 std::span<const double> dlogits) {
    detail::require_recorded(tape.recorded, "model");
    ModelGrads g;
    g.dw.stages.resize(weights.stages.size());
    g.dw.merges.resize(weights.merges.size());
    HeadGrads head = head_backward(tape.head, weights.head, dlogits);
    g.dw.head = std::move(head.dw);
    Matrix dx = std::move(head.dx);
    for (std::size_t s = weights.stages.size(); s-- > 0;) {
        if (s < weights.merges.size()) {
            MergeGrads m = merge_backward(tape.merges[s], weights.merges[s], dx);
            g.dw.merges[s] = std::move(m.dw);
            dx = std::move(m.dx);
        }
        g.dw.stages[s].resize(weights.stages[s].size());
        for (std::size_t b = weights.stages[s].size(); b-- > 0;) {
            BlockGrads bg = block_backward(tape.blocks[s][b], weights.stages[s][b], dx);
            g.dw.stages[s][b] = std::move(bg.dw);
            dx = std::move(bg.dx);
        }
    }
    // the positional encoding is an additive constant
    g.dfeatures = std::move(dx);
    return g;
}

// ---------------------------------------------------------------------------
// finite differences

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// A parameter tensor the loss reads through a reference, paired with its
/// analytic gradient.
struct ParamGroup {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GroupCheck {
    std::string name;
    double max_rel_err = 0.0;
    double eps = 0.0;
    std::size_t checked = 0;
    /// Coordinates over the relative threshold whose absolute discrepancy is
    /// inside the numeric derivative's roundoff resolution.
    std::size_t roundoff_limited = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;
    double threshold = 0.0;

    bool passed() const {
        return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.pass; });
    }

    double max_rel_err() const {
        double worst = 0.0;
        for (const auto& g : groups) worst = std::max(worst, g.max_rel_err);
        return worst;
    }
};

struct FiniteDiffOptions {
    double eps = 1e-5;
    double threshold = 1e-4;
    /// Coordinates sampled per group once the total exceeds exhaustive_limit.
    std::size_t samples_per_group = 50;
    std::size_t exhaustive_limit = 10000;
    std::uint64_t seed = 0x5eed;
    /// 0 disables. Otherwise a coordinate that misses the relative threshold
    /// still passes when |analytic - numeric| <= resolution_margin * DBL_EPSILON
    /// * max(|f+|, |f-|, 1) / (2 eps), i.e. when the difference quotient
    /// cannot resolve the discrepancy.
    double resolution_margin = 0.0;
};

/// Central differences (f(p+eps) - f(p-eps)) / (2 eps) against the analytic
/// gradient. Every coordinate is checked when the total parameter count is
/// at most exhaustive_limit; otherwise each group is sampled with a fixed seed.
inline GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                         std::span<const ParamGroup> groups,
                                         const FiniteDiffOptions& options = {}) {
    if (!(options.eps > 0.0)) throw InvalidArgument("finite_diff_check: eps must be positive");
    std::size_t total = 0;
    for (const auto& g : groups) {
        if (g.values.size() != g.analytic.size()) {
            throw ShapeError("finite_diff_check: group " + g.name + " has " +
                             std::to_string(g.values.size()) + " values but " +
                             std::to_string(g.analytic.size()) + " gradients");
        }
        total += g.values.size();
    }
    const bool exhaustive = total <= options.exhaustive_limit;
    const auto eval = [&] {
        const double f = loss();
        if (!std::isfinite(f)) throw NumericError("finite_diff_check: loss is not finite");
        return f;
    };

    Rng rng(options.seed);
    GradCheckReport report;
    report.threshold = options.threshold;
    std::vector<std::size_t> coords;
    for (const auto& g : groups) {
        coords.resize(g.values.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (!exhaustive && coords.size() > options.samples_per_group) {
            // partial Fisher-Yates: the first samples_per_group entries are a uniform sample
            for (std::size_t i = 0; i < options.samples_per_group; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(options.samples_per_group);
        }
        GroupCheck check{g.name, 0.0, options.eps, coords.size(), 0, true};
        for (std::size_t i : coords) {
            const double saved = g.values[i];
            g.values[i] = saved + options.eps;
            const double up = eval();
            g.values[i] = saved - options.eps;
            const double down = eval();
            g.values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.eps);
            const double err = relative_error(g.analytic[i], numeric);
            check.max_rel_err = std::max(check.max_rel_err, err);
            if (err <= options.threshold) continue;
            const double resolution = options.resolution_margin *
                                      std::numeric_limits<double>::epsilon() *
                                      std::max({std::abs(up), std::abs(down), 1.0}) /
                                      (2.0 * options.eps);
            if (std::abs(g.analytic[i] - numeric) <= resolution) {
                ++check.roundoff_limited;
            } else {
                check.pass = false;
            }
        }
        report.groups.push_back(std::move(check));
    }
    return report;
}

/// `group<TAB>max_rel_err<TAB>pass` lines, with a fourth column when some
/// coordinates passed only through the roundoff allowance.
inline void write_report_tsv(std::ostream& os, const GradCheckReport& report,
                             const std::string& prefix = {}) {
    for (const auto& g : report.groups) {
        char err[32];
        std::snprintf(err, sizeof err, "%.3e", g.max_rel_err);
        os << prefix << g.name << '\t' << err << '\t' << (g.pass ? "pass" : "fail");
        if (g.roundoff_limited > 0) os << "\troundoff_limited=" << g.roundoff_limited;
        os << '\n';
    }
}

/// Named views of a block's tensors, in checkpoint order.
template <typename Block>
auto block_tensors(Block& b) {
    using Span = decltype(b.attn.wq.values());
    std::vector<std::pair<std::string, Span>> out;
    detail::visit_block(std::string{}, b,
                        [&](const std::string& name, TensorKind, Span values, std::size_t,
                            std::size_t) { out.emplace_back(name, values); });
    return out;
}

/// Named views of every model tensor, in checkpoint order.
template <typename Weights>
auto model_tensors(const ModelConfig& config, Weights& w) {
    using Span = decltype(w.head.weight.values());
    std::vector<std::pair<std::string, Span>> out;
    for_each_tensor(config, w,
                    [&](const std::string& name, TensorKind, Span values, std::size_t,
                        std::size_t) { out.emplace_back(name, values); });
    return out;
}

} // namespace speechformer
