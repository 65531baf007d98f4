#pragma once

// Encoder assembly: pre-norm residual blocks with full (baseline) or
// windowed (SpeechFormer) attention, merging blocks between the four
// SpeechFormer stages, and a mean-pool + linear classification head.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "speechformer/attention.hpp"
#include "speechformer/errors.hpp"
#include "speechformer/rng.hpp"
#include "speechformer/speech_structure.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

enum class Variant { baseline, speechformer };

inline const char* to_string(Variant v) {
    return v == Variant::baseline ? "baseline" : "speechformer";
}

inline constexpr std::array<const char*, 4> kStageNames = {"frame", "phoneme", "word",
                                                           "utterance"};

struct ModelConfig {
    Variant variant = Variant::speechformer;
    std::size_t d_model = 512;
    std::size_t num_heads = 8;
    /// {N} for the baseline, {N1, N2, N3, N4} for SpeechFormer.
    std::vector<std::size_t> blocks = {2, 2, 4, 4};
    /// Merging-block expand factors {r1, r2, r3}; unused by the baseline.
    std::vector<std::size_t> expand = {1, 1, 1};
    std::size_t num_classes = 4;
    double hop1_ms = kDefaultHop1Ms;
    ScaleMode scale_mode = ScaleMode::sqrt_dh;
    double ffn_ratio = 1.0;

    static ModelConfig baseline(std::size_t d_model, std::size_t num_blocks = 12) {
        ModelConfig c;
        c.variant = Variant::baseline;
        c.d_model = d_model;
        c.blocks = {num_blocks};
        c.expand = {};
        return c;
    }

    static ModelConfig speechformer_s(std::size_t d_model) {
        ModelConfig c;
        c.d_model = d_model;
        return c;
    }

    static ModelConfig speechformer_b(std::size_t d_model) {
        ModelConfig c = speechformer_s(d_model);
        c.expand = {1, 1, 2};
        return c;
    }

    std::size_t num_stages() const { return blocks.size(); }

    /// Token width of each stage: d, d*r1, d*r1*r2, d*r1*r2*r3.
    std::vector<std::size_t> stage_widths() const {
        std::vector<std::size_t> widths{d_model};
        for (std::size_t k = 0; k + 1 < num_stages(); ++k) widths.push_back(widths.back() * expand[k]);
        return widths;
    }

    std::size_t final_width() const { return stage_widths().back(); }

    std::size_t hidden_width(std::size_t width) const {
        const double h = std::round(ffn_ratio * static_cast<double>(width));
        return h < 1.0 ? std::size_t{1} : static_cast<std::size_t>(h);
    }

    /// Cost accounting does not depend on how the width is split into heads,
    /// so the head-divisibility check can be skipped for it.
    void validate(bool check_heads = true) const {
        if (d_model == 0) throw ConfigError("d_model must be >= 1");
        if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
        if (!(ffn_ratio > 0.0)) throw ConfigError("ffn_ratio must be positive");
        if (!(hop1_ms > 0.0)) throw ConfigError("hop1_ms must be positive");
        if (variant == Variant::baseline) {
            if (blocks.size() != 1) throw ConfigError("baseline takes a single block count");
        } else {
            if (blocks.size() != 4) throw ConfigError("speechformer takes four block counts");
            if (expand.size() != 3) throw ConfigError("speechformer takes three expand factors");
            for (std::size_t r : expand)
                if (r < 1) throw ConfigError("expand factors must be >= 1");
        }
        if (check_heads) {
            if (num_heads == 0) throw ConfigError("num_heads must be >= 1");
            if (d_model % num_heads != 0) {
                throw ConfigError("d_model " + std::to_string(d_model) +
                                  " is not divisible by num_heads " + std::to_string(num_heads));
            }
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

struct BlockWeights {
    AttentionParams attn;
    Vector norm1_gain;
    Vector norm1_bias;
    Matrix ffn_in;
    Vector ffn_in_bias;
    Matrix ffn_out;
    Vector ffn_out_bias;
    Vector norm2_gain;
    Vector norm2_bias;
};

/// Average pooling followed by a widening linear layer.
struct MergeWeights {
    Matrix weight;
    Vector bias;
};

struct HeadWeights {
    Matrix weight;
    Vector bias;
};

struct ModelWeights {
    std::vector<std::vector<BlockWeights>> stages;
    std::vector<MergeWeights> merges;
    HeadWeights head;
};

enum class TensorKind { weight, bias, norm_gain, norm_bias };

namespace detail {

template <typename Block, typename Fn>
void visit_block(const std::string& prefix, Block& b, Fn&& fn) {
    auto mat = [&](const char* n, auto& m) {
        fn(prefix + n, TensorKind::weight, m.values(), m.rows(), m.cols());
    };
    auto vec = [&](const char* n, TensorKind kind, auto& v) {
        fn(prefix + n, kind, std::span(v), std::size_t{1}, v.size());
    };
    mat("attn.wq", b.attn.wq);
    mat("attn.wk", b.attn.wk);
    mat("attn.wv", b.attn.wv);
    vec("norm1.gain", TensorKind::norm_gain, b.norm1_gain);
    vec("norm1.bias", TensorKind::norm_bias, b.norm1_bias);
    mat("ffn.in.weight", b.ffn_in);
    vec("ffn.in.bias", TensorKind::bias, b.ffn_in_bias);
    mat("ffn.out.weight", b.ffn_out);
    vec("ffn.out.bias", TensorKind::bias, b.ffn_out_bias);
    vec("norm2.gain", TensorKind::norm_gain, b.norm2_gain);
    vec("norm2.bias", TensorKind::norm_bias, b.norm2_bias);
}

} // namespace detail

inline std::string stage_name(const ModelConfig& config, std::size_t stage) {
    return config.variant == Variant::baseline ? std::string("encoder") : kStageNames[stage];
}

/// Visits every tensor in a fixed order (stage blocks, then the merge that
/// follows the stage, then the head). This order defines checkpoint layout
/// and initialization draws. fn(name, kind, values, rows, cols).
template <typename Weights, typename Fn>
    requires std::is_same_v<std::remove_const_t<Weights>, ModelWeights>
void for_each_tensor(const ModelConfig& config, Weights& w, Fn&& fn) {
    for (std::size_t s = 0; s < w.stages.size(); ++s) {
        for (std::size_t b = 0; b < w.stages[s].size(); ++b) {
            detail::visit_block(stage_name(config, s) + ".block" + std::to_string(b) + ".",
                                w.stages[s][b], fn);
        }
        if (s < w.merges.size()) {
            auto& m = w.merges[s];
            const std::string prefix = "merge" + std::to_string(s) + ".";
            fn(prefix + "weight", TensorKind::weight, m.weight.values(), m.weight.rows(),
               m.weight.cols());
            fn(prefix + "bias", TensorKind::bias, std::span(m.bias), std::size_t{1}, m.bias.size());
        }
    }
    fn(std::string("head.weight"), TensorKind::weight, w.head.weight.values(),
       w.head.weight.rows(), w.head.weight.cols());
    fn(std::string("head.bias"), TensorKind::bias, std::span(w.head.bias), std::size_t{1},
       w.head.bias.size());
}

/// Zero-valued weights with every shape the config implies.
inline ModelWeights allocate_weights(const ModelConfig& config) {
    config.validate();
    const auto widths = config.stage_widths();
    ModelWeights w;
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
        const std::size_t d = widths[s];
        const std::size_t hid = config.hidden_width(d);
        std::vector<BlockWeights> stage;
        for (std::size_t b = 0; b < config.blocks[s]; ++b) {
            BlockWeights bw;
            bw.attn = {Matrix(d, d), Matrix(d, d), Matrix(d, d), config.num_heads};
            bw.norm1_gain = Vector(d, 0.0);
            bw.norm1_bias = Vector(d, 0.0);
            bw.ffn_in = Matrix(d, hid);
            bw.ffn_in_bias = Vector(hid, 0.0);
            bw.ffn_out = Matrix(hid, d);
            bw.ffn_out_bias = Vector(d, 0.0);
            bw.norm2_gain = Vector(d, 0.0);
            bw.norm2_bias = Vector(d, 0.0);
            stage.push_back(std::move(bw));
        }
        w.stages.push_back(std::move(stage));
        if (s + 1 < config.num_stages()) {
            w.merges.push_back({Matrix(d, widths[s + 1]),
                                Vector(widths[s + 1], 0.0)});
        }
    }
    w.head = {Matrix(config.final_width(), config.num_classes), Vector(config.num_classes, 0.0)};
    return w;
}

/// Weight matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in traversal
/// order; biases zero, norm gains one.
inline ModelWeights init_model(const ModelConfig& config, std::uint64_t seed) {
    ModelWeights w = allocate_weights(config);
    Rng rng(seed);
    for_each_tensor(config, w,
                    [&](const std::string&, TensorKind kind, std::span<double> values,
                        std::size_t rows, std::size_t) {
                        switch (kind) {
                        case TensorKind::weight: {
                            const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
                            for (double& v : values) v = rng.uniform(-bound, bound);
                            break;
                        }
                        case TensorKind::norm_gain:
                            std::fill(values.begin(), values.end(), 1.0);
                            break;
                        case TensorKind::bias:
                        case TensorKind::norm_bias:
                            std::fill(values.begin(), values.end(), 0.0);
                            break;
                        }
                    });
    return w;
}

inline std::size_t count_scalars(const ModelConfig& config, const ModelWeights& w) {
    std::size_t n = 0;
    for_each_tensor(config, w, [&](const std::string&, TensorKind, std::span<const double> v,
                                   std::size_t, std::size_t) { n += v.size(); });
    return n;
}

/// FNV-1a over the bit patterns of every weight, in traversal order.
inline std::uint64_t weights_checksum(const ModelConfig& config, const ModelWeights& w) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for_each_tensor(config, w, [&](const std::string&, TensorKind, std::span<const double> v,
                                   std::size_t, std::size_t) {
        for (double x : v) {
            auto bits = std::bit_cast<std::uint64_t>(x);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffU;
                h *= 0x100000001b3ULL;
            }
        }
    });
    return h;
}

/// Pre-norm residual block. With a window the attention is speech_msa,
/// otherwise full msa.
inline Matrix encoder_block(const Matrix& x, const BlockWeights& w,
                            std::optional<WindowSpec> window, ScaleMode mode) {
    if (x.cols() != w.attn.model_dim()) {
        throw ShapeError("block input " + x.shape() + " does not match block width " +
                         std::to_string(w.attn.model_dim()));
    }
    const Matrix n1 = layer_norm(x, w.norm1_gain, w.norm1_bias);
    const Matrix a = window ? speech_msa(n1, w.attn, *window, mode) : msa(n1, w.attn, mode);
    const Matrix h = add(x, a);
    const Matrix n2 = layer_norm(h, w.norm2_gain, w.norm2_bias);
    const Matrix f = linear(relu(linear(n2, w.ffn_in, w.ffn_in_bias)), w.ffn_out, w.ffn_out_bias);
    return add(h, f);
}

inline Matrix speechformer_block(const Matrix& x, const BlockWeights& w, WindowSpec window,
                                 const ModelConfig& config) {
    return encoder_block(x, w, window, config.scale_mode);
}

inline Matrix transformer_block(const Matrix& x, const BlockWeights& w, const ModelConfig& config) {
    return encoder_block(x, w, std::nullopt, config.scale_mode);
}

inline Matrix merging_block(const Matrix& x, std::size_t m, const Matrix& w,
                            std::span<const double> bias) {
    if (w.rows() != x.cols()) {
        throw ShapeError("merging block weight " + w.shape() + " does not match input " + x.shape());
    }
    return linear(avg_pool_groups(x, m), w, bias);
}

/// Mean over tokens followed by a linear layer; returns 1 x num_classes.
inline Matrix classify(const Matrix& x, const HeadWeights& head) {
    return linear(mean_rows(x), head.weight, head.bias);
}

struct ForwardTrace {
    std::vector<std::pair<std::size_t, std::size_t>> stage_shapes;
    Vector logits;
    /// Filled only when requested.
    std::vector<Matrix> stage_outputs;
};

/// Window used by stage `stage` at the given input length. The utterance
/// stage (and the baseline) attend over everything.
inline std::optional<WindowSpec> stage_window(const ModelConfig& config,
                                              const StageSchedule& schedule, std::size_t stage,
                                              std::size_t tokens) {
    if (config.variant == Variant::baseline) return std::nullopt;
    if (stage < 3) return WindowSpec{schedule.window_tokens[stage]};
    return WindowSpec{2 * tokens};
}

inline ForwardTrace forward(const Matrix& features, const ModelWeights& weights,
                            const ModelConfig& config, const StageSchedule& schedule,
                            bool keep_activations = false) {
    config.validate();
    if (features.cols() != config.d_model) {
        throw ShapeError("features " + features.shape() + " do not match d_model " +
                         std::to_string(config.d_model));
    }
    if (features.rows() == 0) throw InvalidArgument("forward: input has no frames");
    if (weights.stages.size() != config.num_stages()) {
        throw ShapeError("weights have " + std::to_string(weights.stages.size()) +
                         " stages, config expects " + std::to_string(config.num_stages()));
    }

    ForwardTrace trace;
    Matrix x = add(features, sinusoidal_positions(features.rows(), features.cols()));
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
        const auto window = stage_window(config, schedule, s, x.rows());
        for (const BlockWeights& bw : weights.stages[s]) x = encoder_block(x, bw, window, config.scale_mode);
        trace.stage_shapes.emplace_back(x.rows(), x.cols());
        if (keep_activations) trace.stage_outputs.push_back(x);
        if (s < weights.merges.size()) {
            const MergeWeights& m = weights.merges[s];
            x = merging_block(x, schedule.merge_scales[s], m.weight, m.bias);
        }
    }
    const Matrix logits = classify(x, weights.head);
    trace.logits.assign(logits.values().begin(), logits.values().end());
    return trace;
}

} // namespace speechformer
