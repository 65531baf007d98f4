#pragma once

// Self-check suites behind `speechformer check` and the acceptance run:
// windowed attention against the band-mask oracle, and analytic gradients
// against central differences for every block type.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "speechformer/attention.hpp"
#include "speechformer/autodiff.hpp"
#include "speechformer/model.hpp"
#include "speechformer/oracle.hpp"
#include "speechformer/rng.hpp"
#include "speechformer/speech_structure.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-bound, bound);
    return m;
}

inline Vector random_vector(Rng& rng, std::size_t n, double lo, double hi) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline AttentionParams random_attention(Rng& rng, std::size_t d, std::size_t heads) {
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    return {random_matrix(rng, d, d, b), random_matrix(rng, d, d, b), random_matrix(rng, d, d, b),
            heads};
}

/// Re-draws every tensor so that biases and norm parameters are non-trivial.
inline void randomize_weights(const ModelConfig& config, ModelWeights& w, Rng& rng) {
    for_each_tensor(config, w,
                    [&](const std::string&, TensorKind kind, std::span<double> values,
                        std::size_t rows, std::size_t) {
                        const double b = 1.0 / std::sqrt(static_cast<double>(rows));
                        for (double& v : values) {
                            switch (kind) {
                            case TensorKind::weight: v = rng.uniform(-b, b); break;
                            case TensorKind::norm_gain: v = rng.uniform(0.8, 1.2); break;
                            case TensorKind::bias:
                            case TensorKind::norm_bias: v = rng.uniform(-0.1, 0.1); break;
                            }
                        }
                    });
}

inline std::uint64_t case_seed(std::uint64_t suite_seed, std::uint64_t index) {
    // splitmix64 step so neighbouring indices get unrelated streams
    std::uint64_t z = suite_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct OracleCase {
    std::size_t tokens = 0;
    std::size_t width = 0;
    std::size_t heads = 0;
    std::size_t tw = 0;
    ScaleMode mode = ScaleMode::sqrt_dh;
    std::uint64_t seed = 0;
    double max_abs_diff = 0.0;
    bool pass = false;
};

inline constexpr double kOracleTolerance = 1e-10;

/// Random configurations with T <= 32, d <= 16, h in {1,2,4}, tw in {1,3,5,8}.
inline std::vector<OracleCase> run_oracle_suite(std::uint64_t seed, std::size_t cases = 50) {
    constexpr std::array<std::size_t, 3> heads = {1, 2, 4};
    constexpr std::array<std::size_t, 4> windows = {1, 3, 5, 8};
    std::vector<OracleCase> out;
    for (std::size_t i = 0; i < cases; ++i) {
        OracleCase c;
        c.seed = case_seed(seed, i);
        Rng rng(c.seed);
        c.heads = heads[rng.below(heads.size())];
        c.width = c.heads * (1 + rng.below(16 / c.heads));
        c.tokens = 1 + rng.below(32);
        c.tw = windows[rng.below(windows.size())];
        c.mode = rng.below(2) == 0 ? ScaleMode::sqrt_dh : ScaleMode::dh;
        const Matrix x = random_matrix(rng, c.tokens, c.width, 2.0);
        const AttentionParams p = random_attention(rng, c.width, c.heads);
        const WindowSpec w{c.tw};
        c.max_abs_diff = max_abs_diff(speech_msa(x, p, w, c.mode), band_mask_oracle(x, p, w, c.mode));
        c.pass = c.max_abs_diff < kOracleTolerance;
        out.push_back(c);
    }
    return out;
}

struct GradCase {
    std::string name;
    GradCheckReport report;
};

namespace detail {

inline double weighted_sum(const Matrix& out, const Matrix& r) {
    double s = 0.0;
    const auto a = out.values();
    const auto b = r.values();
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename Spans, typename GradSpans>
void append_groups(std::vector<ParamGroup>& groups, const std::string& prefix, Spans values,
                   GradSpans grads) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        groups.push_back({prefix + values[i].first, values[i].second, grads[i].second});
    }
}

inline GradCase check_attention(const std::string& name, std::size_t T, std::size_t d,
                                std::size_t h, std::optional<WindowSpec> window, ScaleMode mode,
                                std::uint64_t seed, const FiniteDiffOptions& opt) {
    Rng rng(seed);
    Matrix x = random_matrix(rng, T, d);
    AttentionParams p = random_attention(rng, d, h);
    const Matrix r = random_matrix(rng, T, d);
    AttentionTape tape;
    attention_record(x, p, window, mode, tape);
    const AttentionGrads g = attention_backward(tape, p, r);
    const auto loss = [&] {
        return weighted_sum(window ? speech_msa(x, p, *window, mode) : msa(x, p, mode), r);
    };
    const std::vector<ParamGroup> groups = {{"x", x.values(), g.dx.values()},
                                            {"wq", p.wq.values(), g.dwq.values()},
                                            {"wk", p.wk.values(), g.dwk.values()},
                                            {"wv", p.wv.values(), g.dwv.values()}};
    return {name, finite_diff_check(loss, groups, opt)};
}

inline BlockWeights random_block(Rng& rng, std::size_t d, std::size_t h, std::size_t hidden) {
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    BlockWeights w;
    w.attn = random_attention(rng, d, h);
    w.norm1_gain = random_vector(rng, d, 0.8, 1.2);
    w.norm1_bias = random_vector(rng, d, -0.1, 0.1);
    w.ffn_in = random_matrix(rng, d, hidden, b);
    w.ffn_in_bias = random_vector(rng, hidden, -0.1, 0.1);
    w.ffn_out = random_matrix(rng, hidden, d, bh);
    w.ffn_out_bias = random_vector(rng, d, -0.1, 0.1);
    w.norm2_gain = random_vector(rng, d, 0.8, 1.2);
    w.norm2_bias = random_vector(rng, d, -0.1, 0.1);
    return w;
}

inline GradCase check_block(const std::string& name, std::size_t T, std::size_t d, std::size_t h,
                            std::optional<WindowSpec> window, std::uint64_t seed,
                            const FiniteDiffOptions& opt) {
    Rng rng(seed);
    Matrix x = random_matrix(rng, T, d);
    BlockWeights w = random_block(rng, d, h, d);
    const Matrix r = random_matrix(rng, T, d);
    BlockTape tape;
    block_record(x, w, window, ScaleMode::sqrt_dh, tape);
    BlockGrads g = block_backward(tape, w, r);
    const auto loss = [&] { return weighted_sum(encoder_block(x, w, window, ScaleMode::sqrt_dh), r); };
    std::vector<ParamGroup> groups = {{"x", x.values(), g.dx.values()}};
    append_groups(groups, "", block_tensors(w), block_tensors(std::as_const(g.dw)));
    return {name, finite_diff_check(loss, groups, opt)};
}

inline GradCase check_merge(std::uint64_t seed, const FiniteDiffOptions& opt) {
    Rng rng(seed);
    const std::size_t T = 13, m = 4, d = 8, r = 2;
    Matrix x = random_matrix(rng, T, d);
    MergeWeights w{random_matrix(rng, d, r * d, 0.35), random_vector(rng, r * d, -0.1, 0.1)};
    const Matrix up = random_matrix(rng, ceil_div(T, m), r * d);
    MergeTape tape;
    merge_record(x, m, w, tape);
    const MergeGrads g = merge_backward(tape, w, up);
    const auto loss = [&] { return weighted_sum(merging_block(x, m, w.weight, w.bias), up); };
    const std::vector<ParamGroup> groups = {{"x", x.values(), g.dx.values()},
                                            {"weight", w.weight.values(), g.dw.weight.values()},
                                            {"bias", w.bias, g.dw.bias}};
    return {"merging_block", finite_diff_check(loss, groups, opt)};
}

inline GradCase check_head(std::uint64_t seed, const FiniteDiffOptions& opt) {
    Rng rng(seed);
    const std::size_t T = 7, d = 16, classes = 4;
    Matrix x = random_matrix(rng, T, d);
    HeadWeights w{random_matrix(rng, d, classes, 0.25), random_vector(rng, classes, -0.1, 0.1)};
    const std::size_t target = rng.below(classes);
    HeadTape tape;
    const Matrix logits = head_record(x, w, tape);
    const auto ce = softmax_cross_entropy(logits.values(), target);
    const HeadGrads g = head_backward(tape, w, ce.dlogits);
    const auto loss = [&] { return softmax_cross_entropy(classify(x, w).values(), target).loss; };
    const std::vector<ParamGroup> groups = {{"x", x.values(), g.dx.values()},
                                            {"weight", w.weight.values(), g.dw.weight.values()},
                                            {"bias", w.bias, g.dw.bias}};
    return {"head", finite_diff_check(loss, groups, opt)};
}


inline GradCase check_model(const std::string& name, const ModelConfig& config, std::size_t T,
                            std::uint64_t seed, const FiniteDiffOptions& opt) {
    Rng rng(seed);
    const StageSchedule schedule = derive_schedule(config.hop1_ms);
    ModelWeights w = allocate_weights(config);
    randomize_weights(config, w, rng);
    Matrix x = random_matrix(rng, T, config.d_model);
    const std::size_t target = rng.below(config.num_classes);
    ModelTape tape;
    const Vector logits = model_record(x, w, config, schedule, tape);
    const auto ce = softmax_cross_entropy(logits, target);
    ModelGrads g = model_backward(tape, w, ce.dlogits);
    const auto loss = [&] {
        return softmax_cross_entropy(forward(x, w, config, schedule).logits, target).loss;
    };
    std::vector<ParamGroup> groups = {{"features", x.values(), g.dfeatures.values()}};
    append_groups(groups, "", model_tensors(config, w), model_tensors(config, std::as_const(g.dw)));
    return {name, finite_diff_check(loss, groups, opt)};
}

} // namespace detail

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kResolutionMargin = 16.0;

/// Every block type at toy scale (T <= 40, d <= 16), plus the attention
/// kernels on their own and two full models.
inline std::vector<GradCase> run_grad_suite(std::uint64_t seed) {
    FiniteDiffOptions opt;
    opt.eps = 1e-5;
    opt.threshold = kGradTolerance;
    opt.seed = seed;
    std::vector<GradCase> out;
    std::uint64_t i = 0;
    out.push_back(detail::check_attention("msa", 8, 8, 2, std::nullopt, ScaleMode::dh,
                                          case_seed(seed, i++), opt));
    out.push_back(detail::check_attention("speech_msa", 10, 8, 2, WindowSpec{5}, ScaleMode::sqrt_dh,
                                          case_seed(seed, i++), opt));
    out.push_back(detail::check_block("transformer_block", 12, 16, 4, std::nullopt,
                                      case_seed(seed, i++), opt));
    out.push_back(detail::check_block("speechformer_block", 20, 16, 4, WindowSpec{5},
                                      case_seed(seed, i++), opt));
    out.push_back(detail::check_merge(case_seed(seed, i++), opt));
    out.push_back(detail::check_head(case_seed(seed, i++), opt));

    // Whole models stack a dozen blocks; at T = 40 the word stage sees two
    // tokens and some Q/K gradients sit near 1e-7, below what a 1e-5 step can
    // resolve in double precision. Those coordinates are counted separately.
    FiniteDiffOptions deep = opt;
    deep.resolution_margin = kResolutionMargin;
    ModelConfig sf = ModelConfig::speechformer_s(16);
    sf.num_heads = 4;
    out.push_back(detail::check_model("speechformer_s", sf, 40, case_seed(seed, i++), deep));
    ModelConfig sfb = ModelConfig::speechformer_b(16);
    sfb.num_heads = 4;
    out.push_back(detail::check_model("speechformer_b", sfb, 40, case_seed(seed, i++), deep));
    ModelConfig base = ModelConfig::baseline(16, 2);
    base.num_heads = 4;
    out.push_back(detail::check_model("baseline", base, 16, case_seed(seed, i++), deep));
    return out;
}

} // namespace speechformer
