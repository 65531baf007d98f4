#pragma once

// Parameter and FLOPs accounting.
//
// Convention: one multiply-accumulate counts as one FLOP and softmax is not
// counted. Per encoder block at length T, width d, hidden width h:
//   projections  T * d * 3d
//   attention    2 * T * span * d   (scores + weighted sum; span = T when full)
//   ffn          2 * T * d * h
// Merging blocks cost ceil(T/m) * d * (r d), the head d_final * classes.
// Layer norm, residual adds, ReLU, pooling and positional encoding are
// tallied separately as element-wise ops and left out of the FLOPs total.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "speechformer/errors.hpp"
#include "speechformer/model.hpp"
#include "speechformer/speech_structure.hpp"

namespace speechformer {

inline constexpr const char* kCostConvention =
    "1 MAC = 1 FLOP; softmax omitted; norm/residual/activation/pooling/positional ops informational";

struct CostItem {
    std::string name;
    std::size_t tokens = 0;
    std::size_t width = 0;
    /// Tokens each query attends to (0 for non-attention items).
    std::size_t span = 0;
    std::uint64_t params = 0;
    std::uint64_t projection_flops = 0;
    std::uint64_t attention_flops = 0;
    std::uint64_t ffn_flops = 0;
    std::uint64_t linear_flops = 0;
    std::uint64_t elementwise_ops = 0;

    std::uint64_t flops() const {
        return projection_flops + attention_flops + ffn_flops + linear_flops;
    }
};

struct CostReport {
    std::string label;
    /// 0 for a parameter-only report.
    std::size_t input_len = 0;
    std::vector<CostItem> items;

    template <typename Field>
    std::uint64_t sum(Field field) const {
        return std::accumulate(items.begin(), items.end(), std::uint64_t{0},
                               [&](std::uint64_t acc, const CostItem& i) { return acc + field(i); });
    }

    std::uint64_t total_params() const { return sum([](const CostItem& i) { return i.params; }); }
    std::uint64_t total_flops() const { return sum([](const CostItem& i) { return i.flops(); }); }
    std::uint64_t total_attention_flops() const {
        return sum([](const CostItem& i) { return i.attention_flops; });
    }
    std::uint64_t total_elementwise_ops() const {
        return sum([](const CostItem& i) { return i.elementwise_ops; });
    }
};

inline std::uint64_t block_params(std::uint64_t d, std::uint64_t hidden) {
    // Q/K/V + two FFN layers with biases + two layer norms
    return 3 * d * d + d * hidden + hidden + hidden * d + d + 4 * d;
}

namespace detail {

inline std::string report_label(const ModelConfig& config) {
    if (config.variant == Variant::baseline) return "baseline";
    const bool b = config.blocks == std::vector<std::size_t>{2, 2, 4, 4};
    if (b && config.expand == std::vector<std::size_t>{1, 1, 1}) return "speechformer-s";
    if (b && config.expand == std::vector<std::size_t>{1, 1, 2}) return "speechformer-b";
    return "speechformer";
}

/// Builds the report; tokens == nullptr means parameters only.
inline CostReport build_report(const ModelConfig& config, const StageSchedule& schedule,
                               const std::size_t* t_input) {
    config.validate(/*check_heads=*/false);
    CostReport report;
    report.label = report_label(config);
    report.input_len = t_input ? *t_input : 0;
    const auto widths = config.stage_widths();
    std::uint64_t T = t_input ? *t_input : 0;

    if (t_input) {
        CostItem pos{"positional", static_cast<std::size_t>(T), config.d_model};
        pos.elementwise_ops = T * config.d_model;
        report.items.push_back(pos);
    }
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
        const std::uint64_t d = widths[s];
        const std::uint64_t hid = config.hidden_width(widths[s]);
        std::uint64_t span = T;
        if (config.variant == Variant::speechformer && s < 3) {
            span = std::min<std::uint64_t>(schedule.window_tokens[s], T);
        }
        for (std::size_t b = 0; b < config.blocks[s]; ++b) {
            CostItem item{stage_name(config, s) + ".block" + std::to_string(b),
                          static_cast<std::size_t>(T), static_cast<std::size_t>(d),
                          static_cast<std::size_t>(span)};
            item.params = block_params(d, hid);
            if (t_input) {
                item.projection_flops = T * d * 3 * d;
                item.attention_flops = 2 * T * span * d;
                item.ffn_flops = 2 * T * d * hid;
                // two norms, two residual adds, ReLU
                item.elementwise_ops = 4 * T * d + T * hid;
            }
            report.items.push_back(item);
        }
        if (s + 1 < config.num_stages()) {
            const std::uint64_t out = widths[s + 1];
            const std::uint64_t pooled = t_input ? ceil_div(T, schedule.merge_scales[s]) : 0;
            CostItem item{"merge" + std::to_string(s), static_cast<std::size_t>(pooled),
                          static_cast<std::size_t>(out)};
            item.params = d * out + out;
            item.linear_flops = pooled * d * out;
            item.elementwise_ops = T * d;
            report.items.push_back(item);
            T = pooled;
        }
    }
    const std::uint64_t d = config.final_width();
    CostItem head{"head", 1, config.num_classes};
    head.params = d * config.num_classes + config.num_classes;
    if (t_input) {
        head.linear_flops = d * config.num_classes;
        head.elementwise_ops = T * d;
    }
    report.items.push_back(head);
    return report;
}

} // namespace detail

inline CostReport count_params(const ModelConfig& config) {
    return detail::build_report(config, derive_schedule(config.hop1_ms), nullptr);
}

inline CostReport count_flops(const ModelConfig& config, std::size_t t_input,
                              const StageSchedule& schedule) {
    if (t_input == 0) throw InvalidArgument("count_flops: input length must be >= 1");
    return detail::build_report(config, schedule, &t_input);
}

inline CostReport count_flops(const ModelConfig& config, std::size_t t_input) {
    return count_flops(config, t_input, derive_schedule(config.hop1_ms));
}

struct CostRatio {
    std::size_t input_len = 0;
    double flops_ratio = 0.0;
    double params_ratio = 0.0;
};

/// candidate / reference.
inline CostRatio compare(const CostReport& reference, const CostReport& candidate) {
    if (reference.input_len == 0 || candidate.input_len == 0) {
        throw InvalidComparison("compare: both reports need FLOPs (input length set)");
    }
    if (reference.input_len != candidate.input_len) {
        throw InvalidComparison("compare: input lengths differ (" +
                                std::to_string(reference.input_len) + " vs " +
                                std::to_string(candidate.input_len) + ")");
    }
    return {reference.input_len,
            static_cast<double>(candidate.total_flops()) / static_cast<double>(reference.total_flops()),
            static_cast<double>(candidate.total_params()) /
                static_cast<double>(reference.total_params())};
}

inline double mean_flops_ratio(std::span<const CostRatio> rows) {
    if (rows.empty()) throw InvalidComparison("mean_flops_ratio: no rows");
    double sum = 0.0;
    for (const auto& r : rows) sum += r.flops_ratio;
    return sum / static_cast<double>(rows.size());
}

inline std::string format_count(double value, double unit, const char* suffix) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%s", value / unit, suffix);
    return buf;
}

inline std::string format_params(std::uint64_t n) { return format_count(static_cast<double>(n), 1e6, "M"); }
inline std::string format_flops(std::uint64_t n) { return format_count(static_cast<double>(n), 1e9, "G"); }

inline void write_cost_table(std::ostream& os, const CostReport& r) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %7s %6s %6s %12s %16s\n", "item", "tokens", "width",
                  "span", "params", "flops");
    os << r.label << " (input " << r.input_len << ")\n" << line;
    for (const auto& i : r.items) {
        std::snprintf(line, sizeof line, "%-22s %7zu %6zu %6zu %12llu %16llu\n", i.name.c_str(),
                      i.tokens, i.width, i.span, static_cast<unsigned long long>(i.params),
                      static_cast<unsigned long long>(i.flops()));
        os << line;
    }
    os << "total params " << format_params(r.total_params()) << " (" << r.total_params() << ")\n";
    if (r.input_len > 0) {
        os << "total flops  " << format_flops(r.total_flops()) << " (" << r.total_flops() << ")\n"
           << "elementwise  " << r.total_elementwise_ops() << " (not in total)\n";
    }
    os << "convention   " << kCostConvention << '\n';
}

inline void write_cost_tsv(std::ostream& os, const CostReport& r) {
    os << "label\t" << r.label << '\n' << "input_len\t" << r.input_len << '\n';
    for (const auto& i : r.items) {
        os << i.name << ".params\t" << i.params << '\n';
        if (r.input_len > 0) os << i.name << ".flops\t" << i.flops() << '\n';
    }
    os << "params_total\t" << r.total_params() << '\n'
       << "params_m\t" << format_params(r.total_params()) << '\n';
    if (r.input_len > 0) {
        os << "flops_total\t" << r.total_flops() << '\n'
           << "flops_g\t" << format_flops(r.total_flops()) << '\n'
           << "attention_flops\t" << r.total_attention_flops() << '\n'
           << "elementwise_ops\t" << r.total_elementwise_ops() << '\n';
    }
}

} // namespace speechformer
