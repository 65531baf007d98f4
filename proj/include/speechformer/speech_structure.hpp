#pragma once

// Durations of speech units and the stage schedule they imply: how many
// tokens each stage's attention window spans and how many tokens each
// merging block averages, given the feature hop length.

#include <array>
#include <cstddef>
#include <ostream>
#include <string>

#include "speechformer/errors.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

/// Statistical durations of speech units, in milliseconds. Words are taken as
/// up to five phonemes long, hence the 5x bounds.
struct DurationStats {
    double phoneme_min_ms = 50.0;
    double phoneme_max_ms = 200.0;
    double word_min_ms = 250.0;
    double word_max_ms = 1000.0;

    void validate() const {
        if (!(phoneme_min_ms > 0.0) || !(phoneme_max_ms > 0.0) || !(word_min_ms > 0.0) ||
            !(word_max_ms > 0.0)) {
            throw InvalidArgument("DurationStats: all durations must be positive");
        }
        if (phoneme_min_ms > phoneme_max_ms || word_min_ms > word_max_ms) {
            throw InvalidArgument("DurationStats: min duration exceeds max duration");
        }
    }
};

inline constexpr double kDefaultHop1Ms = 10.0;

/// Windows and merge scales for the frame, phoneme and word stages. The
/// utterance stage always attends over its whole input, so it has no entry.
struct StageSchedule {
    std::array<double, 3> hop_ms{};
    std::array<std::size_t, 3> window_tokens{};
    std::array<std::size_t, 3> merge_scales{};

    bool operator==(const StageSchedule&) const = default;
};

/// ceil(duration / hop), never below 1.
inline std::size_t tokens_for(double duration_ms, double hop_ms) {
    const double q = std::ceil(duration_ms / hop_ms);
    return q < 1.0 ? std::size_t{1} : static_cast<std::size_t>(q);
}

inline StageSchedule derive_schedule(double hop1_ms = kDefaultHop1Ms,
                                     const DurationStats& stats = {}) {
    if (!(hop1_ms > 0.0)) {
        throw InvalidArgument("derive_schedule: hop1_ms must be positive, got " +
                              std::to_string(hop1_ms));
    }
    stats.validate();
    StageSchedule s;
    s.hop_ms[0] = hop1_ms;
    // frame stage: window and merge both span the shortest phoneme
    s.window_tokens[0] = tokens_for(stats.phoneme_min_ms, s.hop_ms[0]);
    s.merge_scales[0] = tokens_for(stats.phoneme_min_ms, s.hop_ms[0]);
    s.hop_ms[1] = static_cast<double>(s.merge_scales[0]) * s.hop_ms[0];
    // phoneme stage: window covers two of the longest phonemes, merge the shortest word
    s.window_tokens[1] = tokens_for(2.0 * stats.phoneme_max_ms, s.hop_ms[1]);
    s.merge_scales[1] = tokens_for(stats.word_min_ms, s.hop_ms[1]);
    s.hop_ms[2] = static_cast<double>(s.merge_scales[1]) * s.hop_ms[1];
    // word stage: window covers two of the longest words, merge the longest word
    s.window_tokens[2] = tokens_for(2.0 * stats.word_max_ms, s.hop_ms[2]);
    s.merge_scales[2] = tokens_for(stats.word_max_ms, s.hop_ms[2]);
    return s;
}

/// Token counts entering the frame, phoneme, word and utterance stages.
inline std::array<std::size_t, 4> token_chain(std::size_t t_input, const StageSchedule& schedule) {
    std::array<std::size_t, 4> chain{t_input, 0, 0, 0};
    for (std::size_t k = 0; k < 3; ++k) chain[k + 1] = ceil_div(chain[k], schedule.merge_scales[k]);
    return chain;
}

/// `key<TAB>value` lines.
inline void write_schedule_tsv(std::ostream& os, const StageSchedule& s) {
    const auto num = [](double v) {
        std::string out = std::to_string(v);
        out.erase(out.find_last_not_of('0') + 1);
        if (!out.empty() && out.back() == '.') out.pop_back();
        return out;
    };
    os << "tw_f\t" << s.window_tokens[0] << '\n'
       << "tw_p\t" << s.window_tokens[1] << '\n'
       << "tw_w\t" << s.window_tokens[2] << '\n'
       << "m1\t" << s.merge_scales[0] << '\n'
       << "m2\t" << s.merge_scales[1] << '\n'
       << "m3\t" << s.merge_scales[2] << '\n'
       << "hop1_ms\t" << num(s.hop_ms[0]) << '\n'
       << "hop2_ms\t" << num(s.hop_ms[1]) << '\n'
       << "hop3_ms\t" << num(s.hop_ms[2]) << '\n';
}

} // namespace speechformer
