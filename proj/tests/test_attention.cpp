#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "speechformer/autodiff.hpp"
#include "speechformer/checks.hpp"
#include "speechformer/oracle.hpp"

using namespace speechformer;

namespace {

AttentionParams identity_params(std::size_t d, std::size_t heads) {
    return {Matrix::identity(d), Matrix::identity(d), Matrix::identity(d), heads};
}

} // namespace

TEST(Ssa, IdenticalKeysAverageValues) {
    Rng rng(1);
    const Matrix q = random_matrix(rng, 5, 3);
    Matrix k(4, 3);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) k(r, c) = 0.3 * static_cast<double>(c) - 0.2;
    const Matrix v = random_matrix(rng, 4, 3);
    const Matrix out = ssa(q, k, v);
    const Matrix mean = mean_rows(v);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(t, c), mean(0, c), 1e-15);
}

TEST(Ssa, SingleTokenReturnsValue) {
    const Matrix q = Matrix::from_rows({{0.4, -2.0}});
    const Matrix k = Matrix::from_rows({{1.5, 3.0}});
    const Matrix v = Matrix::from_rows({{7.0, -1.25}});
    EXPECT_EQ(ssa(q, k, v), v);
}

TEST(Ssa, MatchesScalarOracle) {
    Rng rng(2);
    const Matrix q = random_matrix(rng, 6, 4);
    const Matrix k = random_matrix(rng, 6, 4);
    const Matrix v = random_matrix(rng, 6, 4);
    EXPECT_LT(max_abs_diff(ssa(q, k, v, ScaleMode::sqrt_dh), oracle::scalar_ssa(q, k, v, 2.0)), 1e-12);
    EXPECT_LT(max_abs_diff(ssa(q, k, v, ScaleMode::dh), oracle::scalar_ssa(q, k, v, 4.0)), 1e-12);
}

TEST(Ssa, ShapeMismatchThrows) {
    EXPECT_THROW(ssa(Matrix(3, 2), Matrix(3, 3), Matrix(3, 3)), ShapeError);
    EXPECT_THROW(ssa(Matrix(3, 2), Matrix(4, 2), Matrix(3, 2)), ShapeError);
}

TEST(Msa, SingleHeadIsSsaOnProjections) {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 7, 6);
    const AttentionParams p = random_attention(rng, 6, 1);
    const Projections qkv = project_qkv(x, p);
    EXPECT_LT(max_abs_diff(msa(x, p), ssa(qkv.q, qkv.k, qkv.v)), 1e-15);
}

TEST(Msa, ZeroScoresGiveRowMean) {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 5, 4);
    const AttentionParams p{Matrix(4, 4), Matrix(4, 4), Matrix::identity(4), 2};
    const Matrix out = msa(x, p);
    const Matrix mean = mean_rows(x);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(t, c), mean(0, c), 1e-15);
}

TEST(Msa, FourHeadsMatchPerHeadOracle) {
    Rng rng(5);
    const Matrix x = random_matrix(rng, 8, 16);
    const AttentionParams p = random_attention(rng, 16, 4);
    EXPECT_LT(max_abs_diff(msa(x, p), oracle::scalar_msa(x, p, 2.0)), 1e-12);
    EXPECT_LT(max_abs_diff(msa(x, p, ScaleMode::dh), oracle::scalar_msa(x, p, 4.0)), 1e-12);
}

TEST(Msa, IndivisibleHeadsAreConfigError) {
    EXPECT_THROW(msa(Matrix(3, 6), identity_params(6, 4)), ConfigError);
}

TEST(Msa, WrongInputWidthIsShapeError) {
    EXPECT_THROW(msa(Matrix(3, 5), identity_params(6, 2)), ShapeError);
}

TEST(Msa, HeadOrderFollowsColumnBlocks) {
    // permuting head column blocks of every projection permutes the output blocks
    Rng rng(6);
    const Matrix x = random_matrix(rng, 6, 8);
    const AttentionParams p = random_attention(rng, 8, 2);
    const auto swap_blocks = [](const Matrix& m) {
        Matrix out(m.rows(), m.cols());
        set_cols(out, 0, slice_cols(m, 4, 4));
        set_cols(out, 4, slice_cols(m, 0, 4));
        return out;
    };
    const AttentionParams swapped{swap_blocks(p.wq), swap_blocks(p.wk), swap_blocks(p.wv), 2};
    EXPECT_LT(max_abs_diff(msa(x, swapped), swap_blocks(msa(x, p))), 1e-15);
}

TEST(SpeechMsa, WideWindowEqualsFullAttention) {
    Rng rng(7);
    for (std::size_t T : {1, 2, 5, 13}) {
        const Matrix x = random_matrix(rng, T, 8);
        const AttentionParams p = random_attention(rng, 8, 2);
        for (ScaleMode mode : {ScaleMode::sqrt_dh, ScaleMode::dh}) {
            EXPECT_LT(max_abs_diff(speech_msa(x, p, WindowSpec{2 * T}, mode), msa(x, p, mode)), 1e-12);
            EXPECT_LT(max_abs_diff(speech_msa(x, p, WindowSpec{5 * T}, mode), msa(x, p, mode)), 1e-12);
        }
    }
}

TEST(SpeechMsa, UnitWindowIsValueProjection) {
    Rng rng(8);
    const Matrix x = random_matrix(rng, 9, 8);
    const AttentionParams p = random_attention(rng, 8, 4);
    EXPECT_LT(max_abs_diff(speech_msa(x, p, WindowSpec{1}), oracle::naive_matmul(x, p.wv)), 1e-15);
}

TEST(SpeechMsa, MatchesBandMaskOracle) {
    Rng rng(9);
    const Matrix x = random_matrix(rng, 12, 8);
    const AttentionParams p = random_attention(rng, 8, 2);
    EXPECT_LT(max_abs_diff(speech_msa(x, p, WindowSpec{5}), band_mask_oracle(x, p, WindowSpec{5})), 1e-12);
}

TEST(SpeechMsa, ZeroWindowRejected) {
    EXPECT_THROW(speech_msa(Matrix(3, 4), identity_params(4, 1), WindowSpec{0}), InvalidArgument);
}

TEST(SpeechMsa, EvenWindowCoversTheSameBandAsNextOdd) {
    Rng rng(10);
    const Matrix x = random_matrix(rng, 11, 4);
    const AttentionParams p = random_attention(rng, 4, 1);
    EXPECT_EQ(speech_msa(x, p, WindowSpec{8}), speech_msa(x, p, WindowSpec{9}));
}

TEST(BandOracle, UnitWindowIsDiagonal) {
    Rng rng(11);
    const Matrix x = random_matrix(rng, 6, 4);
    const AttentionParams p = random_attention(rng, 4, 2);
    EXPECT_LT(max_abs_diff(band_mask_oracle(x, p, WindowSpec{1}), oracle::naive_matmul(x, p.wv)), 1e-15);
}

TEST(BandOracle, RandomizedSuiteWithinTolerance) {
    const auto cases = run_oracle_suite(2024, 60);
    ASSERT_EQ(cases.size(), 60u);
    for (const auto& c : cases) {
        EXPECT_LE(c.tokens, 32u);
        EXPECT_LE(c.width, 16u);
        EXPECT_EQ(c.width % c.heads, 0u);
        EXPECT_LT(c.max_abs_diff, 1e-10) << "seed " << c.seed;
    }
}

TEST(Locality, ForwardPerturbationStaysInsideWindow) {
    Rng rng(12);
    const std::size_t T = 24, d = 8;
    const WindowSpec w{5};
    const Matrix x = random_matrix(rng, T, d);
    const AttentionParams p = random_attention(rng, d, 2);
    const Matrix base = speech_msa(x, p, w);
    for (std::size_t j : {0u, 7u, 13u, 23u}) {
        Matrix xp = x;
        for (std::size_t c = 0; c < d; ++c) xp(j, c) += 0.75;
        const Matrix out = speech_msa(xp, p, w);
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t dist = t > j ? t - j : j - t;
            double change = 0.0;
            for (std::size_t c = 0; c < d; ++c) change = std::max(change, std::abs(out(t, c) - base(t, c)));
            if (dist > w.half()) EXPECT_EQ(change, 0.0) << "t=" << t << " j=" << j;
            else EXPECT_GT(change, 0.0) << "t=" << t << " j=" << j;
        }
    }
}

TEST(Locality, BackwardGradientVanishesOutsideWindow) {
    Rng rng(13);
    const std::size_t T = 24, d = 8;
    const WindowSpec w{5};
    const Matrix x = random_matrix(rng, T, d);
    const AttentionParams p = random_attention(rng, d, 2);
    AttentionTape tape;
    attention_record(x, p, w, ScaleMode::sqrt_dh, tape);
    for (std::size_t t : {0u, 11u, 23u}) {
        Matrix dy(T, d);
        for (std::size_t c = 0; c < d; ++c) dy(t, c) = 1.0;
        const AttentionGrads g = attention_backward(tape, p, dy);
        for (std::size_t j = 0; j < T; ++j) {
            const std::size_t dist = t > j ? t - j : j - t;
            double mag = 0.0;
            for (std::size_t c = 0; c < d; ++c) mag = std::max(mag, std::abs(g.dx(j, c)));
            if (dist > w.half()) EXPECT_EQ(mag, 0.0) << "t=" << t << " j=" << j;
            else EXPECT_GT(mag, 0.0) << "t=" << t << " j=" << j;
        }
    }
}

TEST(AttentionWeights, RowsSumToOne) {
    Rng rng(14);
    const Matrix x = random_matrix(rng, 10, 8, 3.0);
    const AttentionParams p = random_attention(rng, 8, 2);
    AttentionTape tape;
    attention_record(x, p, WindowSpec{3}, ScaleMode::sqrt_dh, tape);
    for (const Vector& row : tape.weights) {
        double s = 0.0;
        for (double v : row) s += v;
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
}
