#include <gtest/gtest.h>

#include <cmath>

#include "speechformer/checks.hpp"
#include "speechformer/complexity.hpp"
#include "speechformer/model.hpp"

using namespace speechformer;

namespace {

ModelConfig toy_s() {
    ModelConfig c = ModelConfig::speechformer_s(16);
    c.num_heads = 4;
    return c;
}

BlockWeights zero_block(std::size_t d, std::size_t heads) {
    BlockWeights w;
    w.attn = {Matrix(d, d), Matrix(d, d), Matrix(d, d), heads};
    w.norm1_gain = Vector(d, 1.0);
    w.norm1_bias = Vector(d, 0.0);
    w.ffn_in = Matrix(d, d);
    w.ffn_in_bias = Vector(d, 0.0);
    w.ffn_out = Matrix(d, d);
    w.ffn_out_bias = Vector(d, 0.0);
    w.norm2_gain = Vector(d, 1.0);
    w.norm2_bias = Vector(d, 0.0);
    return w;
}

} // namespace

TEST(Init, SameSeedSameChecksum) {
    const ModelConfig c = toy_s();
    EXPECT_EQ(weights_checksum(c, init_model(c, 3)), weights_checksum(c, init_model(c, 3)));
}

TEST(Init, DifferentSeedsDiffer) {
    const ModelConfig c = toy_s();
    EXPECT_NE(weights_checksum(c, init_model(c, 3)), weights_checksum(c, init_model(c, 4)));
}

TEST(Init, GainsOneBiasesZeroWeightsBounded) {
    const ModelConfig c = toy_s();
    const ModelWeights w = init_model(c, 9);
    for_each_tensor(c, w, [](const std::string& name, TensorKind kind, std::span<const double> v,
                             std::size_t rows, std::size_t) {
        for (double x : v) {
            switch (kind) {
            case TensorKind::norm_gain: EXPECT_EQ(x, 1.0) << name; break;
            case TensorKind::bias:
            case TensorKind::norm_bias: EXPECT_EQ(x, 0.0) << name; break;
            case TensorKind::weight: EXPECT_LE(std::abs(x), 1.0 / std::sqrt(double(rows))) << name; break;
            }
        }
    });
}

TEST(Init, InvalidConfigRejected) {
    ModelConfig c = toy_s();
    c.num_heads = 5;
    EXPECT_THROW(init_model(c, 0), ConfigError);
    c = toy_s();
    c.blocks = {2, 2, 4};
    EXPECT_THROW(init_model(c, 0), ConfigError);
}

TEST(Init, ScalarCountMatchesComplexityModel) {
    for (const ModelConfig& c : {ModelConfig::speechformer_s(512), ModelConfig::speechformer_b(512),
                                 ModelConfig::baseline(128)}) {
        EXPECT_EQ(count_scalars(c, allocate_weights(c)), count_params(c).total_params());
    }
}

TEST(TensorNames, TraversalOrder) {
    const ModelConfig c = toy_s();
    const ModelWeights w = allocate_weights(c);
    std::vector<std::string> names;
    for_each_tensor(c, w, [&](const std::string& n, TensorKind, std::span<const double>,
                                                std::size_t, std::size_t) { names.push_back(n); });
    ASSERT_EQ(names.size(), 12u * 11u + 3u * 2u + 2u);
    EXPECT_EQ(names.front(), "frame.block0.attn.wq");
    EXPECT_EQ(names[11], "frame.block1.attn.wq");
    EXPECT_EQ(names[22], "merge0.weight");
    EXPECT_EQ(names[23], "merge0.bias");
    EXPECT_EQ(names.back(), "head.bias");
}

TEST(Blocks, ZeroBranchesAreIdentity) {
    Rng rng(20);
    const ModelConfig c = toy_s();
    const Matrix x = random_matrix(rng, 9, 16);
    const BlockWeights w = zero_block(16, 4);
    EXPECT_EQ(speechformer_block(x, w, WindowSpec{3}, c), x);
    EXPECT_EQ(transformer_block(x, w, c), x);
}

TEST(Blocks, WideWindowMatchesTransformerBlock) {
    Rng rng(21);
    const ModelConfig c = toy_s();
    const Matrix x = random_matrix(rng, 10, 16);
    const BlockWeights w = detail::random_block(rng, 16, 4, 16);
    EXPECT_LT(max_abs_diff(speechformer_block(x, w, WindowSpec{20}, c), transformer_block(x, w, c)), 1e-12);
}

TEST(Blocks, ShapeErrors) {
    const ModelConfig c = toy_s();
    EXPECT_THROW(transformer_block(Matrix(4, 8), zero_block(16, 4), c), ShapeError);
    EXPECT_THROW(merging_block(Matrix(4, 8), 2, Matrix(16, 16), Vector(16, 0.0)), ShapeError);
}

TEST(Blocks, TwelveBlockStackKeepsShape) {
    const ModelConfig c = ModelConfig::baseline(512);
    const ModelWeights w = init_model(c, 1);
    Rng rng(22);
    Matrix x = random_matrix(rng, 651, 512);
    for (const BlockWeights& b : w.stages[0]) x = transformer_block(x, b, c);
    EXPECT_EQ(x.rows(), 651u);
    EXPECT_EQ(x.cols(), 512u);
    EXPECT_TRUE(all_finite(x.values()));
}

TEST(Merging, IdentityWithUnitScale) {
    Rng rng(23);
    const Matrix x = random_matrix(rng, 6, 4);
    EXPECT_EQ(merging_block(x, 1, Matrix::identity(4), Vector(4, 0.0)), x);
}

TEST(Merging, IemocapFrameMerge) {
    const Matrix out = merging_block(Matrix(651, 32, 1.0), 5, Matrix(32, 32), Vector(32, 0.0));
    EXPECT_EQ(out.rows(), 131u);
    EXPECT_EQ(out.cols(), 32u);
}

TEST(Merging, WordToUtteranceWidens) {
    const Matrix out = merging_block(Matrix(27, 512, 0.5), 4, Matrix(512, 1024), Vector(1024, 0.0));
    EXPECT_EQ(out.rows(), 7u);
    EXPECT_EQ(out.cols(), 1024u);
}

TEST(Forward, SpeechFormerSShapes) {
    const ModelConfig c = ModelConfig::speechformer_s(512);
    Rng rng(24);
    const ForwardTrace t = forward(random_matrix(rng, 651, 512), init_model(c, 0), c, derive_schedule());
    using S = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(t.stage_shapes, (std::vector<S>{{651, 512}, {131, 512}, {27, 512}, {7, 512}}));
    EXPECT_EQ(t.logits.size(), 4u);
    for (double v : t.logits) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, SpeechFormerBWidensLastStage) {
    ModelConfig c = ModelConfig::speechformer_b(64);
    Rng rng(25);
    const ForwardTrace t = forward(random_matrix(rng, 651, 64), init_model(c, 0), c, derive_schedule());
    EXPECT_EQ(t.stage_shapes.back(), (std::pair<std::size_t, std::size_t>{7, 128}));
}

TEST(Forward, SingleFrame) {
    const ModelConfig c = toy_s();
    Rng rng(26);
    const ForwardTrace t = forward(random_matrix(rng, 1, 16), init_model(c, 0), c, derive_schedule());
    for (const auto& s : t.stage_shapes) EXPECT_EQ(s.first, 1u);
    EXPECT_EQ(t.logits.size(), 4u);
}

TEST(Forward, Deterministic) {
    const ModelConfig c = toy_s();
    Rng rng(27);
    const Matrix x = random_matrix(rng, 40, 16);
    const Vector a = forward(x, init_model(c, 5), c, derive_schedule()).logits;
    const Vector b = forward(x, init_model(c, 5), c, derive_schedule()).logits;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}

TEST(Forward, InputErrors) {
    const ModelConfig c = toy_s();
    const ModelWeights w = init_model(c, 0);
    EXPECT_THROW(forward(Matrix(10, 8), w, c, derive_schedule()), ShapeError);
    EXPECT_THROW(forward(Matrix(0, 16), w, c, derive_schedule()), InvalidArgument);
}

TEST(Forward, OddWidthRejectedByPositionalEncoding) {
    ModelConfig c = ModelConfig::speechformer_s(15);
    c.num_heads = 5;
    EXPECT_THROW(forward(Matrix(4, 15), init_model(c, 0), c, derive_schedule()), InvalidArgument);
}

TEST(Forward, StructuralDegeneracyMatchesBaseline) {
    // unit merges and windows wider than the input turn the hierarchy into a
    // plain 12-block encoder
    const std::size_t d = 16, T = 30;
    const ModelConfig sf = toy_s();
    ModelConfig base = ModelConfig::baseline(d);
    base.num_heads = 4;
    ModelWeights ws = allocate_weights(sf);
    Rng rng(28);
    randomize_weights(sf, ws, rng);
    for (auto& m : ws.merges) {
        m.weight = Matrix::identity(d);
        std::fill(m.bias.begin(), m.bias.end(), 0.0);
    }
    ModelWeights wb = allocate_weights(base);
    wb.stages[0].clear();
    for (const auto& stage : ws.stages)
        for (const auto& b : stage) wb.stages[0].push_back(b);
    wb.head = ws.head;

    StageSchedule flat;
    flat.hop_ms = {10, 10, 10};
    flat.window_tokens = {2 * T, 2 * T, 2 * T};
    flat.merge_scales = {1, 1, 1};
    const Matrix x = random_matrix(rng, T, d);
    const Vector a = forward(x, ws, sf, flat).logits;
    const Vector b = forward(x, wb, base, flat).logits;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}
