#include <gtest/gtest.h>

#include "dswinir/model.hpp"
#include "test_util.hpp"

using namespace dswinir;
using testutil::rand;

TEST(ModelConfig, Validation) {
    ModelConfig c;
    EXPECT_NO_THROW(c.validate());
    ModelConfig bad = c;
    bad.heads[1] = 3;  // 16 channels / 3 heads
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.kernel_sizes[0] = {4};
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.stage_depths[2] = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.base_channels = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelConfig, FullSizeLayout) {
    const ModelConfig p = ModelConfig::full_size();
    EXPECT_EQ(p.base_channels, 48u);
    EXPECT_EQ(p.stage_depths, (std::array<std::size_t, 4>{4, 6, 6, 8}));
    EXPECT_NO_THROW(p.validate());
}

TEST(BuildModel, DeterministicPerSeed) {
    const ModelConfig c;
    const Model<float> a = build_model<float>(c, 3), b = build_model<float>(c, 3), d = build_model<float>(c, 4);
    ASSERT_EQ(a.params.size(), b.params.size());
    bool any_diff = false;
    for (const auto& [name, t] : a.params) {
        EXPECT_EQ(t, b.params.at(name)) << name;
        if (!(t == d.params.at(name))) any_diff = true;
    }
    EXPECT_TRUE(any_diff);
}

TEST(BuildModel, TinyRuns64x64Forward) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 0);
    const TensorF x = rand<float>({1, 3, 64, 64}, 1, 0, 1);
    const TensorF y = infer(m, x);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(y.all_finite());
}

TEST(BuildModel, OffsetsAtInitMatchSlidingOnlyModel) {
    EXPECT_EQ(checks::props::fresh_model_gap(0, 32), 0.0);
    EXPECT_EQ(checks::props::fresh_model_gap(5, 24), 0.0);
}

TEST(BuildModel, OffsetHeadsAreZeroInitialized) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 2);
    std::size_t n = 0;
    for (const auto& [name, t] : m.params)
        if (checks::ends_with(name, ".off.pw2.w") || checks::ends_with(name, ".off.pw2.b")) {
            ++n;
            for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(t[i], 0.0f) << name;
        }
    EXPECT_GT(n, 0u);
}

TEST(Forward, ZeroHeadIsIdentity) {
    Model<double> m = build_model<double>(ModelConfig::tiny(), 1);
    m.params.at("head.w").fill(0.0);
    m.params.at("head.b").fill(0.0);
    const TensorD x = rand({2, 3, 16, 24}, 2, 0, 1);
    EXPECT_EQ(infer(m, x), x);
}

TEST(Forward, AutoPadKeepsExtents) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 1);
    for (std::size_t hw : {64u, 72u, 21u}) {
        const TensorF x = rand<float>({1, 3, hw, hw + 3}, hw, 0, 1);
        EXPECT_EQ(infer(m, x).shape(), x.shape()) << hw;
    }
}

TEST(Forward, UnpaddedIndivisibleIsShapeError) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 1);
    Tape<float> t;
    Binder<float> b(t, m.params);
    EXPECT_THROW(model_forward(b, m.config, t.constant(TensorF({1, 3, 12, 16}))), ShapeError);
    EXPECT_THROW(model_forward(b, m.config, t.constant(TensorF({1, 4, 16, 16}))), ShapeError);
}

TEST(Forward, Deterministic) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 7);
    const TensorF x = rand<float>({1, 3, 32, 32}, 3, 0, 1);
    EXPECT_EQ(infer(m, x), infer(m, x));
}

TEST(Forward, TraceRecordsStageExtentsAndOffsets) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 7);
    ModelTrace<float> tr;
    infer(m, rand<float>({1, 3, 40, 48}, 3, 0, 1), &tr);
    for (std::size_t s = 0; s < kStages; ++s) EXPECT_EQ(tr.extents[s], (std::pair<std::size_t, std::size_t>{40u >> s, 48u >> s}));
    const auto& enc1 = tr.blocks.at("enc1.b0");
    ASSERT_EQ(enc1.offsets.size(), 2u);
    EXPECT_EQ(enc1.offsets[1].shape(), (Shape{1, 98, 20, 24}));
}

TEST(Counting, SinglePointwiseConvClosedForm) {
    EXPECT_EQ(conv_macs(2, 3, 1, 1, 4, 4), 96u);
    ParamStore<double> st;
    init_conv(st, "c", 2, 3, 1, 1, 0);
    EXPECT_EQ(st.total_numel(), 9u);
}

TEST(Counting, TinyMatchesHandSummation) {
    const Model<float> m = build_model<float>(ModelConfig::tiny(), 0);
    for (auto [H, W] : std::vector<std::pair<std::size_t, std::size_t>>{{64, 64}, {72, 40}}) {
        const Counts a = count_params_flops(m.config, H, W), b = checks::hand_count(m, H, W);
        EXPECT_EQ(a.params, b.params);
        EXPECT_EQ(a.macs, b.macs);
        EXPECT_EQ(a.conv_macs, b.conv_macs);
    }
}

TEST(Counting, AblationVariantsMatchHandSummation) {
    ModelConfig base;
    for (const bool win : {false, true}) {
        ModelConfig c = base;
        if (win) {
            c.attention = AttentionKind::window;
            c.offsets_enabled = false;
        } else {
            c.msg_ffn_enabled = false;
            c.single_kernel_override = 9;
        }
        const Model<float> m = build_model<float>(c, 0);
        const Counts a = count_params_flops(c, 64, 64), b = checks::hand_count(m, 64, 64);
        EXPECT_EQ(a.params, b.params) << win;
        EXPECT_EQ(a.macs, b.macs) << win;
    }
}

TEST(Counting, ConvMacsScaleByFourWithArea) {
    const ModelConfig c;
    EXPECT_EQ(count_params_flops(c, 128, 96).conv_macs, 4 * count_params_flops(c, 64, 48).conv_macs);
    EXPECT_EQ(count_params_flops(c, 128, 96).params, count_params_flops(c, 64, 48).params);
}
