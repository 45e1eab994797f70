#include <cmath>

#include <gtest/gtest.h>

#include "dswinir/nn.hpp"
#include "dswinir/oracle/naive.hpp"
#include "test_util.hpp"

using namespace dswinir;
using testutil::rand;

namespace {

TensorD conv(const TensorD& x, const TensorD& w, const TensorD* b, Conv2dOptions o) {
    Tape<double> t;
    std::optional<Var<double>> bv;
    if (b) bv = t.constant(*b);
    return conv2d(t.constant(x), Conv2dParams<double>{t.constant(w), bv, o}).value();
}

}  // namespace

TEST(Conv2d, IdentityPointwise) {
    const TensorD x = rand({2, 3, 4, 5}, 1);
    TensorD w({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
    const TensorD b({3});
    EXPECT_EQ(conv(x, w, &b, {}), x);
}

TEST(Conv2d, DepthwiseBoxOfDeltaClipsAtBorder) {
    TensorD x({1, 1, 5, 5});
    x.at({0, 0, 0, 1}) = 1.0;  // on the top edge
    const TensorD w({1, 1, 3, 3}, 1.0);
    const TensorD y = conv(x, w, nullptr, Conv2dOptions{1, 1, 1, 1});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y.at({0, 0, i, j}), (i <= 1 && j <= 2) ? 1.0 : 0.0) << i << "," << j;
}

TEST(Conv2d, MatchesOracleOn2x3x8x8) {
    const TensorF x = rand<float>({2, 3, 8, 8}, 2);
    const TensorF w = rand<float>({4, 3, 3, 3}, 3), b = rand<float>({4}, 4);
    Tape<float> t;
    const TensorF y = conv2d(t.constant(x), Conv2dParams<float>{t.constant(w), t.constant(b), {1, 1, 1, 1}}).value();
    const auto r = oracle::compare("conv2d", y,
                                   oracle::naive_conv2d(x.cast<double>(), {w.cast<double>(), b.cast<double>(), 1, 1, 1, 1}), 1e-6);
    EXPECT_TRUE(r.pass) << r.max_rel_diff;
}

TEST(Conv2d, StrideDilationGroupsShapes) {
    const TensorD y = conv(rand({1, 4, 9, 9}, 5), rand({6, 2, 3, 3}, 6), nullptr, Conv2dOptions{2, 2, 2, 2});
    EXPECT_EQ(y.shape(), (Shape{1, 6, 5, 5}));
}

TEST(Conv2d, ShapeErrors) {
    EXPECT_THROW(conv(rand({1, 3, 4, 4}, 1), rand({2, 2, 3, 3}, 1), nullptr, {}), ShapeError);
    EXPECT_THROW(conv(rand({1, 2, 2, 2}, 1), rand({2, 2, 3, 3}, 1), nullptr, {}), ShapeError);
    const TensorD bad_b({3});
    EXPECT_THROW(conv(rand({1, 2, 4, 4}, 1), rand({2, 2, 1, 1}, 1), &bad_b, {}), ShapeError);
}

TEST(Linear, IdentityWeight) {
    const TensorD x = rand({2, 3}, 7);
    TensorD I({3, 3});
    for (std::size_t i = 0; i < 3; ++i) I.at({i, i}) = 1;
    Tape<double> t;
    EXPECT_EQ(linear(t.constant(x), t.constant(I), t.constant(TensorD({3}))).value(), x);
}

TEST(Linear, HandExample) {
    Tape<double> t;
    EXPECT_EQ(linear(t.constant(TensorD({2}, {1, 2})), t.constant(TensorD({2, 1}, {1, 1}))).value(), TensorD({1}, {3}));
}

TEST(Linear, MatchesMatmulOnFlattenedBatch) {
    const TensorD x = rand({2, 3, 4}, 8), w = rand({4, 5}, 9);
    Tape<double> t;
    const TensorD y = linear(t.constant(x), t.constant(w)).value();
    EXPECT_LE(max_abs_diff(y.reshape({6, 5}), matmul(x.reshape({6, 4}), w)), 1e-15);
}

TEST(Softmax, Uniform) {
    Tape<double> t;
    const TensorD y = softmax_lastdim(t.constant(TensorD({3}, 0.0))).value();
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], 1.0 / 3.0);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    Tape<float> t;
    const TensorF y = softmax_lastdim(t.constant(TensorF({2}, {1000.0f, 0.0f}))).value();
    EXPECT_EQ(y[0], 1.0f);
    EXPECT_GE(y[1], 0.0f);
    EXPECT_LT(y[1], 1e-30f);
}

TEST(Softmax, RandomLength9SumsToOneAndMatchesFormula) {
    const TensorF x = rand<float>({9}, 10, -3, 3);
    Tape<float> t;
    const TensorF y = softmax_lastdim(t.constant(x)).value();
    double s = 0, z = 0;
    for (std::size_t i = 0; i < 9; ++i) z += std::exp(double(x[i]));
    for (std::size_t i = 0; i < 9; ++i) {
        s += y[i];
        EXPECT_NEAR(y[i], std::exp(double(x[i])) / z, 1e-7);
    }
    EXPECT_NEAR(s, 1.0, 1e-7);
}

TEST(Gelu, ZeroAndOne) {
    Tape<double> t;
    const TensorD y = gelu(t.constant(TensorD({2}, {0.0, 1.0}))).value();
    EXPECT_EQ(y[0], 0.0);
    const double c = std::sqrt(2.0 / M_PI);
    EXPECT_NEAR(y[1], 0.5 * (1 + std::tanh(c * (1 + 0.044715))), 1e-15);
    EXPECT_NEAR(y[1], 0.84119, 1e-5);
}

TEST(Layernorm, ConstantChannelVectorGivesZeros) {
    TensorD x({1, 4, 2, 2}, 3.5);
    Tape<double> t;
    const TensorD y = layernorm(t.constant(x), t.constant(TensorD({4}, 1.0)), t.constant(TensorD({4}, 0.0))).value();
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Layernorm, MatchesOracleAndRejectsBadEps) {
    const TensorD x = rand({2, 5, 3, 3}, 11), g = rand({5}, 12), b = rand({5}, 13);
    Tape<double> t;
    const TensorD y = layernorm(t.constant(x), t.constant(g), t.constant(b)).value();
    EXPECT_LE(max_abs_diff(y, oracle::naive_layernorm(x, g, b)), 1e-12);
    EXPECT_THROW(layernorm(t.constant(x), t.constant(g), t.constant(b), 0.0), ParameterError);
}

TEST(Bilinear, IntegerCoordsAreExact) {
    const TensorD F = rand({1, 2, 4, 5}, 14);
    Tape<double> t;
    const TensorD y = bilinear_sample(t.constant(F), t.constant(TensorD({1, 1, 2}, {2.0, 3.0}))).value();
    EXPECT_EQ(y.at({0, 0, 0}), F.at({0, 0, 2, 3}));
    EXPECT_EQ(y.at({0, 1, 0}), F.at({0, 1, 2, 3}));
}

TEST(Bilinear, CentreOf2x2IsMean) {
    const TensorD F({1, 1, 2, 2}, {1, 2, 3, 5});
    Tape<double> t;
    const TensorD y = bilinear_sample(t.constant(F), t.constant(TensorD({1, 1, 2}, {0.5, 0.5}))).value();
    EXPECT_DOUBLE_EQ(y[0], (1 + 2 + 3 + 5) / 4.0);
}

TEST(Bilinear, OutOfRangeReplicatesBorder) {
    const TensorD F({1, 1, 2, 2}, {1, 2, 3, 5});
    Tape<double> t;
    const TensorD y =
        bilinear_sample(t.constant(F), t.constant(TensorD({1, 3, 2}, {-3.0, -2.0, 7.5, 0.0, 0.5, 9.0}))).value();
    EXPECT_DOUBLE_EQ(y[0], 1.0);
    EXPECT_DOUBLE_EQ(y[1], 3.0);
    EXPECT_DOUBLE_EQ(y[2], 3.5);
}

TEST(Bilinear, CoordGradientAt1p3_2p7) {
    const TensorD F = rand({1, 2, 4, 5}, 15);
    auto f = [&](Tape<double>& t, Var<double> c) { return sum(bilinear_sample(t.constant(F), c)); };
    const auto r = grad_check(f, TensorD({1, 1, 2}, {1.3, 2.7}), 1e-4);
    EXPECT_LE(r.max_rel_err, 1e-5);
}

TEST(Layout, DepthToSpaceAndBack) {
    TensorD x({1, 4, 1, 1}, {1, 2, 3, 4});
    Tape<double> t;
    const TensorD y = depth_to_space(t.constant(x), 2).value();
    EXPECT_EQ(y, TensorD({1, 1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_THROW(depth_to_space(t.constant(TensorD({1, 3, 1, 1})), 2), ShapeError);
}

TEST(Layout, PadReplicateThenCropIsIdentity) {
    const TensorD x = rand({1, 2, 3, 5}, 16);
    Tape<double> t;
    const TensorD p = pad_replicate(t.constant(x), 5, 3).value();
    ASSERT_EQ(p.shape(), (Shape{1, 2, 8, 8}));
    EXPECT_EQ(p.at({0, 1, 7, 7}), x.at({0, 1, 2, 4}));
    EXPECT_EQ(crop(t.constant(p), 3, 5).value(), x);
}

TEST(Layout, ConcatAndSlice) {
    const TensorD a = rand({1, 2, 2, 2}, 17), b = rand({1, 3, 2, 2}, 18);
    Tape<double> t;
    auto c = concat_channels(std::vector<Var<double>>{t.constant(a), t.constant(b)});
    EXPECT_EQ(c.shape(), (Shape{1, 5, 2, 2}));
    EXPECT_EQ(slice_channels(c, 2, 5).value(), b);
    EXPECT_THROW(slice_channels(c, 3, 6), ShapeError);
}

TEST(OracleAgreement, Conv2dMatmulSoftmaxOver50Seeds) {
    for (const char* k : {"conv2d", "matmul", "softmax"}) {
        for (std::uint64_t s = 0; s < 50; ++s) {
            const auto r = checks::detail::oracle_instance<float>(k, 1000 + s);
            EXPECT_LE(r.max_rel_diff, 1e-6) << k << " seed " << s;
        }
    }
}
