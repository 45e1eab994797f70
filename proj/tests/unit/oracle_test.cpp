#include <gtest/gtest.h>

#include "dswinir/checks.hpp"
#include "dswinir/oracle/naive.hpp"
#include "test_util.hpp"

using namespace dswinir;
using namespace dswinir::oracle;

TEST(OracleCompare, RelativeDenominatorFloorsAtOne) {
    const TensorD ref({3}, {0.0, 10.0, -200.0});
    const TensorD got({3}, {1e-6, 10.0 + 1e-5, -200.0 + 2e-3});
    const OracleReport r = compare("k", got, ref, 1.01e-5);
    EXPECT_NEAR(r.max_abs_diff, 2e-3, 1e-12);
    EXPECT_NEAR(r.max_rel_diff, 1e-5, 1e-12);
    EXPECT_TRUE(r.pass);
    EXPECT_FALSE(compare("k", got, ref, 5e-6).pass);
}

TEST(OracleCompare, ShapeMismatchFails) {
    EXPECT_FALSE(compare("k", TensorD({2, 2}), TensorD({4}), 1.0).pass);
}

TEST(OracleCompare, TolerancePerPrecision) {
    EXPECT_EQ(tolerance<float>(), 1e-5);
    EXPECT_EQ(tolerance<double>(), 1e-10);
}

TEST(NaiveConv, DeltaKernelShiftsInput) {
    const TensorD x = testutil::rand({1, 1, 5, 5}, 1);
    ConvW c{TensorD({1, 1, 3, 3}), TensorD({1}), 1, 1, 1, 1};
    c.w.at({0, 0, 0, 2}) = 1.0;  // y[i, j] = x[i - 1, j + 1]
    const TensorD y = naive_conv2d(x, c);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double expect = (i >= 1 && j + 1 < 5) ? x.at({0, 0, i - 1, j + 1}) : 0.0;
            EXPECT_EQ(y.at({0, 0, i, j}), expect);
        }
}

TEST(NaiveSoftmax, UniformAndShiftInvariant) {
    for (double v : naive_softmax(std::vector<double>{2.0, 2.0, 2.0, 2.0})) EXPECT_DOUBLE_EQ(v, 0.25);
    const auto a = naive_softmax(std::vector<double>{0.1, -0.4, 1.3});
    const auto b = naive_softmax(std::vector<double>{1000.1, 999.6, 1001.3});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(NaiveBilinear, IntegerCoordinatesAndClamp) {
    const double plane[] = {1, 2, 3, 4};  // 2x2
    EXPECT_DOUBLE_EQ(naive_bilinear(plane, 2, 2, 1, 0), 3.0);
    EXPECT_DOUBLE_EQ(naive_bilinear(plane, 2, 2, 0.5, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(naive_bilinear(plane, 2, 2, -3, 9), 2.0);
}

TEST(FiniteDiff, QuadraticIsExactAndSkipsUnlisted) {
    const TensorD x({3}, {1.0, -2.0, 0.5});
    auto f = [](const TensorD& v) { return v[0] * v[0] + 3 * v[1] * v[2]; };
    const TensorD g = finite_diff(f, x, 1e-3, {0, 1});
    EXPECT_NEAR(g[0], 2.0, 1e-10);
    EXPECT_NEAR(g[1], 1.5, 1e-10);
    EXPECT_EQ(g[2], 0.0);
}

class OracleSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(OracleSuite, KernelMatchesReference) {
    for (const auto& r : checks::run_oracle_suite(3, GetParam())) {
        if (r.kernel.rfind(GetParam() + "/", 0) != 0) continue;
        EXPECT_TRUE(r.pass) << r.kernel << " max_rel " << r.max_rel_diff;
        EXPECT_LE(r.max_rel_diff, r.kernel.ends_with("/f32") ? tolerance<float>() : tolerance<double>());
    }
}

INSTANTIATE_TEST_SUITE_P(AllKernels, OracleSuite, ::testing::ValuesIn(checks::oracle_kernels()),
                         [](const auto& info) { return info.param; });
