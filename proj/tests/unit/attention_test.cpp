#include <cmath>

#include <gtest/gtest.h>

#include "dswinir/attention.hpp"
#include "dswinir/oracle/naive.hpp"
#include "test_util.hpp"

using namespace dswinir;
using testutil::rand;

namespace {

// Builds randomized attention parameters under prefix "a".
template <Scalar T = double>
ParamStore<T> store_for(const AttentionConfig& c, std::uint64_t seed, double offset_scale = 0.05) {
    ParamStore<double> st;
    init_attention(st, "a", c, seed);
    checks::randomize(st, seed, false, offset_scale);
    return checks::cast_store<T>(st);
}

template <Scalar T, class F>
Tensor<T> run(const ParamStore<T>& st, const AttentionConfig& c, const Tensor<T>& x, F&& f) {
    Tape<T> t;
    Binder<T> b(t, st);
    return f(t, t.constant(x), bind_attention(b, "a", c)).value();
}

TensorD value_then_output(const ParamStore<double>& st, const TensorD& x) {
    Tape<double> t;
    auto v = channel_linear(t.constant(x), t.constant(st.at("a.wv")), t.constant(st.at("a.bv")));
    return channel_linear(v, t.constant(st.at("a.wo")), t.constant(st.at("a.bo"))).value();
}

}  // namespace

TEST(AttentionConfig, Validation) {
    EXPECT_THROW(checks::small_attention({3}, 6, 4).validate(), ParameterError);    // C % heads
    EXPECT_THROW(checks::small_attention({3, 5}, 6, 3).validate(), ParameterError);  // heads % groups
    EXPECT_THROW(checks::small_attention({4}, 4, 2).validate(), ParameterError);     // even kernel
    EXPECT_THROW(checks::small_attention({1}, 4, 2).validate(), ParameterError);
    EXPECT_NO_THROW(checks::small_attention({3, 5}, 8, 2).validate());
}

TEST(WindowAttention, SingleWindowWithZeroBiasIsGlobalAttention) {
    AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    c.kind = AttentionKind::window;
    c.window_size = 4;
    ParamStore<double> st = store_for(c, 1);
    st.at("a.rel_bias").fill(0.0);
    const TensorD x = rand({1, 4, 4, 4}, 2);
    const TensorD y = run(st, c, x, [](auto&, auto v, const auto& p) { return window_attention_baseline(v, p, 4); });

    // Global attention over all 16 tokens, written out directly.
    Tape<double> t;
    auto proj = [&](const char* w, const char* b) {
        return channel_linear(t.constant(x), t.constant(st.at(w)), t.constant(st.at(b))).value();
    };
    const TensorD q = proj("a.wq", "a.bq"), k = proj("a.wk", "a.bk"), v = proj("a.wv", "a.bv");
    TensorD mid({1, 4, 4, 4});
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t p = 0; p < 16; ++p) {
            std::vector<double> logits(16);
            for (std::size_t u = 0; u < 16; ++u) {
                double s = 0;
                for (std::size_t e = 0; e < 2; ++e) s += q[(h * 2 + e) * 16 + p] * k[(h * 2 + e) * 16 + u];
                logits[u] = s / std::sqrt(2.0);
            }
            const auto a = oracle::naive_softmax(logits);
            for (std::size_t e = 0; e < 2; ++e) {
                double s = 0;
                for (std::size_t u = 0; u < 16; ++u) s += a[u] * v[(h * 2 + e) * 16 + u];
                mid[(h * 2 + e) * 16 + p] = s;
            }
        }
    const TensorD ref = channel_linear(t.constant(mid), t.constant(st.at("a.wo")), t.constant(st.at("a.bo"))).value();
    EXPECT_LE(max_abs_diff(y, ref), 1e-12);
}

TEST(WindowAttention, OnePixelIsValueProjection) {
    AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    c.kind = AttentionKind::window;
    c.window_size = 1;
    const ParamStore<double> st = store_for(c, 3);
    const TensorD x = rand({1, 4, 1, 1}, 4);
    EXPECT_LE(max_abs_diff(run(st, c, x, [](auto&, auto v, const auto& p) { return window_attention_baseline(v, p, 1); }),
                           value_then_output(st, x)),
              1e-14);
}

TEST(WindowAttention, MatchesOracleOn1x4x8x8) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto r = checks::detail::oracle_instance<float>("window_attention", 2 * s);
        EXPECT_LE(r.max_rel_diff, 1e-5) << s;
    }
}

TEST(WindowAttention, IndivisibleExtentIsShapeError) {
    AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    c.kind = AttentionKind::window;
    c.window_size = 4;
    const ParamStore<double> st = store_for(c, 3);
    EXPECT_THROW(run(st, c, rand({1, 4, 6, 8}, 1), [](auto&, auto v, const auto& p) { return window_attention_baseline(v, p, 4); }),
                 ShapeError);
}

TEST(ExtractNeighborhood, CentreCornerInterior) {
    const TensorD X = rand({1, 3, 6, 7}, 5);
    const TensorD c = extract_neighborhood(X, 3, 4, 5);
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(c.at({2, 2, ch}), X.at({0, ch, 3, 4}));
    // interior: direct slicing
    for (std::size_t u = 0; u < 5; ++u)
        for (std::size_t v = 0; v < 5; ++v)
            for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(c.at({u, v, ch}), X.at({0, ch, 1 + u, 2 + v}));
    // corner: row/col 0 replicated into the out-of-range band
    const TensorD k = extract_neighborhood(X, 0, 0, 3);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(k.at({0, 0, ch}), X.at({0, ch, 0, 0}));
        EXPECT_EQ(k.at({0, 2, ch}), X.at({0, ch, 0, 1}));
        EXPECT_EQ(k.at({2, 0, ch}), X.at({0, ch, 1, 0}));
        EXPECT_EQ(k.at({1, 1, ch}), X.at({0, ch, 0, 0}));
    }
    EXPECT_THROW(extract_neighborhood(X, 0, 0, 4), ParameterError);
}

TEST(SlidingAttention, OnePixelIsValueProjection) {
    const AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    const ParamStore<double> st = store_for(c, 6);
    const TensorD x = rand({1, 4, 1, 1}, 7);
    EXPECT_LE(max_abs_diff(run(st, c, x, [](auto&, auto v, const auto& p) { return sliding_window_attention(v, p, 3); }),
                           value_then_output(st, x)),
              1e-14);
}

TEST(SlidingAttention, ConstantInputGivesSoftmaxOfBias) {
    const AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    const ParamStore<double> st = store_for(c, 8);
    const TensorD x({1, 4, 6, 6}, 0.7);
    AttentionTrace<double> trace;
    const TensorD y = run(st, c, x, [&](auto&, auto v, const auto& p) { return sliding_window_attention(v, p, 3, &trace); });
    const TensorD& w = trace.weights.at(0);  // [1, 2, 36, 9]
    const TensorD& bias = st.at("a.g0.bias");
    for (std::size_t h = 0; h < 2; ++h) {
        std::vector<double> b(bias.ptr() + h * 9, bias.ptr() + (h + 1) * 9);
        const auto expect = oracle::naive_softmax(b);
        for (std::size_t i = 1; i < 5; ++i)
            for (std::size_t j = 1; j < 5; ++j)
                for (std::size_t n = 0; n < 9; ++n) EXPECT_NEAR(w.at({0, h, i * 6 + j, n}), expect[n], 1e-12);
    }
    for (std::size_t ch = 0; ch < 4; ++ch)
        for (std::size_t p = 0; p < 36; ++p) EXPECT_NEAR(y[ch * 36 + p], y[ch * 36], 1e-12);
}

TEST(SlidingAttention, MatchesOracleOn1x8x10x10) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto r = checks::detail::oracle_instance<float>("sliding_attention", s);
        EXPECT_LE(r.max_rel_diff, 1e-5) << s;
    }
}

TEST(SlidingAttention, WrongKernelForParams) {
    const AttentionConfig c = checks::small_attention({3}, 4, 2, false);
    const ParamStore<double> st = store_for(c, 8);
    EXPECT_THROW(run(st, c, rand({1, 4, 5, 5}, 1), [](auto&, auto v, const auto& p) { return sliding_window_attention(v, p, 5); }),
                 ParameterError);
}

TEST(PredictOffsets, ZeroInitGivesZeroField) {
    const AttentionConfig c = checks::small_attention({3}, 4, 2, true);
    ParamStore<double> st;
    init_attention(st, "a", c, 9);
    Tape<double> t;
    Binder<double> b(t, st);
    const TensorD f = predict_offsets(t.constant(rand({1, 4, 5, 5}, 1)), *bind_attention(b, "a", c).groups[0].offsets).value();
    ASSERT_EQ(f.shape(), (Shape{1, 18, 5, 5}));
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(f[i], 0.0);
}

TEST(PredictOffsets, ConstantInputGivesConstantInterior) {
    const AttentionConfig c = checks::small_attention({5}, 4, 2, true);
    const ParamStore<double> st = store_for(c, 10, 0.5);
    Tape<double> t;
    Binder<double> b(t, st);
    const TensorD f = predict_offsets(t.constant(TensorD({1, 4, 9, 9}, 0.3)), *bind_attention(b, "a", c).groups[0].offsets).value();
    for (std::size_t ch = 0; ch < 50; ++ch)
        for (std::size_t i = 2; i < 7; ++i)
            for (std::size_t j = 2; j < 7; ++j) EXPECT_NEAR(f.at({0, ch, i, j}), f.at({0, ch, 4, 4}), 1e-14);
}

TEST(PredictOffsets, GradientToQueryMap) {
    for (const auto& r : checks::run_gradchecks("predict_offsets")) EXPECT_LE(r.max_rel_diff, 1e-4) << r.kernel;
}

TEST(DswinAttention, ZeroOffsetsEqualSlidingExactlyInF64) {
    const AttentionConfig c = checks::small_attention({5}, 8, 2, true);
    const ParamStore<double> st = store_for(c, 11);
    const TensorD x = rand({1, 8, 7, 9}, 12);
    const TensorD a = run(st, c, x, [](auto& t, auto v, const auto& p) {
        return dswin_attention_with_offsets(v, p, std::vector<std::optional<Var<double>>>{t.constant(TensorD({1, 50, 7, 9}))});
    });
    const TensorD b = run(st, c, x, [](auto&, auto v, const auto& p) { return sliding_window_attention(v, p, 5); });
    EXPECT_EQ(a, b);
}

TEST(DswinAttention, ZeroOffsetsEqualSlidingInF32) {
    for (std::uint64_t s = 0; s < 5; ++s) EXPECT_LE(checks::props::zero_offset_gap(s), 1e-6);
}

TEST(DswinAttention, UnitRowOffsetEqualsShiftedKeysAndValues) {
    // Every sampling point moved down one row: the result is sliding attention
    // whose keys/values come from maps shifted up by one row (queries fixed).
    const std::size_t C = 4, H = 9, W = 8, k = 3;
    const AttentionConfig c = checks::small_attention({k}, C, 2, true);
    const ParamStore<double> st = store_for(c, 13);
    const TensorD x = rand({1, C, H, W}, 14);
    TensorD off({1, 2 * k * k, H, W});
    for (std::size_t n = 0; n < k * k; ++n)
        for (std::size_t p = 0; p < H * W; ++p) off[(2 * n) * H * W + p] = 1.0;
    const TensorD y = run(st, c, x, [&](auto& t, auto v, const auto& p) {
        return dswin_attention_with_offsets(v, p, std::vector<std::optional<Var<double>>>{t.constant(off)});
    });

    Tape<double> t;
    auto proj = [&](const char* w, const char* b) {
        return channel_linear(t.constant(x), t.constant(st.at(w)), t.constant(st.at(b))).value();
    };
    auto shift_up = [&](const TensorD& m) {
        TensorD s(m.shape());
        for (std::size_t ch = 0; ch < C; ++ch)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) s.at({0, ch, i, j}) = m.at({0, ch, std::min(i + 1, H - 1), j});
        return s;
    };
    const TensorD q = proj("a.wq", "a.bq");
    const TensorD ks = shift_up(proj("a.wk", "a.bk")), vs = shift_up(proj("a.wv", "a.bv"));
    auto mid = neighborhood_attention(t.constant(q), t.constant(ks), t.constant(vs), t.constant(st.at("a.g0.bias")),
                                      std::optional<Var<double>>{}, std::size_t(2), k);
    const TensorD ref = channel_linear(mid, t.constant(st.at("a.wo")), t.constant(st.at("a.bo"))).value();
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t i = 1; i + 2 < H; ++i)
            for (std::size_t j = 1; j + 1 < W; ++j)
                EXPECT_NEAR(y.at({0, ch, i, j}), ref.at({0, ch, i, j}), 1e-12) << i << "," << j;
}

TEST(DswinAttention, MatchesOracleOn1x8x8x8) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto r = checks::detail::oracle_instance<float>("dswin_attention", s);
        EXPECT_LE(r.max_rel_diff, 1e-5) << s;
    }
}

TEST(DswinAttention, OffsetFieldShapeIsChecked) {
    const AttentionConfig c = checks::small_attention({3}, 4, 2, true);
    const ParamStore<double> st = store_for(c, 15);
    EXPECT_THROW(run(st, c, rand({1, 4, 5, 5}, 1),
                     [](auto& t, auto v, const auto& p) {
                         return dswin_attention_with_offsets(v, p, std::vector<std::optional<Var<double>>>{t.constant(TensorD({1, 9, 5, 5}))});
                     }),
                 ShapeError);
}

TEST(DswinAttention, NaiveOracleDegeneratesBitExactly) {
    const AttentionConfig c = checks::small_attention({5}, 8, 2, false);
    const ParamStore<double> st = store_for(c, 16);
    const oracle::AttnW w = checks::attn_w(st, "a", c);
    const TensorD x = rand({1, 8, 6, 7}, 17);
    EXPECT_EQ(oracle::naive_dswin(x, w, {TensorD({1, 50, 6, 7})}), oracle::naive_sliding_attention(x, w));
    EXPECT_LE(max_abs_diff(oracle::naive_sliding_attention(rand({1, 8, 1, 1}, 18), w),
                           value_then_output(st, rand({1, 8, 1, 1}, 18))),
              1e-14);
}

TEST(MsDswin, SingleGroupEqualsDswin) {
    const AttentionConfig c = checks::small_attention({5}, 8, 2, true);
    const ParamStore<double> st = store_for(c, 19, 0.5);
    const TensorD x = rand({1, 8, 6, 6}, 20);
    EXPECT_EQ(run(st, c, x, [](auto&, auto v, const auto& p) { return ms_dswin_attention(v, p); }),
              run(st, c, x, [](auto&, auto v, const auto& p) { return dswin_attention(v, p, 5); }));
}

TEST(MsDswin, ZeroOffsetGroupsEqualPerGroupSliding) {
    const std::size_t C = 8;
    const AttentionConfig c = checks::small_attention({5, 7}, C, 2, true);
    ParamStore<double> st = store_for(c, 21);
    for (const char* n : {"a.g0.off.pw2.w", "a.g0.off.pw2.b", "a.g1.off.pw2.w", "a.g1.off.pw2.b"}) st.at(n).fill(0.0);
    TensorD I({C, C});
    for (std::size_t i = 0; i < C; ++i) I.at({i, i}) = 1.0;
    st.at("a.wo") = I;
    st.at("a.bo").fill(0.0);
    const TensorD x = rand({1, C, 8, 8}, 22);
    const TensorD y = run(st, c, x, [](auto&, auto v, const auto& p) { return ms_dswin_attention(v, p); });

    Tape<double> t;
    auto proj = [&](const char* w, const char* b) {
        return channel_linear(t.constant(x), t.constant(st.at(w)), t.constant(st.at(b)));
    };
    auto q = proj("a.wq", "a.bq"), k = proj("a.wk", "a.bk"), v = proj("a.wv", "a.bv");
    for (std::size_t g = 0; g < 2; ++g) {
        const std::size_t c0 = g * C / 2, c1 = c0 + C / 2, kk = g ? 7 : 5;
        const TensorD ref = neighborhood_attention(slice_channels(q, c0, c1), slice_channels(k, c0, c1), slice_channels(v, c0, c1),
                                                   t.constant(st.at("a.g" + std::to_string(g) + ".bias")), std::optional<Var<double>>{}, std::size_t(1), kk)
                                .value();
        for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_EQ(y[c0 * 64 + i], ref[i]);
    }
}

TEST(MsDswin, ShapeForOddKernelSets) {
    for (const auto& ks : std::vector<std::vector<std::size_t>>{{3}, {3, 5}, {3, 5, 7}, {9, 3}}) {
        const AttentionConfig c = checks::small_attention(ks, 6 * ks.size(), 2 * ks.size(), true);
        const ParamStore<double> st = store_for(c, 23, 0.5);
        const TensorD y = run(st, c, rand({2, 6 * ks.size(), 5, 7}, 24), [](auto&, auto v, const auto& p) { return ms_dswin_attention(v, p); });
        EXPECT_EQ(y.shape(), (Shape{2, 6 * ks.size(), 5, 7}));
    }
}

TEST(MsDswin, MatchesOracle) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        EXPECT_LE(checks::detail::oracle_instance<float>("ms_dswin_attention", s).max_rel_diff, 1e-5) << s;
        EXPECT_LE(checks::detail::oracle_instance<double>("ms_dswin_attention", s).max_rel_diff, 1e-10) << s;
    }
}

TEST(Properties, WeightsSumToOne) { EXPECT_LE(checks::props::weight_sum_error(1), 1e-6); }

TEST(Properties, InteriorShiftEquivariance) { EXPECT_LE(checks::props::shift_equivariance_error(2), 1e-6); }

TEST(Properties, BoundaryBlindness) {
    const auto s = checks::props::boundary_sensitivity(3);
    EXPECT_EQ(s.window, 0.0);
    EXPECT_GT(s.sliding, 0.0);
}
