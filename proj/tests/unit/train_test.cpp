#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "dswinir/train.hpp"
#include "test_util.hpp"

using namespace dswinir;
using testutil::rand;

namespace {

RunConfig quick_config(std::size_t steps = 3) {
    RunConfig c;
    c.train.patch = 32;
    c.train.batch = 1;
    c.train.total_steps = steps;
    c.train.eval_every = steps;
    c.train.holdout_patches = 2;
    c.train.lr0 = 2e-3;
    return c;
}

}  // namespace

TEST(L1Loss, IdenticalIsZero) {
    Tape<double> t;
    const TensorD x = rand({2, 5}, 1);
    EXPECT_EQ(l1_loss(t.constant(x), t.constant(x)).value()[0], 0.0);
}

TEST(L1Loss, OffsetByOneIsOne) {
    Tape<double> t;
    const TensorD x = rand({3, 4}, 2);
    EXPECT_DOUBLE_EQ(l1_loss(t.constant(ew(EwOp::add, x, 1.0)), t.constant(x)).value()[0], 1.0);
}

TEST(L1Loss, GradientAwayFromTies) {
    const TensorD target = rand({2, 6}, 3);
    TensorD pred = target;
    Rng r(4, "ties");
    for (std::size_t i = 0; i < pred.numel(); ++i) pred[i] += (i % 2 ? 1 : -1) * r.uniform(0.1, 0.5);
    auto f = [&](Tape<double>& t, Var<double> v) { return l1_loss(v, t.constant(target)); };
    EXPECT_LE(grad_check(f, pred, 1e-3).max_rel_err, 1e-6);
}

TEST(CosineLr, Endpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 2e-4, 1e-6), 2e-4);
    EXPECT_NEAR(cosine_lr(100, 100, 2e-4, 1e-6), 1e-6, 1e-18);
    EXPECT_NEAR(cosine_lr(50, 100, 2e-4, 1e-6), (2e-4 + 1e-6) / 2, 1e-18);
    EXPECT_THROW(cosine_lr(101, 100, 2e-4, 1e-6), ParameterError);
    EXPECT_THROW(cosine_lr(0, 0, 2e-4, 1e-6), ParameterError);
}

TEST(TrainConfig, DefaultLearningRate) { EXPECT_DOUBLE_EQ(TrainConfig{}.lr0, 2e-4); }

TEST(AdamW, ZeroGradZeroDecayKeepsParams) {
    ParamStore<double> p;
    p.add("w", rand({3}, 5));
    const TensorD before = p.at("w");
    AdamState<double> s;
    for (int i = 0; i < 3; ++i) adamw_step(p, {{"w", TensorD({3})}}, s, AdamHyper{0.1, 0.9, 0.999, 1e-8, 0.0});
    EXPECT_EQ(p.at("w"), before);
}

TEST(AdamW, FirstStepMovesByLr) {
    ParamStore<double> p;
    p.add("w", TensorD({1}, {1.0}));
    AdamState<double> s;
    const AdamHyper h{0.1, 0.9, 0.999, 1e-8, 0.0};
    adamw_step(p, {{"w", TensorD({1}, {1.0})}}, s, h);
    // m̂ = g, v̂ = g² at t = 1, so the step is lr·g/(|g| + eps).
    const double m_hat = (1 - h.beta1) * 1.0 / (1 - h.beta1), v_hat = (1 - h.beta2) * 1.0 / (1 - h.beta2);
    EXPECT_NEAR(p.at("w")[0], 1.0 - h.lr * m_hat / (std::sqrt(v_hat) + h.eps), 1e-15);
    EXPECT_NEAR(p.at("w")[0], 0.9, 1e-6);
}

TEST(AdamW, DecoupledDecayAlone) {
    ParamStore<double> p;
    p.add("w", TensorD({2}, {2.0, -1.0}));
    AdamState<double> s;
    const AdamHyper h{0.05, 0.9, 0.999, 1e-8, 0.1};
    for (int i = 0; i < 4; ++i) adamw_step(p, {{"w", TensorD({2})}}, s, h);
    const double f = std::pow(1 - h.lr * h.weight_decay, 4);
    EXPECT_NEAR(p.at("w")[0], 2.0 * f, 1e-14);
    EXPECT_NEAR(p.at("w")[1], -1.0 * f, 1e-14);
}

TEST(AdamW, MismatchIsOptimizerError) {
    ParamStore<double> p;
    p.add("w", TensorD({2}));
    AdamState<double> s;
    const AdamHyper h{0.1, 0.9, 0.999, 1e-8, 0.0};
    EXPECT_THROW(adamw_step(p, {{"v", TensorD({2})}}, s, h), OptimizerError);
    EXPECT_THROW(adamw_step(p, {{"w", TensorD({3})}}, s, h), OptimizerError);
    EXPECT_THROW(adamw_step(p, {}, s, h), OptimizerError);
}

TEST(Degrade, ZeroSigmaIsIdentity) {
    DegradationSpec d;
    d.sigma = 0;
    Rng r(1, "noise");
    const TensorF x = rand<float>({3, 8, 8}, 6, 0, 1);
    EXPECT_EQ(degrade(x, d, r), x);
}

TEST(Degrade, Sigma25StdOnMidGray) {
    // At 0.5 ± 5σ nothing clips, so the measured spread is the pre-clamp one.
    const TensorD gray({4, 500, 500}, 0.5);
    DegradationSpec d;
    Rng r(7, "noise");
    const TensorD y = degrade(gray, d, r);
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        s += y[i] - 0.5;
        s2 += (y[i] - 0.5) * (y[i] - 0.5);
    }
    const double n = double(y.numel()), mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    EXPECT_NEAR(sd, 25.0 / 255.0, 0.05 * 25.0 / 255.0);
}

TEST(Degrade, SameSeedSameImage) {
    const TensorF x = rand<float>({3, 16, 16}, 8, 0, 1);
    for (const char* kind : {"gaussian", "rain"}) {
        DegradationSpec d;
        d.kind = kind;
        Rng a(3, "noise"), b(3, "noise"), c(4, "noise");
        const TensorF ya = degrade(x, d, a);
        EXPECT_EQ(ya, degrade(x, d, b)) << kind;
        EXPECT_FALSE(ya == degrade(x, d, c)) << kind;
        EXPECT_FALSE(ya == x) << kind;
    }
}

TEST(Degrade, ComposeAppliesStepsInOrder) {
    DegradationSpec g, rain, comp;
    rain.kind = "rain";
    comp.kind = "compose";
    comp.steps = {rain, g};
    const TensorF x = rand<float>({3, 16, 16}, 9, 0, 1);
    Rng a(5, "noise"), b(5, "noise");
    const TensorF expect = degrade(degrade(x, rain, b), g, b);
    EXPECT_EQ(degrade(x, comp, a), expect);
    DegradationSpec bad;
    bad.kind = "snow";
    EXPECT_THROW(degrade(x, bad, a), ConfigError);
}

TEST(Metrics, IdenticalImages) {
    const TensorF x = rand<float>({3, 16, 16}, 10, 0, 1);
    EXPECT_EQ(psnr(x, x), std::numeric_limits<double>::infinity());
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Metrics, MseOneHundredthIsTwentyDb) {
    const TensorD a({100}, 0.5), b({100}, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Metrics, NegatedZeroMeanPatchSsimNearMinusOne) {
    TensorD a({1, 32, 32});
    for (std::size_t i = 0; i < 32; ++i)
        for (std::size_t j = 0; j < 32; ++j) a.at({0, i, j}) = (i + j) % 2 ? 0.3 : -0.3;
    EXPECT_LT(ssim(a, ew(EwOp::neg, a)), -0.99);
}

TEST(Dataset, LoadsFixturesAndHoldsOutLast) {
    const Dataset d = load_dataset(testutil::fixtures());
    EXPECT_EQ(d.train.size(), 7u);
    EXPECT_EQ(d.names.back(), "clean_07.ppm");
    EXPECT_EQ(d.holdout.width, 96u);
}

TEST(Dataset, MissingOrEmptyFolderIsDataError) {
    EXPECT_THROW(load_dataset("/nonexistent/folder"), DataError);
    const auto empty = std::filesystem::temp_directory_path() / "dswinir_empty_ds";
    std::filesystem::create_directories(empty);
    EXPECT_THROW(load_dataset(empty), DataError);
}

TEST(Trainer, PatchLargerThanImageIsDataError) {
    RunConfig c = quick_config();
    c.train.patch = 128;
    EXPECT_THROW(Trainer<float>(c, load_dataset(testutil::fixtures())), DataError);
}

TEST(Trainer, ZeroLearningRateLeavesParamsUntouched) {
    Trainer<float> tr(quick_config(), load_dataset(testutil::fixtures()));
    const ParamStore<float> before = tr.model().params;
    for (int i = 0; i < 2; ++i) tr.step(0.0);
    for (const auto& [name, t] : before) EXPECT_EQ(t, tr.model().params.at(name)) << name;
}

TEST(Trainer, SameSeedSameTrajectory) {
    const Dataset ds = load_dataset(testutil::fixtures());
    std::ostringstream a, b;
    Trainer<float> ta(quick_config(), ds), tb(quick_config(), ds);
    run_training(ta, &a);
    run_training(tb, &b);
    auto strip = [](const std::string& log) {
        std::string out;
        std::istringstream in(log);
        for (std::string line; std::getline(in, line);) {
            Json j = Json::parse(line);
            j.erase("wall_ms");
            out += j.dump() + "\n";
        }
        return out;
    };
    EXPECT_EQ(strip(a.str()), strip(b.str()));
    const std::string log = a.str();
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
}

TEST(Trainer, BatchesDependOnlyOnSeedAndStep) {
    const Dataset ds = load_dataset(testutil::fixtures());
    Trainer<float> a(quick_config(), ds), b(quick_config(), ds);
    b.step();
    EXPECT_EQ(a.batch(5).first, b.batch(5).first);
    EXPECT_EQ(a.batch(5).second, b.batch(5).second);
    EXPECT_FALSE(a.batch(5).first == a.batch(6).first);
}

TEST(Trainer, MetricsRecordShape) {
    StepRecord r{4, 1e-3, 0.5, std::numeric_limits<double>::infinity(), 0.9, 12.0};
    const Json j = to_json(r);
    EXPECT_EQ(j["step"], 4);
    EXPECT_EQ(j["psnr"], "inf");
    EXPECT_FALSE(to_json(StepRecord{}).contains("psnr"));
}

TEST(Ablation, VariantLadder) {
    const auto v = ablation_variants(ModelConfig{});
    std::vector<std::string> names;
    for (const auto& x : v) names.push_back(x.name);
    EXPECT_EQ(names, (std::vector<std::string>{"window", "sliding_k7", "dswin_k5", "dswin_k7", "dswin_k9", "multiscale",
                                               "multiscale_msg"}));
    EXPECT_EQ(v[0].model.attention, AttentionKind::window);
    EXPECT_FALSE(v[1].model.offsets_enabled);
    EXPECT_EQ(v[3].model.single_kernel_override, 7u);
    EXPECT_FALSE(v[5].model.msg_ffn_enabled);
    EXPECT_TRUE(v[6].model.msg_ffn_enabled);
    for (const auto& x : v) EXPECT_NO_THROW(x.model.validate()) << x.name;
}

TEST(Ablation, MedianHelper) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0}), 2.5);
}
