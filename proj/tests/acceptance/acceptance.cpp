// Acceptance gate. Prints one "Ax PASS|FAIL ..." line per criterion and exits
// nonzero when any selected criterion fails.
//
//   acceptance [--only A5] [--work dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dswinir.hpp"

namespace {

using namespace dswinir;
namespace fs = std::filesystem;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path g_work;

Dataset fixtures() { return load_dataset(std::string(DSWINIR_TEST_DATA) + "/clean"); }

/// The smoke-training task: tiny model, σ=25, 64×64 patches, 200 steps.
RunConfig smoke_config() {
    RunConfig c;
    c.model = ModelConfig::tiny();
    c.train.total_steps = 200;
    c.train.patch = 64;
    c.train.lr0 = 2e-3;
    c.train.seed = 0;
    return c;
}

fs::path smoke_checkpoint() { return g_work / "smoke.dswr"; }

Outcome a1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = checks::run_oracle_suite(20);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = !reports.empty();
    double worst32 = 0, worst64 = 0;
    std::string failed;
    for (const auto& r : reports) {
        (r.kernel.ends_with("/f32") ? worst32 : worst64) =
            std::max(r.kernel.ends_with("/f32") ? worst32 : worst64, r.max_rel_diff);
        if (!r.pass) {
            ok = false;
            failed += " " + r.kernel;
        }
    }
    ok = ok && secs < 120;
    return {ok, std::to_string(reports.size()) + " kernel/precision pairs x 20 seeds, worst rel f32 " +
                    fmt("%.3g", worst32) + " f64 " + fmt("%.3g", worst64) + ", " + fmt("%.1f", secs) + " s" +
                    (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome a2() {
    double gap = 0, fresh = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        gap = std::max(gap, checks::props::zero_offset_gap(s));
        fresh = std::max(fresh, checks::props::fresh_model_gap(s));
    }
    return {gap <= 1e-6 && fresh <= 1e-6,
            "dswin(zero offsets) vs sliding " + fmt("%.3g", gap) + ", fresh model on/off " + fmt("%.3g", fresh)};
}

Outcome a3() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = checks::run_gradchecks();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0;
    std::string name, failed;
    for (const auto& r : reports) {
        if (r.max_rel_diff >= worst) {
            worst = r.max_rel_diff;
            name = r.kernel;
        }
        if (!(r.max_rel_diff <= checks::kGradTolerance)) failed += " " + r.kernel;
    }
    const bool ok = failed.empty() && !reports.empty() && secs < 300;
    return {ok, std::to_string(reports.size()) + " checks, worst rel " + fmt("%.3g", worst) + " (" + name + "), " +
                    fmt("%.1f", secs) + " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome a4() {
    double sums = 0, shift = 0, win = 0, sld = 1e300;
    for (std::uint64_t s = 0; s < 5; ++s) {
        sums = std::max(sums, checks::props::weight_sum_error(s));
        shift = std::max(shift, checks::props::shift_equivariance_error(s));
        const auto b = checks::props::boundary_sensitivity(s);
        win = std::max(win, b.window);
        sld = std::min(sld, b.sliding);
    }
    const bool ok = sums <= 1e-6 && shift <= 1e-6 && win == 0.0 && sld > 0.0;
    return {ok, "weight sums " + fmt("%.3g", sums) + ", shift equivariance " + fmt("%.3g", shift) +
                    ", cross-window sensitivity window " + fmt("%.3g", win) + " sliding " + fmt("%.3g", sld)};
}

Outcome a5() {
    const auto t0 = std::chrono::steady_clock::now();
    Trainer<float> tr(smoke_config(), fixtures());
    const double first = tr.step().loss;
    double last = first;
    while (tr.steps_done() < tr.config().train.total_steps) last = tr.step().loss;
    const Evaluation e = tr.evaluate();
    save_checkpoint(tr.checkpoint(), smoke_checkpoint());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double drop = 1.0 - last / first, gain = e.psnr - e.input_psnr;
    const bool ok = drop >= 0.5 && gain >= 1.0 && secs < 600;
    return {ok, "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (drop " + fmt("%.1f%%", 100 * drop) +
                    "), held-out PSNR " + fmt("%.2f", e.input_psnr) + " -> " + fmt("%.2f", e.psnr) + " dB (gain " +
                    fmt("%.2f", gain) + "), " + fmt("%.0f", secs) + " s"};
}

Outcome a6() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<AblationVariant> pick;
    for (const auto& v : ablation_variants(ModelConfig::tiny()))
        if (v.name == "window" || v.name == "sliding_k7" || v.name == "dswin_k7") pick.push_back(v);
    std::ofstream log(g_work / "ablation.ndjson");
    const auto res = run_ablation(smoke_config(), fixtures(), pick, {0, 1, 2}, 500, &log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double w = res[0].median, s = res[1].median, d = res[2].median;
    const bool ok = w <= s && s <= d && d - w >= 0.2 && secs < 3600;
    return {ok, "median PSNR window " + fmt("%.3f", w) + ", sliding_k7 " + fmt("%.3f", s) + ", dswin_k7 " +
                    fmt("%.3f", d) + " dB (outer gap " + fmt("%.3f", d - w) + "), " + fmt("%.0f", secs) + " s"};
}

Outcome a7() {
    const Dataset ds = fixtures();
    RunConfig c = smoke_config();
    c.train.total_steps = 30;
    auto trajectory = [&](Trainer<float>& tr, int n) {
        std::vector<double> out;
        for (int i = 0; i < n; ++i) out.push_back(tr.step().loss);
        return out;
    };
    Trainer<float> a(c, ds);
    const auto la = trajectory(a, 20);

    Trainer<float> first(c, ds);
    const auto head = trajectory(first, 10);
    const bool same_traj = std::equal(head.begin(), head.end(), la.begin());
    const fs::path ck = g_work / "a7.dswr", again = g_work / "a7_again.dswr";
    save_checkpoint(first.checkpoint(), ck);
    Trainer<float> resumed(load_checkpoint<float>(ck), ds);
    const auto tail = trajectory(resumed, 10);
    bool resume_exact = std::equal(tail.begin(), tail.end(), la.begin() + 10);
    for (const auto& [name, t] : a.model().params) resume_exact = resume_exact && t == resumed.model().params.at(name);

    save_checkpoint(load_checkpoint<float>(ck), again);
    const bool bytes_same = read_file(ck) == read_file(again);
    return {same_traj && resume_exact && bytes_same,
            std::string("trajectories ") + (same_traj ? "identical" : "differ") + ", resume 10 steps " +
                (resume_exact ? "bit-exact" : "diverged") + ", save/load/save " + (bytes_same ? "byte-identical" : "differs")};
}

Outcome a8() {
    const ModelConfig cfg = ModelConfig::tiny();
    const Model<float> m = build_model<float>(cfg, 0);
    const Counts a = count_params_flops(cfg, 64, 64), h = checks::hand_count(m, 64, 64);
    const Counts big = count_params_flops(cfg, 128, 128);
    const bool equal = a.params == h.params && a.macs == h.macs && a.conv_macs == h.conv_macs;
    const bool scales = big.conv_macs == 4 * a.conv_macs;
    return {equal && scales, "params " + std::to_string(a.params) + "/" + std::to_string(h.params) + ", macs " +
                                 std::to_string(a.macs) + "/" + std::to_string(h.macs) + ", conv macs 64->128 " +
                                 std::to_string(a.conv_macs) + " -> " + std::to_string(big.conv_macs)};
}

Outcome a9() {
    const Image img = load_image(std::string(DSWINIR_TEST_DATA) + "/clean/clean_07.ppm");
    const std::size_t stage = 1;
    const OffsetHeatmap zero = export_offset_heatmap(build_model<float>(ModelConfig::tiny(), 0), img, stage,
                                                     g_work / "heat_fresh.pgm");
    bool zero_ok = zero.max == 0.0 && zero.min == 0.0;
    for (float v : load_image(g_work / "heat_fresh.pgm").data) zero_ok = zero_ok && v == 0.0f;

    if (!fs::exists(smoke_checkpoint())) a5();
    const Model<float> trained = load_checkpoint<float>(smoke_checkpoint()).model();
    const fs::path out = g_work / "heat_trained.pgm";
    export_offset_heatmap(trained, img, stage, out);
    const std::string text = [&] {
        const auto b = read_file(sidecar_path(out));
        return std::string(b.begin(), b.end());
    }();
    const Json side = Json::parse(text);
    const Image back = load_image(out);
    const std::size_t eh = img.height >> stage, ew_ = img.width >> stage;
    const bool dims = back.height == eh && back.width == ew_ && side["height"] == eh && side["width"] == ew_;
    const double mx = side["max"].get<double>();
    return {zero_ok && mx > 0.0 && dims, std::string("fresh model heatmap ") + (zero_ok ? "all zero" : "NOT zero") +
                                             ", trained sidecar max " + fmt("%.3g", mx) + ", " +
                                             std::to_string(back.width) + "x" + std::to_string(back.height) +
                                             " at stage " + std::to_string(stage) + (dims ? "" : " (dimension mismatch)")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance gate"};
    std::string only, work = (fs::temp_directory_path() / "dswinir_acceptance").string();
    app.add_option("--only", only, "run a single criterion, e.g. A5");
    app.add_option("--work", work, "scratch directory for checkpoints and heatmaps");
    CLI11_PARSE(app, argc, argv);
    g_work = work;
    fs::create_directories(g_work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};
    bool ok = true, ran = false;
    for (const auto& [id, fn] : all) {
        if (!only.empty() && only != id) continue;
        ran = true;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << '\n' << std::flush;
        ok = ok && o.pass;
    }
    if (!ran) {
        std::cerr << "unknown criterion " << only << '\n';
        return 2;
    }
    return ok ? 0 : 1;
}
