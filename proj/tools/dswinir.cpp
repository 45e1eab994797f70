#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dswinir.hpp"

namespace {

using namespace dswinir;

enum Exit : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4, kCheck = 5 };

int exit_code_for(const Error& e) {
    const std::string& k = e.kind();
    if (k == "config-error" || k == "parameter-error" || k == "shape-error" || k == "optimizer-error") return kUsage;
    if (k == "io-error" || k == "data-error" || k == "checkpoint-error") return kData;
    if (k == "numeric-error") return kNumeric;
    if (k == "check-error") return kCheck;
    return 1;
}

void emit(const Json& j) { std::cout << j.dump() << '\n' << std::flush; }

int emit_reports(const std::vector<checks::OracleReport>& reports) {
    bool ok = true;
    for (const auto& r : reports) {
        emit(checks::to_json(r));
        ok = ok && r.pass;
    }
    return ok ? kOk : kCheck;
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            out.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad seed list '" + s + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deformable sliding-window attention restoration toolkit"};
    app.require_subcommand(1);

    std::string config, data, out, ckpt, in, filter, resume, seeds_arg = "0,1,2", variants_arg;
    std::optional<std::uint64_t> seed, steps;
    std::size_t hw = 256, repeat = 3, oracle_seeds = 20, stage = 0, group = 0;

    auto* train = app.add_subcommand("train", "train a model, NDJSON metrics on stdout");
    train->add_option("--config", config, "run config JSON")->check(CLI::ExistingFile);
    train->add_option("--data", data, "directory of clean PPM/PGM images")->required();
    train->add_option("--out", out, "checkpoint to write")->required();
    train->add_option("--seed", seed, "overrides train.seed");
    train->add_option("--steps", steps, "overrides train.total_steps");
    train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

    auto* inf = app.add_subcommand("infer", "restore one image");
    inf->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    inf->add_option("--in", in)->required();
    inf->add_option("--out", out)->required();

    auto* bench = app.add_subcommand("bench", "parameter/MAC counts and forward wall time");
    bench->add_option("--config", config)->check(CLI::ExistingFile);
    bench->add_option("--hw", hw, "square input extent");
    bench->add_option("--repeat", repeat)->check(CLI::PositiveNumber);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grad->add_option("--filter", filter, "substring of case names");

    auto* orc = app.add_subcommand("oracle", "kernel vs brute-force reference suite");
    orc->add_option("--seeds", oracle_seeds, "random instances per kernel")->check(CLI::PositiveNumber);
    orc->add_option("--filter", filter);

    auto* off = app.add_subcommand("offsets", "export an offset-magnitude heatmap (PGM + JSON sidecar)");
    auto* off_ckpt = off->add_option("--ckpt", ckpt)->check(CLI::ExistingFile);
    off->add_option("--config", config, "build a fresh model instead of loading one")
        ->check(CLI::ExistingFile)
        ->excludes(off_ckpt);
    off->add_option("--in", in)->required();
    off->add_option("--stage", stage)->required();
    off->add_option("--group", group, "head group within the stage");
    off->add_option("--out", out)->required();
    off->add_option("--seed", seed, "init seed with --config");

    auto* abl = app.add_subcommand("ablate", "train every ablation variant, report held-out PSNR");
    abl->add_option("--config", config, "base run config")->check(CLI::ExistingFile);
    abl->add_option("--data", data)->required();
    abl->add_option("--steps", steps)->required();
    abl->add_option("--out", out, "report JSON")->required();
    abl->add_option("--seeds", seeds_arg, "comma-separated");
    abl->add_option("--variants", variants_arg, "comma-separated subset of variant names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*train) {
            const Dataset ds = load_dataset(data);
            std::optional<Trainer<float>> tr;
            if (!resume.empty()) {
                Checkpoint<float> ck = load_checkpoint<float>(resume);
                if (steps) ck.config.train.total_steps = *steps;
                tr.emplace(ck, ds);
            } else {
                RunConfig cfg = config_or_default(config);
                if (seed) cfg.train.seed = *seed;
                if (steps) cfg.train.total_steps = *steps;
                tr.emplace(cfg, ds);
            }
            run_training(*tr, &std::cout);
            save_checkpoint(tr->checkpoint(), out);
        } else if (*inf) {
            const auto t0 = std::chrono::steady_clock::now();
            const Checkpoint<float> ck = load_checkpoint<float>(ckpt);
            const Model<float> m = ck.model();
            const Image img = load_image(in);
            const TensorF y = dswinir::infer(m, image_to_tensor<float>(img));
            if (!y.all_finite()) throw NumericError("restored image contains non-finite values");
            save_image(tensor_to_image(y, img.channels), out);
            emit(Json{{"in", in}, {"out", out}, {"width", img.width}, {"height", img.height}, {"wall_ms", ms_since(t0)}});
        } else if (*bench) {
            const RunConfig cfg = config_or_default(config);
            const Counts c = count_params_flops(cfg.model, hw, hw);
            const Model<float> m = build_model<float>(cfg.model, cfg.train.seed);
            Rng rng(cfg.train.seed, "bench");
            TensorF x({1, 3, hw, hw});
            for (std::size_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform());
            std::vector<double> times;
            for (std::size_t r = 0; r < repeat; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                dswinir::infer(m, x);
                times.push_back(ms_since(t0));
            }
            emit(Json{{"hw", hw},
                      {"params", c.params},
                      {"macs", c.macs},
                      {"conv_macs", c.conv_macs},
                      {"forward_ms", median(times)},
                      {"forward_ms_all", times}});
        } else if (*grad) {
            return emit_reports(checks::run_gradchecks(filter));
        } else if (*orc) {
            return emit_reports(checks::run_oracle_suite(oracle_seeds, filter));
        } else if (*off) {
            Model<float> m;
            if (!ckpt.empty()) {
                m = load_checkpoint<float>(ckpt).model();
            } else {
                const RunConfig cfg = config_or_default(config);
                m = build_model<float>(cfg.model, seed.value_or(cfg.train.seed));
            }
            const OffsetHeatmap h = export_offset_heatmap(m, load_image(in), stage, out, group);
            Json j = h.sidecar();
            j["out"] = out;
            j["sidecar"] = sidecar_path(out).string();
            emit(j);
        } else if (*abl) {
            RunConfig base = config_or_default(config);
            const Dataset ds = load_dataset(data);
            std::vector<AblationVariant> variants = ablation_variants(base.model);
            if (!variants_arg.empty()) {
                std::vector<AblationVariant> keep;
                std::stringstream ss(variants_arg);
                for (std::string name; std::getline(ss, name, ',');) {
                    auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& v) { return v.name == name; });
                    if (it == variants.end()) throw ConfigError("unknown ablation variant '" + name + "'");
                    keep.push_back(*it);
                }
                variants = std::move(keep);
            }
            const auto results = run_ablation(base, ds, variants, parse_seeds(seeds_arg), *steps, &std::cout);
            Json report = Json::array();
            for (const auto& r : results) report.push_back(Json{{"variant", r.name}, {"psnr", r.psnr}, {"median_psnr", r.median}});
            const std::string text = Json{{"steps", *steps}, {"seeds", parse_seeds(seeds_arg)}, {"variants", report}}.dump(2) + "\n";
            write_file(out, std::vector<std::uint8_t>(text.begin(), text.end()));
        }
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kOk;
}
