#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dswinir/autograd.hpp"
#include "dswinir/checkpoint.hpp"
#include "dswinir/config.hpp"
#include "dswinir/image.hpp"
#include "dswinir/model.hpp"
#include "dswinir/optim.hpp"
#include "dswinir/rng.hpp"

namespace dswinir {

/// Mean absolute difference; the gradient is sign(pred - target) / N with sign(0) = 0.
template <Scalar T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
    require_same_shape(pred.value(), target.value(), "l1_loss");
    const auto& p = pred.value();
    const auto& t = target.value();
    std::vector<double> diff(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) diff[i] = std::abs(double(p[i]) - double(t[i]));
    const double loss = pairwise_sum(diff.data(), diff.size()) / double(diff.size());
    return pred.tape->record("l1_loss", {pred, target}, Tensor<T>({1}, T(loss)),
                             [pred, target](const Tensor<T>& g, GradSink<T>& s) {
                                 const auto& p = pred.value();
                                 const auto& t = target.value();
                                 const double scale = double(g[0]) / double(p.numel());
                                 Tensor<T> d(p.shape());
                                 for (std::size_t i = 0; i < p.numel(); ++i) {
                                     const double r = double(p[i]) - double(t[i]);
                                     d[i] = static_cast<T>(r > 0 ? scale : r < 0 ? -scale : 0.0);
                                 }
                                 if (s.needs(1)) s.add(1, ew(EwOp::neg, d));
                                 if (s.needs(0)) s.add(0, std::move(d));
                             });
}

// ---------------------------------------------------------------------------
// Synthetic degradations

namespace detail {

template <Scalar T>
void add_rain(Tensor<T>& x, const DegradationSpec& spec, Rng& rng) {
    const std::size_t r = x.rank();
    const std::size_t H = x.dim(r - 2), W = x.dim(r - 1), planes = x.numel() / (H * W);
    for (std::size_t s = 0; s < spec.streaks; ++s) {
        const double y0 = rng.uniform(0.0, double(H)), x0 = rng.uniform(0.0, double(W));
        const double len = rng.uniform(double(H) / 8.0, double(H) / 3.0);
        const double theta = (spec.angle + rng.uniform(-10.0, 10.0)) * std::numbers::pi / 180.0;
        const double amp = spec.intensity * rng.uniform(0.5, 1.0);
        const std::size_t n = std::size_t(std::ceil(len)) + 1;
        for (std::size_t t = 0; t < n; ++t) {
            const long yy = std::lround(y0 + double(t) * std::sin(theta));
            const long xx = std::lround(x0 + double(t) * std::cos(theta));
            if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
            for (std::size_t p = 0; p < planes; ++p) {
                T& v = x[p * H * W + std::size_t(yy) * W + std::size_t(xx)];
                v = static_cast<T>(std::min(1.0, double(v) + amp));
            }
        }
    }
}

}  // namespace detail

/// Applies `spec` to a clean image tensor (last two axes spatial) with values in [0,1].
template <Scalar T>
Tensor<T> degrade(const Tensor<T>& clean, const DegradationSpec& spec, Rng& rng) {
    if (clean.rank() < 2) throw ShapeError("degrade expects at least two spatial axes");
    Tensor<T> x = clean;
    if (spec.kind == "gaussian") {
        if (spec.sigma < 0) throw ConfigError("sigma must be non-negative");
        if (spec.sigma == 0) return x;
        const double s = spec.sigma / 255.0;
        for (std::size_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<T>(std::clamp(double(x[i]) + s * rng.normal(), 0.0, 1.0));
    } else if (spec.kind == "rain") {
        detail::add_rain(x, spec, rng);
    } else if (spec.kind == "compose") {
        for (const auto& step : spec.steps) x = degrade(x, step, rng);
    } else {
        throw ConfigError("unknown degradation kind " + spec.kind);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Metrics

template <Scalar T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    require_same_shape(a, b, "psnr");
    std::vector<double> sq(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        sq[i] = d * d;
    }
    const double mse = pairwise_sum(sq.data(), sq.size()) / double(sq.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
    std::vector<double> w(n);
    const double c = double(n - 1) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (w[i] = std::exp(-(double(i) - c) * (double(i) - c) / (2 * sigma * sigma)));
    for (auto& v : w) v /= total;
    return w;
}

// Separable valid filtering of an H×W plane.
inline std::vector<double> filter_valid(const std::vector<double>& x, std::size_t H, std::size_t W,
                                        const std::vector<double>& w) {
    const std::size_t n = w.size(), Ho = H - n + 1, Wo = W - n + 1;
    std::vector<double> rows(H * Wo, 0.0), out(Ho * Wo, 0.0);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x0 = 0; x0 < Wo; ++x0) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += w[k] * x[y * W + x0 + k];
            rows[y * Wo + x0] = acc;
        }
    for (std::size_t y0 = 0; y0 < Ho; ++y0)
        for (std::size_t x0 = 0; x0 < Wo; ++x0) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += w[k] * rows[(y0 + k) * Wo + x0];
            out[y0 * Wo + x0] = acc;
        }
    return out;
}

}  // namespace detail

/// Single-scale SSIM with an 11×11 Gaussian window (sigma 1.5), k1 = 0.01,
/// k2 = 0.03, data range 1, averaged over every channel plane. Images smaller
/// than the window use the largest odd window that fits.
template <Scalar T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "ssim");
    if (a.rank() < 2) throw ShapeError("ssim expects at least two spatial axes");
    const std::size_t H = a.dim(a.rank() - 2), W = a.dim(a.rank() - 1), planes = a.numel() / (H * W);
    std::size_t n = std::min<std::size_t>({11, H, W});
    if (n % 2 == 0) --n;
    const auto win = detail::gaussian_window(n, 1.5);
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
        for (std::size_t i = 0; i < H * W; ++i) {
            x[i] = a[p * H * W + i];
            y[i] = b[p * H * W + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::filter_valid(x, H, W, win), my = detail::filter_valid(y, H, W, win);
        const auto exx = detail::filter_valid(xx, H, W, win), eyy = detail::filter_valid(yy, H, W, win);
        const auto exy = detail::filter_valid(xy, H, W, win);
        std::vector<double> map(mx.size());
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double sxx = exx[i] - mx[i] * mx[i], syy = eyy[i] - my[i] * my[i], sxy = exy[i] - mx[i] * my[i];
            map[i] = ((2 * mx[i] * my[i] + C1) * (2 * sxy + C2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + C1) * (sxx + syy + C2));
        }
        total += pairwise_sum(map.data(), map.size()) / double(map.size());
    }
    return total / double(planes);
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
    std::vector<Image> train;
    Image holdout;
    std::vector<std::string> names;
};

/// Loads every .ppm/.pgm in `dir` (sorted by name). With two or more images
/// the last one is held out; a single image serves both roles.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset folder " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    if (files.empty()) throw DataError("no .ppm/.pgm images in " + dir.string());
    std::sort(files.begin(), files.end());
    Dataset d;
    for (const auto& f : files) {
        d.train.push_back(load_image(f));
        d.names.push_back(f.filename().string());
    }
    if (d.train.size() >= 2) {
        d.holdout = d.train.back();
        d.train.pop_back();
    } else {
        d.holdout = d.train.front();
    }
    return d;
}

namespace detail {

template <Scalar T>
void crop_into(const Image& img, std::size_t y, std::size_t x, std::size_t P, T* dst) {
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < P; ++r)
            for (std::size_t q = 0; q < P; ++q)
                dst[(c * P + r) * P + q] = static_cast<T>(img.at(img.channels == 3 ? c : 0, y + r, x + q));
}

inline void require_patch_fits(const Image& img, std::size_t P) {
    if (img.height < P || img.width < P)
        throw DataError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " smaller than patch " + std::to_string(P));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::optional<double> psnr, ssim;
    double wall_ms = 0.0;
};

inline Json to_json(const StepRecord& r) {
    Json j{{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"wall_ms", r.wall_ms}};
    auto num = [](double v) { return std::isinf(v) ? Json("inf") : Json(v); };
    if (r.psnr) j["psnr"] = num(*r.psnr);
    if (r.ssim) j["ssim"] = *r.ssim;
    return j;
}

struct Evaluation {
    double psnr = 0.0;        // restored vs clean, mean over held-out patches
    double ssim = 0.0;
    double input_psnr = 0.0;  // degraded vs clean
};

/// Seeded training state machine: every step draws its patches and noise from
/// streams keyed by (seed, step), so a resumed run replays the same data.
template <Scalar T = float>
class Trainer {
public:
    Trainer(RunConfig cfg, Dataset data)
        : cfg_(std::move(cfg)), data_(std::move(data)), model_(build_model<T>(cfg_.model, cfg_.train.seed)) {
        init();
    }

    Trainer(const Checkpoint<T>& ck, Dataset data)
        : cfg_(ck.config), data_(std::move(data)), model_(ck.model()), adam_(ck.adam), step_(ck.step) {
        if (ck.seed != cfg_.train.seed) throw CheckpointError("seed does not match embedded config", 0);
        init();
    }

    const RunConfig& config() const { return cfg_; }
    const Model<T>& model() const { return model_; }
    const AdamState<T>& adam() const { return adam_; }
    std::uint64_t steps_done() const { return step_; }

    /// (clean, degraded) batch for a given step index.
    std::pair<Tensor<T>, Tensor<T>> batch(std::uint64_t step) const {
        const auto& tc = cfg_.train;
        const std::size_t P = tc.patch;
        Tensor<T> clean({tc.batch, 3, P, P});
        Rng pick(tc.seed, "patch", step);
        for (std::size_t b = 0; b < tc.batch; ++b) {
            const Image& img = data_.train[pick.below(data_.train.size())];
            const std::size_t y = pick.below(img.height - P + 1), x = pick.below(img.width - P + 1);
            detail::crop_into(img, y, x, P, clean.ptr() + b * 3 * P * P);
        }
        Rng noise(tc.seed, tc.degradation.stream, step);
        return {clean, degrade(clean, tc.degradation, noise)};
    }

    /// One optimization step; `lr` overrides the schedule when given.
    StepRecord step(std::optional<double> lr = std::nullopt) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto& tc = cfg_.train;
        StepRecord rec;
        rec.step = step_ + 1;
        rec.lr = lr ? *lr : cosine_lr(step_, tc.total_steps, tc.lr0, tc.eta_min);
        auto [clean, noisy] = batch(step_);
        std::map<std::string, Tensor<T>> grads;
        {
            Tape<T> tape;
            Binder<T> bind(tape, model_.params, true);
            Var<T> out = model_forward(bind, cfg_.model, tape.constant(noisy));
            Var<T> loss = l1_loss(out, tape.constant(clean));
            rec.loss = loss.value()[0];
            const Gradients<T> g = tape.backward(loss);
            for (const auto& [name, v] : bind.bound())
                if (g.has(v)) grads.emplace(name, g[v]);
        }
        adamw_step(model_.params, grads, adam_,
                   AdamHyper{rec.lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay});
        ++step_;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return rec;
    }

    Evaluation evaluate() const {
        const Tensor<T> restored = infer(model_, holdout_noisy_);
        return Evaluation{psnr_mean(restored), ssim(restored, holdout_clean_), psnr_mean(holdout_noisy_)};
    }

    const Tensor<T>& holdout_clean() const { return holdout_clean_; }
    const Tensor<T>& holdout_noisy() const { return holdout_noisy_; }

    Checkpoint<T> checkpoint() const { return Checkpoint<T>{cfg_, model_.params, adam_, step_, cfg_.train.seed}; }

private:
    void init() {
        cfg_.model.validate();
        cfg_.train.validate();
        if (data_.train.empty()) throw DataError("dataset has no training images");
        const std::size_t P = cfg_.train.patch;
        for (const auto& img : data_.train) detail::require_patch_fits(img, P);
        detail::require_patch_fits(data_.holdout, P);
        const std::size_t N = cfg_.train.holdout_patches;
        holdout_clean_ = Tensor<T>({N, 3, P, P});
        Rng pick(cfg_.train.seed, "holdout");
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t y = pick.below(data_.holdout.height - P + 1);
            const std::size_t x = pick.below(data_.holdout.width - P + 1);
            detail::crop_into(data_.holdout, y, x, P, holdout_clean_.ptr() + n * 3 * P * P);
        }
        Rng noise(cfg_.train.seed, "holdout/" + cfg_.train.degradation.stream);
        holdout_noisy_ = degrade(holdout_clean_, cfg_.train.degradation, noise);
    }

    double psnr_mean(const Tensor<T>& x) const {
        const std::size_t N = x.dim(0), n = x.numel() / N;
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            Tensor<T> a({n}), b({n});
            std::copy(x.ptr() + i * n, x.ptr() + (i + 1) * n, a.ptr());
            std::copy(holdout_clean_.ptr() + i * n, holdout_clean_.ptr() + (i + 1) * n, b.ptr());
            total += psnr(a, b);
        }
        return total / double(N);
    }

    RunConfig cfg_;
    Dataset data_;
    Model<T> model_;
    AdamState<T> adam_;
    std::uint64_t step_ = 0;
    Tensor<T> holdout_clean_, holdout_noisy_;
};

/// Runs the trainer to `total_steps`, writing one NDJSON record per step (with
/// held-out metrics every `eval_every` steps and at the end) to `log`.
template <Scalar T>
void run_training(Trainer<T>& tr, std::ostream* log) {
    const auto& tc = tr.config().train;
    while (tr.steps_done() < tc.total_steps) {
        StepRecord rec = tr.step();
        if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss at step " + std::to_string(rec.step));
        if (rec.step % tc.eval_every == 0 || rec.step == tc.total_steps) {
            const Evaluation e = tr.evaluate();
            rec.psnr = e.psnr;
            rec.ssim = e.ssim;
        }
        if (log) *log << to_json(rec).dump() << '\n' << std::flush;
    }
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
    std::string name;
    ModelConfig model;
};

/// The ablation ladder, built on `base`: window baseline → sliding window →
/// deformable (several k) → multi-scale → multi-scale with gated FFN.
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
    auto v = [&](std::string name, auto&& edit) {
        ModelConfig c = base;
        c.msg_ffn_enabled = false;
        c.single_kernel_override.reset();
        c.attention = AttentionKind::sliding;
        edit(c);
        return AblationVariant{std::move(name), c};
    };
    return {
        v("window", [](ModelConfig& c) {
            c.attention = AttentionKind::window;
            c.offsets_enabled = false;
        }),
        v("sliding_k7", [](ModelConfig& c) {
            c.single_kernel_override = 7;
            c.offsets_enabled = false;
        }),
        v("dswin_k5", [](ModelConfig& c) {
            c.single_kernel_override = 5;
            c.offsets_enabled = true;
        }),
        v("dswin_k7", [](ModelConfig& c) {
            c.single_kernel_override = 7;
            c.offsets_enabled = true;
        }),
        v("dswin_k9", [](ModelConfig& c) {
            c.single_kernel_override = 9;
            c.offsets_enabled = true;
        }),
        v("multiscale", [](ModelConfig& c) { c.offsets_enabled = true; }),
        v("multiscale_msg", [](ModelConfig& c) {
            c.offsets_enabled = true;
            c.msg_ffn_enabled = true;
        }),
    };
}

struct AblationResult {
    std::string name;
    std::vector<double> psnr;  // one per seed
    double median = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains every variant for `steps` steps under each seed and reports the
/// held-out PSNR. `progress` receives one NDJSON line per finished run.
inline std::vector<AblationResult> run_ablation(const RunConfig& base, const Dataset& data,
                                                const std::vector<AblationVariant>& variants,
                                                const std::vector<std::uint64_t>& seeds, std::size_t steps,
                                                std::ostream* progress = nullptr) {
    std::vector<AblationResult> out;
    for (const auto& var : variants) {
        AblationResult r{var.name, {}, 0.0};
        for (auto seed : seeds) {
            RunConfig cfg = base;
            cfg.model = var.model;
            cfg.train.seed = seed;
            cfg.train.total_steps = steps;
            cfg.train.eval_every = steps;
            Trainer<float> tr(cfg, data);
            run_training<float>(tr, nullptr);
            const Evaluation e = tr.evaluate();
            r.psnr.push_back(e.psnr);
            if (progress)
                *progress << Json{{"variant", var.name}, {"seed", seed}, {"psnr", e.psnr}, {"ssim", e.ssim},
                                  {"input_psnr", e.input_psnr}}
                                 .dump()
                          << '\n'
                          << std::flush;
        }
        r.median = median(r.psnr);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dswinir
