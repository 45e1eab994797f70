#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dswinir/error.hpp"
#include "dswinir/image.hpp"
#include "dswinir/model.hpp"

namespace dswinir {

struct OffsetHeatmap {
    std::size_t stage = 0, group = 0, height = 0, width = 0;
    std::vector<double> magnitude;  // row-major [height, width]
    double min = 0.0, max = 0.0, mean = 0.0;

    /// Min-max normalized to 0..255; all zero when the field is flat.
    Image to_image() const {
        Image img{width, height, 1, std::vector<float>(magnitude.size(), 0.0f)};
        if (max > min)
            for (std::size_t i = 0; i < magnitude.size(); ++i)
                img.data[i] = float((magnitude[i] - min) / (max - min));
        return img;
    }

    nlohmann::json sidecar() const {
        return nlohmann::json{{"stage", stage}, {"group", group}, {"height", height}, {"width", width},
                              {"min", min},     {"max", max},     {"mean", mean}};
    }
};

/// Block whose offsets represent a stage: the first encoder block, or the
/// first bottleneck block for the deepest stage.
inline std::string heatmap_block(std::size_t stage) {
    return stage + 1 == kStages ? block_prefix("mid", stage, 0) : block_prefix("enc", stage, 0);
}

/// Mean over the k² sampling points of √(Δy² + Δx²) for batch item `b` of an
/// offset field [B, 2k², H, W].
template <Scalar T>
std::vector<double> offset_magnitude(const Tensor<T>& field, std::size_t b = 0) {
    const std::size_t P = field.dim(1) / 2, H = field.dim(2), W = field.dim(3), HW = H * W;
    std::vector<double> out(HW, 0.0);
    const T* base = field.ptr() + b * field.dim(1) * HW;
    for (std::size_t n = 0; n < P; ++n) {
        const T* dy = base + (2 * n) * HW;
        const T* dx = base + (2 * n + 1) * HW;
        for (std::size_t i = 0; i < HW; ++i) out[i] += std::sqrt(double(dy[i]) * dy[i] + double(dx[i]) * dx[i]);
    }
    for (auto& v : out) v /= double(P);
    return out;
}

template <Scalar T>
OffsetHeatmap compute_offset_heatmap(const Model<T>& model, const Tensor<T>& x, std::size_t stage, std::size_t group = 0) {
    if (stage >= kStages) throw ParameterError("stage " + std::to_string(stage) + " out of range [0, 3]");
    const auto& kernels = model.config.stage_kernels(stage);
    if (group >= kernels.size())
        throw ParameterError("head group " + std::to_string(group) + " out of range for stage " + std::to_string(stage));

    ModelTrace<T> trace;
    infer(model, x, &trace);
    OffsetHeatmap h;
    h.stage = stage;
    h.group = group;
    h.height = trace.extents[stage].first;
    h.width = trace.extents[stage].second;
    const auto& offsets = trace.blocks.at(heatmap_block(stage)).offsets;
    h.magnitude = group < offsets.size() && offsets[group].numel() > 0 ? offset_magnitude(offsets[group])
                                                                         : std::vector<double>(h.height * h.width, 0.0);
    h.min = *std::min_element(h.magnitude.begin(), h.magnitude.end());
    h.max = *std::max_element(h.magnitude.begin(), h.magnitude.end());
    double s = 0.0;
    for (double v : h.magnitude) s += v;
    h.mean = s / double(h.magnitude.size());
    return h;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& pgm) {
    auto p = pgm;
    return p.replace_extension(".json");
}

/// Writes the heatmap as PGM and its raw statistics to a sibling .json file.
template <Scalar T>
OffsetHeatmap export_offset_heatmap(const Model<T>& model, const Image& img, std::size_t stage,
                                    const std::filesystem::path& path, std::size_t group = 0) {
    OffsetHeatmap h = compute_offset_heatmap(model, image_to_tensor<T>(img), stage, group);
    save_image(h.to_image(), path);
    const std::string js = h.sidecar().dump(2) + "\n";
    write_file(sidecar_path(path), std::vector<std::uint8_t>(js.begin(), js.end()));
    return h;
}

}  // namespace dswinir
