#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gvs/tensor.hpp"

namespace gvs {

// 2-d single-channel intensity grid in [0, 1], the universal image carrier.
struct ImageGrid {
    Tensor pixels;  // (H, W)

    ImageGrid() = default;
    explicit ImageGrid(Tensor t);
    ImageGrid(std::int64_t h, std::int64_t w) : pixels({h, w}) {}

    std::int64_t height() const { return pixels.dim(0); }
    std::int64_t width() const { return pixels.dim(1); }

    double& at(std::int64_t r, std::int64_t c) { return pixels.at(r, c); }
    double at(std::int64_t r, std::int64_t c) const { return pixels.at(r, c); }

    // Throws InvalidInputError unless every pixel lies in [0, 1].
    void validate() const;
};

// Binary per-pixel annotation aligned to an ImageGrid; 0 = normal,
// 1 = pathological.
struct LesionMask {
    Tensor pixels;  // (H, W), values exactly 0 or 1

    LesionMask() = default;
    explicit LesionMask(Tensor t);
    LesionMask(std::int64_t h, std::int64_t w) : pixels({h, w}) {}

    static LesionMask zeros_like(const ImageGrid& image) { return LesionMask(image.height(), image.width()); }

    std::int64_t height() const { return pixels.dim(0); }
    std::int64_t width() const { return pixels.dim(1); }
    bool is_set(std::int64_t r, std::int64_t c) const { return pixels.at(r, c) != 0.0; }
    std::int64_t count() const;

    void validate() const;
};

struct Sample {
    ImageGrid image;                          // x_p
    LesionMask mask;                          // y_t
    std::optional<ImageGrid> healthy_truth;   // phantom-only ground truth
    std::string id;

    void validate() const;
};

// Raw 3-d scan before normalization; intensities in arbitrary physical units.
struct Volume {
    Tensor voxels;                 // (D, H, W)
    std::vector<double> spacing;   // per-axis physical size, informational
    std::string id;

    Volume() = default;
    Volume(Tensor v, std::string volume_id) : voxels(std::move(v)), id(std::move(volume_id)) {}

    std::int64_t depth() const { return voxels.dim(0); }
    std::int64_t height() const { return voxels.dim(1); }
    std::int64_t width() const { return voxels.dim(2); }

    void validate() const;
};

// Per-pixel probabilities over {no-tumor, tumor}; (2, H, W).
struct ProbMap {
    Tensor probs;

    ProbMap() = default;
    explicit ProbMap(Tensor t);

    std::int64_t height() const { return probs.dim(1); }
    std::int64_t width() const { return probs.dim(2); }
    double no_tumor(std::int64_t r, std::int64_t c) const { return probs[r * width() + c]; }
    double tumor(std::int64_t r, std::int64_t c) const { return probs[height() * width() + r * width() + c]; }

    // Per-pixel simplex check (non-negative, sums to 1 within 1e-5).
    void validate() const;

    LesionMask argmax_mask() const;
};

}  // namespace gvs
