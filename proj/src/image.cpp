#include "gvs/image.hpp"

#include <cmath>

#include "gvs/errors.hpp"

namespace gvs {

ImageGrid::ImageGrid(Tensor t) : pixels(std::move(t)) {
    if (pixels.rank() != 2) throw InvalidInputError("ImageGrid: expected 2-d tensor, got " + pixels.shape_string());
}

void ImageGrid::validate() const {
    if (pixels.rank() != 2 || pixels.dim(0) <= 0 || pixels.dim(1) <= 0) {
        throw InvalidInputError("ImageGrid: invalid shape " + pixels.shape_string());
    }
    for (std::int64_t i = 0; i < pixels.numel(); ++i) {
        const double v = pixels[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidInputError("ImageGrid: pixel out of [0, 1]: " + std::to_string(v));
        }
    }
}

LesionMask::LesionMask(Tensor t) : pixels(std::move(t)) {
    if (pixels.rank() != 2) throw InvalidInputError("LesionMask: expected 2-d tensor, got " + pixels.shape_string());
}

std::int64_t LesionMask::count() const {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < pixels.numel(); ++i) {
        if (pixels[i] != 0.0) ++n;
    }
    return n;
}

void LesionMask::validate() const {
    if (pixels.rank() != 2 || pixels.dim(0) <= 0 || pixels.dim(1) <= 0) {
        throw InvalidInputError("LesionMask: invalid shape " + pixels.shape_string());
    }
    for (std::int64_t i = 0; i < pixels.numel(); ++i) {
        const double v = pixels[i];
        if (v != 0.0 && v != 1.0) {
            throw InvalidInputError("LesionMask: non-binary value " + std::to_string(v));
        }
    }
}

void Sample::validate() const {
    image.validate();
    mask.validate();
    if (!image.pixels.same_shape(mask.pixels)) {
        throw InvalidInputError("Sample '" + id + "': image/mask shape mismatch");
    }
    if (healthy_truth) {
        healthy_truth->validate();
        if (!image.pixels.same_shape(healthy_truth->pixels)) {
            throw InvalidInputError("Sample '" + id + "': healthy_truth shape mismatch");
        }
    }
}

void Volume::validate() const {
    if (voxels.rank() != 3 || voxels.dim(0) < 1) {
        throw InvalidInputError("Volume '" + id + "': expected at least one slice, got " + voxels.shape_string());
    }
    if (!voxels.all_finite()) throw InvalidInputError("Volume '" + id + "': non-finite voxel");
}

ProbMap::ProbMap(Tensor t) : probs(std::move(t)) {
    if (probs.rank() != 3 || probs.dim(0) != 2) {
        throw InvalidInputError("ProbMap: expected (2, H, W) tensor, got " + probs.shape_string());
    }
}

void ProbMap::validate() const {
    const std::int64_t hw = height() * width();
    for (std::int64_t i = 0; i < hw; ++i) {
        const double p0 = probs[i];
        const double p1 = probs[hw + i];
        if (p0 < 0.0 || p1 < 0.0 || std::abs(p0 + p1 - 1.0) > 1e-5) {
            throw InvalidInputError("ProbMap: pixel probabilities not a simplex");
        }
    }
}

LesionMask ProbMap::argmax_mask() const {
    LesionMask m(height(), width());
    const std::int64_t hw = height() * width();
    for (std::int64_t i = 0; i < hw; ++i) {
        m.pixels[i] = probs[hw + i] > probs[i] ? 1.0 : 0.0;
    }
    return m;
}

}  // namespace gvs
