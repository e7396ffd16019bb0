#pragma once

#include <filesystem>

#include "gvs/tensor.hpp"

namespace gvs {

// 16-bit binary PGM (P5, maxval 65535, big-endian sample order). Values in
// [0, 1] quantize to round(v * 65535), so data already on the 1/65535 grid
// round-trips bit-exactly.
void write_pgm16(const std::filesystem::path& path, const Tensor& image);

// Reads maxval 255 or 65535; returns values in [0, 1] as raw / maxval.
Tensor read_pgm16(const std::filesystem::path& path);

// Snaps a [0, 1] value onto the 16-bit storage grid.
inline double quantize16(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<double>(static_cast<int>(v * 65535.0 + 0.5)) / 65535.0;
}

}  // namespace gvs
