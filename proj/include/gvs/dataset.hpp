#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gvs/image.hpp"

namespace gvs {

enum class Modality { MR, CT, Phantom };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

enum class Split { Train, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string id;
    std::string image;                         // file (phantom) or volume directory (MR/CT)
    std::string mask;
    std::optional<std::string> healthy_truth;  // phantom only
    Split split = Split::Train;
};

struct DatasetManifest {
    Modality modality = Modality::Phantom;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // directory of the manifest file, not serialized

    // Checks split tags, duplicate ids, and path resolvability.
    void validate() const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// --- Volume preprocessing ---------------------------------------------------

// Clamps every voxel into [0, q] where q is the nearest-rank p-quantile of
// the whole volume (computed per volume, not per slice).
Volume clip_percentile(const Volume& v, double p);

Volume clamp_range(const Volume& v, double lo, double hi);

// (x - min) / (max - min) per volume; a flat volume maps to all zeros. Every
// slice is emitted; empty-slice filtering happens in load_dataset.
std::vector<ImageGrid> normalize_minmax(const Volume& v);

// --- Phantom generation -----------------------------------------------------

// Geometry knobs for the synthetic phantom recipe. Fractions are relative to
// min(height, width). Defaults produce soft elliptical "anatomy" with
// 1-2 elliptical lesions strictly inside it.
struct PhantomConfig {
    double body_radius_lo = 0.32;
    double body_radius_hi = 0.42;
    double body_intensity_lo = 0.35;
    double body_intensity_hi = 0.55;
    int structures_lo = 2;
    int structures_hi = 4;
    double lesion_radius_lo = 0.08;
    double lesion_radius_hi = 0.14;
    double two_lesion_prob = 0.3;
    int max_placement_tries = 100;
};

// Deterministic synthetic dataset with known healthy ground truth. The
// recipe, which oracle tests recompute directly:
//   1. healthy_truth: soft-edged body ellipse (random pose/intensity) with
//      2-4 soft interior ellipses and a low-amplitude sinusoidal texture,
//      clamped to [0, 1] and snapped to the 16-bit storage grid
//      (value = raw / 65535 with integer raw).
//   2. mask: 1-2 hard elliptical lesion regions strictly inside the body.
//   3. lesion shift in raster space: on lesion pixels
//      raw(image) = min(raw(healthy) + raw(amp), 65535) with
//      raw(amp) = round(lesion_amp * 65535); elsewhere image == healthy
//      bit-exactly. Every pixel stays on the storage grid, so container
//      round-trips are bit-identical.
// Sample k draws from the stream Rng::derive(seed, k), making every sample
// (and any prefix of the dataset) a pure function of (seed, k).
std::vector<Sample> make_phantom(std::uint64_t seed, std::int64_t height, std::int64_t width, std::int64_t count,
                                 double lesion_amp, const PhantomConfig& config = {});

// --- Dataset loading / saving ----------------------------------------------

// Loads samples in manifest order, applying modality preprocessing:
// MR -> clip_percentile(0.995) + normalize, CT -> clamp_range(-200, 250) +
// normalize, Phantom -> none. Volume entries expand to one Sample per slice
// whose mask or anatomy is nonempty. Order is shuffled iff shuffle_seed is
// set. Per-entry failures raise LoadError carrying the entry id.
std::vector<Sample> load_dataset(const DatasetManifest& manifest, std::optional<Split> split = std::nullopt,
                                 std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// Writes samples as the portable phantom container (one directory per
// sample: image.pgm / mask.pgm / healthy.pgm) plus manifest.json, returning
// the manifest.
DatasetManifest save_phantom_dataset(const std::filesystem::path& dir, const std::vector<Sample>& train,
                                     const std::vector<Sample>& test);

// Volume container: directory with volume.json {id, scale, offset, spacing,
// slices} plus one 16-bit PGM per slice; value = pgm * scale + offset.
void save_volume(const std::filesystem::path& dir, const Volume& v);
Volume load_volume(const std::filesystem::path& dir);

}  // namespace gvs
