#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gvs/dataset.hpp"
#include "gvs/errors.hpp"
#include "gvs/io.hpp"
#include "gvs/rng.hpp"

using namespace gvs;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("gvs_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Volume make_volume(std::vector<double> values, std::int64_t d, std::int64_t h, std::int64_t w) {
    Volume v(Tensor({d, h, w}), "vol");
    REQUIRE(static_cast<std::int64_t>(values.size()) == d * h * w);
    std::copy(values.begin(), values.end(), v.voxels.data());
    return v;
}

// independent nearest-rank quantile oracle on a brute-force sorted copy
double quantile_oracle(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n));
    rank = std::max<std::size_t>(1, std::min(values.size(), rank));
    return values[rank - 1];
}

}  // namespace

TEST_CASE("clip_percentile leaves a constant volume unchanged") {
    Volume v = make_volume(std::vector<double>(8, 5.0), 2, 2, 2);
    Volume out = clip_percentile(v, 0.995);
    CHECK(out.voxels.bit_equal(v.voxels));
}

TEST_CASE("clip_percentile clamps to the sort-oracle quantile") {
    std::vector<double> values(1000);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i);
    // scramble so the implementation cannot rely on ordering
    Rng rng(3);
    rng.shuffle(values);
    Volume v = make_volume(values, 10, 10, 10);

    const double q = quantile_oracle(values, 0.995);
    CHECK(q == 994.0);  // ceil(0.995 * 1000) = 995 -> sorted[994]
    Volume out = clip_percentile(v, 0.995);
    CHECK(out.voxels.max() == q);
    for (std::int64_t i = 0; i < out.voxels.numel(); ++i) {
        CHECK(out.voxels[i] == std::min(v.voxels[i], q));
    }
}

TEST_CASE("clip_percentile clamps negatives to zero") {
    Volume v = make_volume({-3.0, 1.0, 2.0, 10.0, 4.0, 5.0, 6.0, 7.0}, 2, 2, 2);
    Volume out = clip_percentile(v, 1.0);
    CHECK(out.voxels[0] == 0.0);
    CHECK(out.voxels[3] == 10.0);
}

TEST_CASE("clip_percentile is idempotent") {
    Rng rng(17);
    std::vector<double> values(512);
    for (auto& v : values) v = rng.uniform(-10.0, 500.0);
    Volume v = make_volume(values, 8, 8, 8);
    Volume once = clip_percentile(v, 0.9);
    Volume twice = clip_percentile(once, 0.9);
    CHECK(once.voxels.bit_equal(twice.voxels));
}

TEST_CASE("clip_percentile rejects bad input") {
    Volume empty;
    empty.voxels = Tensor({0, 2, 2});
    CHECK_THROWS_AS(clip_percentile(empty, 0.5), InvalidInputError);
    Volume v = make_volume(std::vector<double>(8, 1.0), 2, 2, 2);
    CHECK_THROWS_AS(clip_percentile(v, 0.0), InvalidInputError);
    CHECK_THROWS_AS(clip_percentile(v, 1.5), InvalidInputError);
}

TEST_CASE("clamp_range clamps and validates bounds") {
    Volume v = make_volume({300.0, -500.0, 0.0, 250.0, -200.0, 100.0, 42.0, -1.0}, 2, 2, 2);
    Volume out = clamp_range(v, -200.0, 250.0);
    CHECK(out.voxels[0] == 250.0);
    CHECK(out.voxels[1] == -200.0);
    CHECK(out.voxels[2] == 0.0);
    CHECK_THROWS_AS(clamp_range(v, 5.0, 5.0), InvalidConfigError);
    CHECK_THROWS_AS(clamp_range(v, 10.0, -10.0), InvalidConfigError);

    Volume twice = clamp_range(out, -200.0, 250.0);
    CHECK(out.voxels.bit_equal(twice.voxels));
}

TEST_CASE("normalize_minmax maps endpoints and handles flat volumes") {
    Volume v = make_volume({2.0, 4.0, 6.0, 2.0, 4.0, 6.0, 2.0, 6.0}, 2, 2, 2);
    auto slices = normalize_minmax(v);
    REQUIRE(slices.size() == 2);
    CHECK(slices[0].pixels[0] == 0.0);
    CHECK(slices[0].pixels[1] == 0.5);
    CHECK(slices[0].pixels[2] == 1.0);

    Volume flat = make_volume(std::vector<double>(8, 3.3), 2, 2, 2);
    auto flat_slices = normalize_minmax(flat);
    for (const auto& s : flat_slices) {
        CHECK(s.pixels.max() == 0.0);
    }
}

TEST_CASE("phantom: zero amplitude keeps image identical, mask nonzero") {
    auto samples = make_phantom(11, 32, 32, 3, 0.0);
    for (const auto& s : samples) {
        REQUIRE(s.healthy_truth.has_value());
        CHECK(s.image.pixels.bit_equal(s.healthy_truth->pixels));
        CHECK(s.mask.count() > 0);
    }
}

TEST_CASE("phantom: determinism, bit-identical datasets for the same seed") {
    auto a = make_phantom(5, 48, 40, 4, 0.35);
    auto b = make_phantom(5, 48, 40, 4, 0.35);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].image.pixels.bit_equal(b[i].image.pixels));
        CHECK(a[i].mask.pixels.bit_equal(b[i].mask.pixels));
        CHECK(a[i].healthy_truth->pixels.bit_equal(b[i].healthy_truth->pixels));
    }
    auto c = make_phantom(6, 48, 40, 4, 0.35);
    CHECK_FALSE(a[0].image.pixels.bit_equal(c[0].image.pixels));
}

TEST_CASE("phantom recipe oracle: lesion shift is min(amp, headroom) exactly") {
    const double amp = 0.5;
    const double amp_q = quantize16(amp);
    const int amp_raw = static_cast<int>(amp_q * 65535.0 + 0.5);
    auto samples = make_phantom(1, 64, 64, 10, amp);
    REQUIRE(samples.size() == 10);
    for (const auto& s : samples) {
        const auto& healthy = s.healthy_truth->pixels;
        for (std::int64_t i = 0; i < s.image.pixels.numel(); ++i) {
            const double diff = std::abs(s.image.pixels[i] - healthy[i]);
            if (s.mask.pixels[i] != 0.0) {
                // exact statement in raster space: shift = min(amp, headroom)
                const int raw_h = static_cast<int>(healthy[i] * 65535.0 + 0.5);
                const int raw_img = static_cast<int>(s.image.pixels[i] * 65535.0 + 0.5);
                CHECK(raw_img - raw_h == std::min(amp_raw, 65535 - raw_h));
                // and the float view agrees to storage-grid precision
                const double expected = std::min(amp_q, 1.0 - healthy[i]);
                CHECK(std::abs(diff - expected) < 1.0 / 65535.0);
                if (healthy[i] < 1.0) CHECK(diff > 0.0);
            } else {
                CHECK(diff == 0.0);
            }
        }
    }
}

TEST_CASE("phantom: lesions lie strictly inside the anatomy") {
    auto samples = make_phantom(2, 64, 64, 6, 0.4);
    for (const auto& s : samples) {
        for (std::int64_t i = 0; i < s.mask.pixels.numel(); ++i) {
            if (s.mask.pixels[i] != 0.0) {
                CHECK(s.healthy_truth->pixels[i] > 0.0);
            }
        }
    }
}

TEST_CASE("phantom: infeasible lesion geometry raises GenerationError") {
    PhantomConfig cfg;
    cfg.lesion_radius_lo = 0.9;
    cfg.lesion_radius_hi = 0.95;
    cfg.max_placement_tries = 20;
    CHECK_THROWS_AS(make_phantom(1, 32, 32, 1, 0.3, cfg), GenerationError);
}

TEST_CASE("phantom: precondition violations") {
    CHECK_THROWS_AS(make_phantom(1, 16, 64, 1, 0.3), InvalidInputError);
    CHECK_THROWS_AS(make_phantom(1, 64, 64, 0, 0.3), InvalidInputError);
    CHECK_THROWS_AS(make_phantom(1, 64, 64, 1, 1.5), InvalidInputError);
}

TEST_CASE("pgm16 round-trips grid-aligned data bit-exactly") {
    const fs::path dir = temp_dir("pgm");
    Rng rng(9);
    Tensor t({13, 17});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = quantize16(rng.uniform());
    write_pgm16(dir / "x.pgm", t);
    Tensor back = read_pgm16(dir / "x.pgm");
    CHECK(back.bit_equal(t));
}

TEST_CASE("phantom dataset save/load round-trip is bit-identical") {
    const fs::path dir = temp_dir("roundtrip");
    auto samples = make_phantom(3, 32, 32, 3, 0.25);
    DatasetManifest manifest = save_phantom_dataset(dir, samples, {});
    auto loaded = load_dataset(manifest);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].id == samples[i].id);
        CHECK(loaded[i].image.pixels.bit_equal(samples[i].image.pixels));
        CHECK(loaded[i].mask.pixels.bit_equal(samples[i].mask.pixels));
        REQUIRE(loaded[i].healthy_truth.has_value());
        CHECK(loaded[i].healthy_truth->pixels.bit_equal(samples[i].healthy_truth->pixels));
    }
    // manifest reload from disk gives the same thing
    DatasetManifest reloaded = load_manifest(dir / "manifest.json");
    auto loaded2 = load_dataset(reloaded);
    REQUIRE(loaded2.size() == loaded.size());
    CHECK(loaded2[0].image.pixels.bit_equal(loaded[0].image.pixels));
}

TEST_CASE("empty manifest loads an empty stream without error") {
    DatasetManifest manifest;
    manifest.modality = Modality::Phantom;
    auto samples = load_dataset(manifest);
    CHECK(samples.empty());
}

TEST_CASE("split filter and deterministic shuffle") {
    const fs::path dir = temp_dir("split");
    auto train = make_phantom(4, 32, 32, 5, 0.3);
    auto test = make_phantom(104, 32, 32, 2, 0.3);
    DatasetManifest manifest = save_phantom_dataset(dir, train, test);

    auto train_only = load_dataset(manifest, Split::Train);
    auto test_only = load_dataset(manifest, Split::Test);
    CHECK(train_only.size() == 5);
    CHECK(test_only.size() == 2);

    auto shuffled1 = load_dataset(manifest, Split::Train, 99);
    auto shuffled2 = load_dataset(manifest, Split::Train, 99);
    REQUIRE(shuffled1.size() == shuffled2.size());
    bool any_moved = false;
    for (std::size_t i = 0; i < shuffled1.size(); ++i) {
        CHECK(shuffled1[i].id == shuffled2[i].id);
        if (shuffled1[i].id != train_only[i].id) any_moved = true;
    }
    CHECK(any_moved);
}

TEST_CASE("CT volume entry composes clamp and minmax oracles") {
    const fs::path dir = temp_dir("ct");
    Volume vol = make_volume(std::vector<double>(32 * 32, 0.0), 1, 32, 32);
    vol.id = "ct0";
    for (std::int64_t i = 0; i < vol.voxels.numel(); ++i) {
        vol.voxels[i] = -300.0 + static_cast<double>(i);  // spans beyond both clamp bounds
    }
    Volume mask = make_volume(std::vector<double>(32 * 32, 0.0), 1, 32, 32);
    mask.id = "ct0_mask";
    mask.voxels[5] = 1.0;
    save_volume(dir / "vol", vol);
    save_volume(dir / "mask", mask);

    DatasetManifest manifest;
    manifest.modality = Modality::CT;
    manifest.base_dir = dir;
    manifest.entries.push_back(ManifestEntry{"ct0", "vol", "mask", std::nullopt, Split::Train});
    auto samples = load_dataset(manifest);
    REQUIRE(samples.size() == 1);

    // oracle: clamp_range then normalize_minmax applied to the loaded volume
    Volume reloaded = load_volume(dir / "vol");
    Volume clamped = clamp_range(reloaded, -200.0, 250.0);
    auto oracle = normalize_minmax(clamped);
    CHECK(samples[0].image.pixels.bit_equal(oracle[0].pixels));
    CHECK(samples[0].image.pixels.max() == 1.0);  // 250-clamped voxels map to grid max
    CHECK(samples[0].image.pixels.min() == 0.0);
    CHECK(samples[0].mask.count() == 1);
}

TEST_CASE("MR volume entry applies the percentile clip before normalize") {
    const fs::path dir = temp_dir("mr");
    Volume vol = make_volume(std::vector<double>(1000, 0.0), 10, 10, 10);
    vol.id = "mr0";
    for (std::int64_t i = 0; i < 1000; ++i) vol.voxels[i] = static_cast<double>(i);
    Volume mask = make_volume(std::vector<double>(1000, 0.0), 10, 10, 10);
    mask.id = "mr0_mask";
    for (std::int64_t s = 0; s < 10; ++s) mask.voxels[s * 100 + 3] = 1.0;
    save_volume(dir / "vol", vol);
    save_volume(dir / "mask", mask);

    DatasetManifest manifest;
    manifest.modality = Modality::MR;
    manifest.base_dir = dir;
    manifest.entries.push_back(ManifestEntry{"mr0", "vol", "mask", std::nullopt, Split::Train});
    auto samples = load_dataset(manifest);
    REQUIRE(samples.size() == 10);

    Volume reloaded = load_volume(dir / "vol");
    auto oracle = normalize_minmax(clip_percentile(reloaded, 0.995));
    for (std::size_t s = 0; s < samples.size(); ++s) {
        CHECK(samples[s].image.pixels.bit_equal(oracle[s].pixels));
    }
}

TEST_CASE("per-entry load errors carry the entry id") {
    const fs::path dir = temp_dir("loaderr");
    auto good = make_phantom(8, 32, 32, 1, 0.3);
    DatasetManifest manifest = save_phantom_dataset(dir, good, {});
    // corrupt the mask with a wrong-shaped image
    Tensor wrong({16, 16});
    write_pgm16(dir / good[0].id / "mask.pgm", wrong);
    try {
        (void)load_dataset(manifest);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(e.id() == good[0].id);
    }
}

TEST_CASE("manifest validation rejects duplicates and missing paths") {
    const fs::path dir = temp_dir("manifest");
    auto samples = make_phantom(12, 32, 32, 1, 0.3);
    DatasetManifest manifest = save_phantom_dataset(dir, samples, {});

    DatasetManifest dup = manifest;
    dup.entries.push_back(dup.entries[0]);
    CHECK_THROWS_AS(dup.validate(), InvalidInputError);

    DatasetManifest missing = manifest;
    missing.entries[0].image = "nope.pgm";
    CHECK_THROWS_AS(missing.validate(), InvalidInputError);

    std::ofstream bad(dir / "bad.json");
    bad << "{ not json";
    bad.close();
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), InvalidInputError);
}

TEST_CASE("loaded samples satisfy range and shape invariants") {
    const fs::path dir = temp_dir("invariants");
    auto samples = make_phantom(21, 40, 48, 6, 0.45);
    DatasetManifest manifest = save_phantom_dataset(dir, samples, {});
    for (const auto& s : load_dataset(manifest)) {
        s.validate();  // throws on any violated invariant
        CHECK(s.image.pixels.min() >= 0.0);
        CHECK(s.image.pixels.max() <= 1.0);
    }
}
