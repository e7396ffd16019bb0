#include "gvs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gvs/errors.hpp"
#include "gvs/io.hpp"
#include "gvs/rng.hpp"

namespace gvs {

using nlohmann::json;

std::string to_string(Modality m) {
    switch (m) {
        case Modality::MR: return "MR";
        case Modality::CT: return "CT";
        case Modality::Phantom: return "PHANTOM";
    }
    return "PHANTOM";
}

Modality modality_from_string(const std::string& s) {
    if (s == "MR") return Modality::MR;
    if (s == "CT") return Modality::CT;
    if (s == "PHANTOM") return Modality::Phantom;
    throw InvalidInputError("unknown modality '" + s + "'");
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw InvalidInputError("unknown split tag '" + s + "'");
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (e.id.empty()) throw InvalidInputError("manifest entry with empty id");
        if (!ids.insert(e.id).second) throw InvalidInputError("duplicate manifest id '" + e.id + "'");
        if (!std::filesystem::exists(base_dir / e.image)) {
            throw InvalidInputError("manifest entry '" + e.id + "': missing image path " + e.image);
        }
        if (!std::filesystem::exists(base_dir / e.mask)) {
            throw InvalidInputError("manifest entry '" + e.id + "': missing mask path " + e.mask);
        }
        if (e.healthy_truth && !std::filesystem::exists(base_dir / *e.healthy_truth)) {
            throw InvalidInputError("manifest entry '" + e.id + "': missing healthy_truth path " + *e.healthy_truth);
        }
    }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidInputError("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        m.modality = modality_from_string(j.at("modality").get<std::string>());
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.id = je.at("id").get<std::string>();
            e.image = je.at("image").get<std::string>();
            e.mask = je.at("mask").get<std::string>();
            if (je.contains("healthy_truth") && !je.at("healthy_truth").is_null()) {
                e.healthy_truth = je.at("healthy_truth").get<std::string>();
            }
            e.split = split_from_string(je.at("split").get<std::string>());
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw InvalidInputError("manifest " + path.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    json j;
    j["modality"] = to_string(manifest.modality);
    j["entries"] = json::array();
    for (const auto& e : manifest.entries) {
        json je;
        je["id"] = e.id;
        je["image"] = e.image;
        je["mask"] = e.mask;
        if (e.healthy_truth) je["healthy_truth"] = *e.healthy_truth;
        je["split"] = to_string(e.split);
        j["entries"].push_back(std::move(je));
    }
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

Volume clip_percentile(const Volume& v, double p) {
    if (v.voxels.numel() == 0) throw InvalidInputError("clip_percentile: empty volume");
    if (!(p > 0.0 && p <= 1.0)) throw InvalidInputError("clip_percentile: p must be in (0, 1]");
    const std::int64_t n = v.voxels.numel();
    std::vector<double> sorted(v.voxels.data(), v.voxels.data() + n);
    std::sort(sorted.begin(), sorted.end());
    // nearest-rank quantile: rank = ceil(p * N), 1-indexed
    std::int64_t rank = static_cast<std::int64_t>(std::ceil(p * static_cast<double>(n)));
    rank = std::clamp<std::int64_t>(rank, 1, n);
    const double q = std::max(0.0, sorted[static_cast<std::size_t>(rank - 1)]);
    Volume out = v;
    for (std::int64_t i = 0; i < n; ++i) {
        out.voxels[i] = std::clamp(out.voxels[i], 0.0, q);
    }
    return out;
}

Volume clamp_range(const Volume& v, double lo, double hi) {
    if (!(lo < hi)) throw InvalidConfigError("clamp_range: lo must be < hi");
    Volume out = v;
    for (std::int64_t i = 0; i < out.voxels.numel(); ++i) {
        out.voxels[i] = std::clamp(out.voxels[i], lo, hi);
    }
    return out;
}

std::vector<ImageGrid> normalize_minmax(const Volume& v) {
    if (v.voxels.numel() == 0) throw InvalidInputError("normalize_minmax: empty volume");
    const double lo = v.voxels.min();
    const double hi = v.voxels.max();
    const double range = hi - lo;
    std::vector<ImageGrid> slices;
    const std::int64_t d = v.depth(), h = v.height(), w = v.width();
    slices.reserve(static_cast<std::size_t>(d));
    for (std::int64_t s = 0; s < d; ++s) {
        ImageGrid g(h, w);
        const double* src = v.voxels.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
            g.pixels[i] = range > 0.0 ? (src[i] - lo) / range : 0.0;
        }
        slices.push_back(std::move(g));
    }
    return slices;
}

namespace {

struct Ellipse {
    double cy, cx;     // center, pixels
    double ry, rx;     // radii, pixels
    double cos_t, sin_t;

    double rho(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = dy * cos_t + dx * sin_t;
        const double v = -dy * sin_t + dx * cos_t;
        return std::sqrt((u / ry) * (u / ry) + (v / rx) * (v / rx));
    }

    // Maps ellipse-local polar coordinates back to grid coordinates.
    void local_to_grid(double rho_frac, double angle, double& y, double& x) const {
        const double u = rho_frac * ry * std::cos(angle);
        const double v = rho_frac * rx * std::sin(angle);
        y = cy + u * cos_t - v * sin_t;
        x = cx + u * sin_t + v * cos_t;
    }
};

Ellipse sample_ellipse(Rng& rng, double cy, double cx, double ry, double rx) {
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    return Ellipse{cy, cx, ry, rx, std::cos(theta), std::sin(theta)};
}

// smoothstep falloff on the ellipse metric: 1 inside rho <= 1 - eps,
// 0 outside rho >= 1 + eps.
double soft_inside(const Ellipse& e, double y, double x, double eps) {
    const double rho = e.rho(y, x);
    double s = (1.0 + eps - rho) / (2.0 * eps);
    s = std::clamp(s, 0.0, 1.0);
    return s * s * (3.0 - 2.0 * s);
}

}  // namespace

std::vector<Sample> make_phantom(std::uint64_t seed, std::int64_t height, std::int64_t width, std::int64_t count,
                                 double lesion_amp, const PhantomConfig& config) {
    if (height < 32 || width < 32) throw InvalidInputError("make_phantom: size must be at least 32x32");
    if (count < 1) throw InvalidInputError("make_phantom: count must be >= 1");
    if (!(lesion_amp >= 0.0 && lesion_amp <= 1.0)) {
        throw InvalidInputError("make_phantom: lesion_amp must be in [0, 1]");
    }
    const double amp_q = quantize16(lesion_amp);
    const double min_dim = static_cast<double>(std::min(height, width));

    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (std::int64_t k = 0; k < count; ++k) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));

        const double cy = 0.5 * static_cast<double>(height) * (1.0 + 0.08 * (rng.uniform() - 0.5));
        const double cx = 0.5 * static_cast<double>(width) * (1.0 + 0.08 * (rng.uniform() - 0.5));
        const double ry = rng.uniform(config.body_radius_lo, config.body_radius_hi) * static_cast<double>(height);
        const double rx = rng.uniform(config.body_radius_lo, config.body_radius_hi) * static_cast<double>(width);
        const Ellipse body = sample_ellipse(rng, cy, cx, ry, rx);
        const double body_eps = 1.5 / std::min(ry, rx);
        const double base = rng.uniform(config.body_intensity_lo, config.body_intensity_hi);

        const int n_structs =
            config.structures_lo + static_cast<int>(rng.uniform_int(
                                       static_cast<std::uint64_t>(config.structures_hi - config.structures_lo + 1)));
        std::vector<Ellipse> structs;
        std::vector<double> deltas;
        for (int si = 0; si < n_structs; ++si) {
            const double rho_frac = 0.6 * std::sqrt(rng.uniform());
            const double angle = rng.uniform(0.0, 6.283185307179586);
            double sy, sx;
            body.local_to_grid(rho_frac, angle, sy, sx);
            const double sr1 = rng.uniform(0.08, 0.2) * min_dim;
            const double sr2 = rng.uniform(0.08, 0.2) * min_dim;
            structs.push_back(sample_ellipse(rng, sy, sx, sr1, sr2));
            const double mag = rng.uniform(0.08, 0.22);
            deltas.push_back(rng.uniform() < 0.5 ? -mag : mag);
        }

        // low-amplitude smooth texture so the anatomy is not piecewise flat
        const double tex_amp = rng.uniform(0.02, 0.04);
        const double tex_fy = rng.uniform(1.0, 2.5);
        const double tex_fx = rng.uniform(1.0, 2.5);
        const double tex_py = rng.uniform(0.0, 6.283185307179586);
        const double tex_px = rng.uniform(0.0, 6.283185307179586);

        // anatomy rasterized onto the 16-bit storage grid; the raw integer
        // raster is kept so the lesion shift below stays grid-exact
        ImageGrid healthy(height, width);
        std::vector<int> raw_healthy(static_cast<std::size_t>(height * width));
        for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) {
                const double fy = static_cast<double>(y);
                const double fx = static_cast<double>(x);
                const double body_w = soft_inside(body, fy, fx, body_eps);
                double v = 0.0;
                if (body_w > 0.0) {
                    v = base;
                    for (std::size_t si = 0; si < structs.size(); ++si) {
                        const double struct_eps = 2.0 / std::min(structs[si].ry, structs[si].rx);
                        v += deltas[si] * soft_inside(structs[si], fy, fx, struct_eps);
                    }
                    v += tex_amp *
                         std::sin(6.283185307179586 * tex_fy * fy / static_cast<double>(height) + tex_py) *
                         std::sin(6.283185307179586 * tex_fx * fx / static_cast<double>(width) + tex_px);
                    v = std::clamp(v * body_w, 0.0, 1.0);
                }
                const int raw = static_cast<int>(v * 65535.0 + 0.5);
                raw_healthy[static_cast<std::size_t>(y * width + x)] = raw;
                healthy.at(y, x) = static_cast<double>(raw) / 65535.0;
            }
        }

        // lesions: strictly inside the body (boundary probes well within the
        // bright region)
        const int n_lesions = rng.uniform() < config.two_lesion_prob ? 2 : 1;
        std::vector<Ellipse> lesions;
        for (int li = 0; li < n_lesions; ++li) {
            bool placed = false;
            for (int attempt = 0; attempt < config.max_placement_tries && !placed; ++attempt) {
                const double rho_frac = 0.55 * std::sqrt(rng.uniform());
                const double angle = rng.uniform(0.0, 6.283185307179586);
                double ly, lx;
                body.local_to_grid(rho_frac, angle, ly, lx);
                const double lr1 = rng.uniform(config.lesion_radius_lo, config.lesion_radius_hi) * min_dim;
                const double lr2 = rng.uniform(config.lesion_radius_lo, config.lesion_radius_hi) * min_dim;
                Ellipse lesion = sample_ellipse(rng, ly, lx, lr1, lr2);
                bool inside = true;
                for (int bp = 0; bp < 16 && inside; ++bp) {
                    double by, bx;
                    lesion.local_to_grid(1.0, 6.283185307179586 * bp / 16.0, by, bx);
                    if (body.rho(by, bx) > 0.85) inside = false;
                }
                if (inside) {
                    lesions.push_back(lesion);
                    placed = true;
                }
            }
            if (!placed) {
                throw GenerationError("make_phantom: lesion cannot fit inside anatomy at requested size");
            }
        }

        LesionMask mask(height, width);
        std::int64_t mask_count = 0;
        for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) {
                for (const auto& lesion : lesions) {
                    if (lesion.rho(static_cast<double>(y), static_cast<double>(x)) <= 1.0) {
                        mask.pixels.at(y, x) = 1.0;
                        ++mask_count;
                        break;
                    }
                }
            }
        }
        if (mask_count == 0) {
            throw GenerationError("make_phantom: lesion cannot fit inside anatomy at requested size");
        }

        // lesion shift in integer raster space: every value stays on the
        // 1/65535 grid, so container round-trips are bit-exact and
        // raw(image) - raw(healthy) == min(raw(amp), 65535 - raw(healthy))
        const int amp_raw = static_cast<int>(amp_q * 65535.0 + 0.5);
        ImageGrid image = healthy;
        for (std::int64_t i = 0; i < image.pixels.numel(); ++i) {
            if (mask.pixels[i] != 0.0) {
                const int raw = std::min(raw_healthy[static_cast<std::size_t>(i)] + amp_raw, 65535);
                image.pixels[i] = static_cast<double>(raw) / 65535.0;
            }
        }

        Sample s;
        s.image = std::move(image);
        s.mask = std::move(mask);
        s.healthy_truth = std::move(healthy);
        std::ostringstream id;
        id << "phantom_" << seed << '_';
        id.width(4);
        id.fill('0');
        id << k;
        s.id = id.str();
        s.validate();
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace {

LesionMask threshold_mask(const Tensor& t) {
    LesionMask m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.numel(); ++i) m.pixels[i] = t[i] >= 0.5 ? 1.0 : 0.0;
    return m;
}

std::vector<Sample> load_phantom_entry(const DatasetManifest& manifest, const ManifestEntry& e) {
    ImageGrid image{read_pgm16(manifest.base_dir / e.image)};
    LesionMask mask = threshold_mask(read_pgm16(manifest.base_dir / e.mask));
    if (!image.pixels.same_shape(mask.pixels)) {
        throw InvalidInputError("image/mask shape mismatch");
    }
    Sample s;
    s.image = std::move(image);
    s.mask = std::move(mask);
    if (e.healthy_truth) {
        ImageGrid truth{read_pgm16(manifest.base_dir / *e.healthy_truth)};
        if (!truth.pixels.same_shape(s.image.pixels)) {
            throw InvalidInputError("healthy_truth shape mismatch");
        }
        s.healthy_truth = std::move(truth);
    }
    s.id = e.id;
    s.validate();
    return {std::move(s)};
}

std::vector<Sample> load_volume_entry(const DatasetManifest& manifest, const ManifestEntry& e) {
    Volume image_vol = load_volume(manifest.base_dir / e.image);
    Volume mask_vol = load_volume(manifest.base_dir / e.mask);
    image_vol.validate();
    if (!image_vol.voxels.same_shape(mask_vol.voxels)) {
        throw InvalidInputError("image/mask volume shape mismatch");
    }

    Volume pre = manifest.modality == Modality::MR ? clip_percentile(image_vol, 0.995)
                                                   : clamp_range(image_vol, -200.0, 250.0);
    std::vector<ImageGrid> slices = normalize_minmax(pre);

    std::vector<Sample> out;
    const std::int64_t h = mask_vol.height(), w = mask_vol.width();
    for (std::size_t s = 0; s < slices.size(); ++s) {
        Tensor mslice({h, w});
        const double* src = mask_vol.voxels.data() + static_cast<std::int64_t>(s) * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) mslice[i] = src[i];
        LesionMask mask = threshold_mask(mslice);
        // skip all-background slices: no anatomy and no annotation
        if (slices[s].pixels.max() == 0.0 && mask.count() == 0) continue;
        Sample sample;
        sample.image = std::move(slices[s]);
        sample.mask = std::move(mask);
        std::ostringstream id;
        id << e.id << "_s";
        id.width(3);
        id.fill('0');
        id << s;
        sample.id = id.str();
        sample.validate();
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace

std::vector<Sample> load_dataset(const DatasetManifest& manifest, std::optional<Split> split,
                                 std::optional<std::uint64_t> shuffle_seed) {
    std::vector<Sample> samples;
    for (const auto& e : manifest.entries) {
        if (split && e.split != *split) continue;
        try {
            std::vector<Sample> loaded = manifest.modality == Modality::Phantom
                                             ? load_phantom_entry(manifest, e)
                                             : load_volume_entry(manifest, e);
            for (auto& s : loaded) samples.push_back(std::move(s));
        } catch (const LoadError&) {
            throw;
        } catch (const std::exception& ex) {
            throw LoadError(e.id, ex.what());
        }
    }
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(samples);
    }
    return samples;
}

DatasetManifest save_phantom_dataset(const std::filesystem::path& dir, const std::vector<Sample>& train,
                                     const std::vector<Sample>& test) {
    std::filesystem::create_directories(dir);
    DatasetManifest manifest;
    manifest.modality = Modality::Phantom;
    manifest.base_dir = dir;

    auto write_split = [&](const std::vector<Sample>& samples, Split split) {
        for (const auto& s : samples) {
            const std::filesystem::path sub = dir / s.id;
            std::filesystem::create_directories(sub);
            write_pgm16(sub / "image.pgm", s.image.pixels);
            write_pgm16(sub / "mask.pgm", s.mask.pixels);
            ManifestEntry e;
            e.id = s.id;
            e.image = s.id + "/image.pgm";
            e.mask = s.id + "/mask.pgm";
            if (s.healthy_truth) {
                write_pgm16(sub / "healthy.pgm", s.healthy_truth->pixels);
                e.healthy_truth = s.id + "/healthy.pgm";
            }
            e.split = split;
            manifest.entries.push_back(std::move(e));
        }
    };
    write_split(train, Split::Train);
    write_split(test, Split::Test);
    save_manifest(manifest, dir / "manifest.json");
    return manifest;
}

void save_volume(const std::filesystem::path& dir, const Volume& v) {
    v.validate();
    std::filesystem::create_directories(dir);
    const double lo = v.voxels.min();
    const double hi = v.voxels.max();
    const double scale = hi > lo ? hi - lo : 1.0;

    json j;
    j["id"] = v.id;
    j["scale"] = scale;
    j["offset"] = lo;
    j["spacing"] = v.spacing;
    j["slices"] = json::array();

    const std::int64_t h = v.height(), w = v.width();
    for (std::int64_t s = 0; s < v.depth(); ++s) {
        Tensor slice({h, w});
        const double* src = v.voxels.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) slice[i] = (src[i] - lo) / scale;
        std::ostringstream name;
        name << "slice_";
        name.width(3);
        name.fill('0');
        name << s << ".pgm";
        write_pgm16(dir / name.str(), slice);
        j["slices"].push_back(name.str());
    }
    std::ofstream out(dir / "volume.json");
    if (!out) throw InvalidInputError("cannot write volume manifest in " + dir.string());
    out << j.dump(2) << '\n';
}

Volume load_volume(const std::filesystem::path& dir) {
    std::ifstream in(dir / "volume.json");
    if (!in) throw InvalidInputError("cannot open volume manifest in " + dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidInputError("malformed volume manifest in " + dir.string() + ": " + e.what());
    }
    const double scale = j.at("scale").get<double>();
    const double offset = j.at("offset").get<double>();
    const auto slice_names = j.at("slices").get<std::vector<std::string>>();
    if (slice_names.empty()) throw InvalidInputError("volume with no slices in " + dir.string());

    std::vector<Tensor> slices;
    slices.reserve(slice_names.size());
    for (const auto& name : slice_names) {
        slices.push_back(read_pgm16(dir / name));
        if (!slices.back().same_shape(slices.front())) {
            throw InvalidInputError("inconsistent slice shapes in " + dir.string());
        }
    }
    const std::int64_t d = static_cast<std::int64_t>(slices.size());
    const std::int64_t h = slices.front().dim(0), w = slices.front().dim(1);
    Volume v(Tensor({d, h, w}), j.at("id").get<std::string>());
    if (j.contains("spacing")) v.spacing = j.at("spacing").get<std::vector<double>>();
    for (std::int64_t s = 0; s < d; ++s) {
        double* dst = v.voxels.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) dst[i] = slices[static_cast<std::size_t>(s)][i] * scale + offset;
    }
    return v;
}

}  // namespace gvs
