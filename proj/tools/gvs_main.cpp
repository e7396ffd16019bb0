#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gvs/checkpoint.hpp"
#include "gvs/config.hpp"
#include "gvs/dataset.hpp"
#include "gvs/enhancement.hpp"
#include "gvs/errors.hpp"
#include "gvs/evaluation.hpp"
#include "gvs/io.hpp"
#include "gvs/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gvs;

namespace {

bool verbose() {
    const char* env = std::getenv("GVS_VERBOSE");
    return env && std::string(env) != "0";
}

void log_line(const std::string& msg) {
    if (verbose()) std::cerr << "[gvs] " << msg << '\n';
}

// every subcommand records its fully resolved parameters next to its outputs
void write_resolved(const fs::path& out_dir, json resolved) {
    resolved["config_hash"] = config_hash(resolved);
    fs::create_directories(out_dir);
    write_json_file(resolved, out_dir / "config.resolved.json");
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::string token;
    std::istringstream ss(csv);
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        try {
            out.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw InvalidConfigError(std::string(what) + ": cannot parse '" + token + "'");
        }
    }
    if (out.empty()) throw InvalidConfigError(std::string(what) + ": empty list");
    return out;
}

std::pair<std::int64_t, std::int64_t> parse_size(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw InvalidConfigError("--size expects HxW, e.g. 64x64");
    try {
        return {std::stoll(text.substr(0, x)), std::stoll(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw InvalidConfigError("--size expects HxW, e.g. 64x64");
    }
}

std::optional<Split> parse_split(const std::string& s) {
    if (s == "all") return std::nullopt;
    return split_from_string(s);
}

TrainConfig load_train_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : train_config_from_json(load_json_file(path));
}

struct LoadedGenerator {
    ParamSet params;
    GeneratorSpec spec;
    std::string config_hash;
};

LoadedGenerator load_generator(const std::string& ckpt_path) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    return LoadedGenerator{std::move(ckpt.state.generator), ckpt.config.generator,
                           config_hash(to_json(ckpt.config))};
}

double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// --- subcommand bodies -------------------------------------------------------

int cmd_phantom_gen(std::uint64_t seed, const std::string& size, std::int64_t count, std::int64_t test_count,
                    double amp, const std::string& out) {
    const auto [h, w] = parse_size(size);
    auto all = make_phantom(seed, h, w, count + test_count, amp);
    std::vector<Sample> train(all.begin(), all.begin() + count);
    std::vector<Sample> test(all.begin() + count, all.end());
    save_phantom_dataset(out, train, test);
    write_resolved(out, json{{"subcommand", "phantom-gen"},
                             {"seed", seed},
                             {"size", size},
                             {"count", count},
                             {"test_count", test_count},
                             {"amp", amp}});
    log_line("wrote " + std::to_string(all.size()) + " phantom samples to " + out);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& out,
              const std::string& resume, const std::string& split) {
    TrainConfig cfg = load_train_config(config_path);
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, parse_split(split));

    json resolved = json{{"subcommand", "train"}, {"data", data_path}, {"split", split}, {"config", to_json(cfg)}};
    write_resolved(out, resolved);

    std::optional<TrainState> start;
    if (!resume.empty()) {
        LoadedCheckpoint ckpt = load_checkpoint(resume);
        const int extended_epochs = cfg.epochs;
        cfg = ckpt.config;
        cfg.epochs = extended_epochs;
        start = std::move(ckpt.state);
    }
    TrainState state = train_gvs(samples, cfg, fs::path(out), std::move(start));
    log_line("trained " + std::to_string(state.epoch) + " epochs, " + std::to_string(state.global_step) + " steps");
    return 0;
}

int cmd_synthesize(const std::string& gen_path, const std::string& data_path, const std::string& out,
                   const std::string& split) {
    LoadedGenerator gen = load_generator(gen_path);
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, parse_split(split));

    fs::create_directories(out);
    std::ofstream index(fs::path(out) / "index.csv");
    index << "id,synth,diff\n";
    for (const auto& s : samples) {
        ImageGrid x_s = generator_forward(s.image, gen.params, gen.spec, RunMode::Eval);
        ImageGrid diff(s.image.height(), s.image.width());
        for (std::int64_t i = 0; i < diff.pixels.numel(); ++i) {
            diff.pixels[i] = std::abs(s.image.pixels[i] - x_s.pixels[i]);
        }
        const std::string synth_name = s.id + "_synth.pgm";
        const std::string diff_name = s.id + "_diff.pgm";
        write_pgm16(fs::path(out) / synth_name, x_s.pixels);
        write_pgm16(fs::path(out) / diff_name, diff.pixels);
        write_pgm16(fs::path(out) / (s.id + "_mask.pgm"), s.mask.pixels);
        index << s.id << ',' << synth_name << ',' << diff_name << '\n';
    }
    write_resolved(out, json{{"subcommand", "synthesize"},
                             {"gen", gen_path},
                             {"data", data_path},
                             {"split", split},
                             {"generator_config_hash", gen.config_hash}});
    log_line("synthesized " + std::to_string(samples.size()) + " images");
    return 0;
}

int cmd_enhance(const std::string& gen_path, double alpha, const std::string& data_path, const std::string& out,
                const std::string& sign_mode, bool no_clamp, const std::string& split) {
    if (sign_mode != "paper_literal" && sign_mode != "pathological_residue") {
        throw InvalidConfigError("--sign-mode must be paper_literal or pathological_residue");
    }
    LoadedGenerator gen = load_generator(gen_path);
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, parse_split(split));

    EnhanceConfig cfg;
    cfg.sign_mode = sign_mode == "paper_literal" ? SignMode::PaperLiteral : SignMode::PathologicalResidue;
    cfg.clamp_output = !no_clamp;

    fs::create_directories(out);
    std::ofstream index(fs::path(out) / "index.csv");
    index << "id,enhanced\n";
    for (const auto& s : samples) {
        ImageGrid x_s = generator_forward(s.image, gen.params, gen.spec, RunMode::Eval);
        ImageGrid enhanced = enhance(s.image, x_s, alpha, cfg);
        const std::string name = s.id + "_enhanced.pgm";
        write_pgm16(fs::path(out) / name, enhanced.pixels);
        index << s.id << ',' << name << '\n';
    }
    write_resolved(out, json{{"subcommand", "enhance"},
                             {"gen", gen_path},
                             {"data", data_path},
                             {"alpha", alpha},
                             {"split", split},
                             {"enhance", to_json(cfg)},
                             {"generator_config_hash", gen.config_hash}});
    return 0;
}

int cmd_downstream(const std::string& gen_path, const std::string& alphas_csv, const std::string& data_path,
                   const std::string& out_csv, const std::string& seg_config_path, const std::string& seeds_csv,
                   const std::string& sign_mode) {
    LoadedGenerator gen = load_generator(gen_path);
    DatasetManifest manifest = load_manifest(data_path);
    auto train = load_dataset(manifest, Split::Train);
    auto test = load_dataset(manifest, Split::Test);

    std::vector<double> alphas = parse_double_list(alphas_csv, "--alphas");
    std::vector<double> unique_alphas;
    for (double a : alphas) {
        if (std::find(unique_alphas.begin(), unique_alphas.end(), a) != unique_alphas.end()) {
            std::cerr << "[gvs] warning: duplicate alpha " << a << " ignored\n";
            continue;
        }
        unique_alphas.push_back(a);
    }
    if (std::find(unique_alphas.begin(), unique_alphas.end(), 0.0) == unique_alphas.end()) {
        std::cerr << "[gvs] warning: alpha grid lacks 0.0; inserting it as the delta baseline\n";
        unique_alphas.insert(unique_alphas.begin(), 0.0);
    }

    SegTrainConfig seg_cfg =
        seg_config_path.empty() ? SegTrainConfig{} : seg_train_config_from_json(load_json_file(seg_config_path));
    std::vector<double> seeds = seeds_csv.empty() ? std::vector<double>{static_cast<double>(seg_cfg.seed)}
                                                  : parse_double_list(seeds_csv, "--seeds");

    EnhanceConfig enh_cfg;
    enh_cfg.sign_mode = sign_mode == "paper_literal" ? SignMode::PaperLiteral : SignMode::PathologicalResidue;
    enh_cfg.alpha_grid = unique_alphas;

    const fs::path out_path(out_csv);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream csv(out_path);
    if (!csv) throw InvalidInputError("cannot write " + out_csv);
    csv << "alpha,mean_dice,delta_vs_baseline,seed\n";
    char buf[160];
    for (double seed : seeds) {
        SegTrainConfig per_seed = seg_cfg;
        per_seed.seed = static_cast<std::uint64_t>(seed);
        double baseline = 0.0;
        for (double alpha : unique_alphas) {
            DownstreamResult r = run_downstream(train, test, gen.params, gen.spec, alpha, per_seed, enh_cfg);
            if (alpha == 0.0) baseline = r.mean_dice;
            r.delta_vs_baseline = r.mean_dice - baseline;
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%llu\n", alpha, r.mean_dice, r.delta_vs_baseline,
                          static_cast<unsigned long long>(per_seed.seed));
            csv << buf;
            log_line("downstream alpha=" + std::to_string(alpha) + " seed=" + std::to_string(per_seed.seed) +
                     " dice=" + std::to_string(r.mean_dice));
        }
    }
    if (out_path.has_parent_path()) {
        write_resolved(out_path.parent_path(), json{{"subcommand", "downstream"},
                                                    {"gen", gen_path},
                                                    {"data", data_path},
                                                    {"alphas", unique_alphas},
                                                    {"seeds", seeds},
                                                    {"seg", to_json(seg_cfg)},
                                                    {"sign_mode", sign_mode}});
    }
    return 0;
}

int cmd_eval_identity(const std::string& gen_path, const std::string& data_path, const std::string& out_path,
                      const std::string& split) {
    LoadedGenerator gen = load_generator(gen_path);
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, parse_split(split));
    if (samples.empty()) throw InvalidInputError("eval-identity: no samples in split '" + split + "'");

    json per_image = json::array();
    std::vector<double> psnrs, ssims;
    for (const auto& s : samples) {
        ImageGrid x_s = generator_forward(s.image, gen.params, gen.spec, RunMode::Eval);
        const double p = mpsnr(s.image, x_s, s.mask);
        const double m = mssim(s.image, x_s, s.mask);
        psnrs.push_back(p);
        ssims.push_back(m);
        per_image.push_back(json{{"id", s.id}, {"mpsnr", p}, {"mssim", m}});
    }

    json resolved = json{{"subcommand", "eval-identity"},
                         {"gen", gen_path},
                         {"data", data_path},
                         {"split", split},
                         {"generator_config_hash", gen.config_hash}};
    MetricReport report;
    report.mpsnr_mean = mean_of(psnrs);
    report.mssim_mean = mean_of(ssims);
    report.config_hash = config_hash(resolved);
    report.validate();

    json out = to_json(report);
    out["per_image"] = std::move(per_image);
    const fs::path out_file(out_path);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    write_json_file(out, out_file);
    log_line("MPSNR " + std::to_string(*report.mpsnr_mean) + "  MSSIM " + std::to_string(*report.mssim_mean));
    return 0;
}

// flat directory of PGMs, sorted by filename
std::vector<fs::path> list_pgms(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InvalidInputError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

json adice_report_json(const ADiceResult& result, const json& resolved) {
    MetricReport report;
    report.adice_mean = result.adice;
    report.adice_repeats = result.per_repeat;
    report.dice_curves = result.curves;
    report.config_hash = config_hash(resolved);
    report.validate();
    return to_json(report);
}

int cmd_eval_adice(const std::string& images_dir, const std::string& masks_dir, const std::string& config_path,
                   const std::string& out_path) {
    ADiceConfig cfg = config_path.empty() ? ADiceConfig{} : adice_config_from_json(load_json_file(config_path));

    auto image_files = list_pgms(images_dir);
    auto mask_files = list_pgms(masks_dir);
    if (image_files.size() != mask_files.size() || image_files.empty()) {
        throw InvalidInputError("eval-adice: image/mask directories must hold the same nonzero file count");
    }
    std::vector<ImageGrid> images;
    std::vector<LesionMask> masks;
    for (std::size_t i = 0; i < image_files.size(); ++i) {
        images.push_back(ImageGrid{read_pgm16(image_files[i])});
        Tensor raw = read_pgm16(mask_files[i]);
        LesionMask m(raw.dim(0), raw.dim(1));
        for (std::int64_t k = 0; k < raw.numel(); ++k) m.pixels[k] = raw[k] >= 0.5 ? 1.0 : 0.0;
        masks.push_back(std::move(m));
    }

    ADiceResult result = adice(images, masks, cfg);
    json resolved = json{{"subcommand", "eval-adice"},
                         {"images", images_dir},
                         {"masks", masks_dir},
                         {"config", to_json(cfg)}};
    const fs::path out_file(out_path);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    write_json_file(adice_report_json(result, resolved), out_file);
    log_line("A-Dice " + std::to_string(result.adice));
    return 0;
}

int cmd_eval_counterfeit(const std::string& mode, const std::string& data_path, std::uint64_t seed,
                         const std::string& out_dir, const std::string& adice_config_path, const std::string& split) {
    if (mode != "meanfill" && mode != "noisefill") {
        throw InvalidConfigError("--mode must be meanfill or noisefill");
    }
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, parse_split(split));
    if (samples.empty()) throw InvalidInputError("eval-counterfeit: empty dataset");

    fs::create_directories(out_dir);
    const fs::path images_dir = fs::path(out_dir) / "images";
    const fs::path masks_dir = fs::path(out_dir) / "masks";
    fs::create_directories(images_dir);
    fs::create_directories(masks_dir);

    std::vector<ImageGrid> images;
    std::vector<LesionMask> masks;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        ImageGrid fake = mode == "meanfill" ? counterfeit_meanfill(s.image, s.mask)
                                            : counterfeit_noisefill(s.image, s.mask, seed + i);
        write_pgm16(images_dir / (s.id + ".pgm"), fake.pixels);
        write_pgm16(masks_dir / (s.id + ".pgm"), s.mask.pixels);
        images.push_back(std::move(fake));
        masks.push_back(s.mask);
    }

    json resolved = json{{"subcommand", "eval-counterfeit"},
                         {"mode", mode},
                         {"data", data_path},
                         {"seed", seed},
                         {"split", split}};
    if (!adice_config_path.empty()) {
        ADiceConfig cfg = adice_config_from_json(load_json_file(adice_config_path));
        ADiceResult result = adice(images, masks, cfg);
        resolved["adice_config"] = to_json(cfg);
        write_json_file(adice_report_json(result, resolved), fs::path(out_dir) / "report.json");
        log_line("counterfeit " + mode + " A-Dice " + std::to_string(result.adice));
    }
    write_resolved(out_dir, resolved);
    return 0;
}

int cmd_sweep_lambda(const std::string& lambdas_csv, const std::string& config_path, const std::string& data_path,
                     const std::string& out_dir, const std::string& adice_config_path) {
    std::vector<double> lambdas_raw = parse_double_list(lambdas_csv, "--lambdas");
    std::vector<double> lambdas;
    for (double l : lambdas_raw) {
        if (std::find(lambdas.begin(), lambdas.end(), l) != lambdas.end()) {
            std::cerr << "[gvs] warning: duplicate lambda " << l << " ignored\n";
            continue;
        }
        lambdas.push_back(l);
    }

    TrainConfig base = load_train_config(config_path);
    ADiceConfig adice_cfg =
        adice_config_path.empty() ? ADiceConfig{} : adice_config_from_json(load_json_file(adice_config_path));
    DatasetManifest manifest = load_manifest(data_path);
    auto samples = load_dataset(manifest, Split::Train);

    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "sweep.csv");
    csv << "lambda,mpsnr,mssim,adice,status\n";
    char buf[200];
    for (double lambda : lambdas) {
        try {
            TrainConfig cfg = base;
            cfg.lambda = lambda;
            const fs::path run_dir = fs::path(out_dir) / ("lambda_" + std::to_string(lambda));
            TrainState state = train_gvs(samples, cfg, run_dir);

            std::vector<double> psnrs, ssims;
            std::vector<ImageGrid> synth;
            std::vector<LesionMask> masks;
            for (const auto& s : samples) {
                ImageGrid x_s = generator_forward(s.image, state.generator, cfg.generator, RunMode::Eval);
                psnrs.push_back(mpsnr(s.image, x_s, s.mask));
                ssims.push_back(mssim(s.image, x_s, s.mask));
                synth.push_back(std::move(x_s));
                masks.push_back(s.mask);
            }
            ADiceResult healthiness = adice(synth, masks, adice_cfg);
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,ok\n", lambda, mean_of(psnrs), mean_of(ssims),
                          healthiness.adice);
            csv << buf;
        } catch (const std::exception& e) {
            // per-arm failures recorded; the sweep continues
            csv << lambda << ",,,,failed\n";
            std::cerr << "[gvs] lambda " << lambda << " failed: " << e.what() << '\n';
        }
    }
    write_resolved(out_dir, json{{"subcommand", "sweep-lambda"},
                                 {"lambdas", lambdas},
                                 {"data", data_path},
                                 {"config", to_json(base)},
                                 {"adice_config", to_json(adice_cfg)}});
    return 0;
}

int cmd_report(const std::string& runs_csv, const std::string& out_path) {
    std::vector<std::string> dirs;
    std::string token;
    std::istringstream ss(runs_csv);
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) dirs.push_back(token);
    }
    if (dirs.empty()) throw InvalidInputError("report: empty run-directory list");

    struct Row {
        std::string dir;
        std::optional<double> mpsnr, mssim, adice_mean, adice_std;
        bool ok = false;
    };
    std::vector<Row> rows;
    for (const auto& dir : dirs) {
        Row row;
        row.dir = dir;
        const fs::path report_file = fs::path(dir) / "report.json";
        if (fs::exists(report_file)) {
            try {
                json j = load_json_file(report_file);
                if (j.contains("mpsnr")) row.mpsnr = j.at("mpsnr").get<double>();
                if (j.contains("mssim")) row.mssim = j.at("mssim").get<double>();
                if (j.contains("adice")) {
                    row.adice_mean = j.at("adice").get<double>();
                    if (j.contains("adice_repeats")) {
                        row.adice_std = sample_std(j.at("adice_repeats").get<std::vector<double>>());
                    }
                }
                row.ok = true;
            } catch (const std::exception& e) {
                std::cerr << "[gvs] warning: " << report_file << ": " << e.what() << '\n';
            }
        }
        rows.push_back(std::move(row));
    }

    const fs::path out_file(out_path);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    std::ofstream md(out_file);
    if (!md) throw InvalidInputError("cannot write " + out_path);
    md << "| run | MPSNR | MSSIM | A-Dice |\n|---|---|---|---|\n";
    std::ofstream csv(out_file.string() + ".csv");
    csv << "run,mpsnr,mssim,adice_mean,adice_std,status\n";
    char buf[64];
    auto fmt = [&buf](std::optional<double> v) -> std::string {
        if (!v) return "-";
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return buf;
    };
    for (const auto& row : rows) {
        md << "| " << row.dir << " | " << fmt(row.mpsnr) << " | " << fmt(row.mssim) << " | ";
        if (row.adice_mean) {
            md << fmt(row.adice_mean);
            if (row.adice_std) md << " +/- " << fmt(row.adice_std);
        } else {
            md << (row.ok ? "-" : "MISSING");
        }
        md << " |\n";
        csv << row.dir << ',' << (row.mpsnr ? std::to_string(*row.mpsnr) : "") << ','
            << (row.mssim ? std::to_string(*row.mssim) : "") << ','
            << (row.adice_mean ? std::to_string(*row.adice_mean) : "") << ','
            << (row.adice_std ? std::to_string(*row.adice_std) : "") << ',' << (row.ok ? "ok" : "missing") << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generator-versus-segmentor pseudo-healthy synthesis toolkit"};
    app.require_subcommand(1);

    // phantom-gen
    std::uint64_t pg_seed = 0;
    std::string pg_size = "64x64", pg_out;
    std::int64_t pg_count = 16, pg_test = 0;
    double pg_amp = 0.4;
    auto* pg = app.add_subcommand("phantom-gen", "generate a deterministic phantom dataset");
    pg->add_option("--seed", pg_seed, "rng seed");
    pg->add_option("--size", pg_size, "HxW, e.g. 64x64");
    pg->add_option("--count", pg_count, "training sample count")->required();
    pg->add_option("--test-count", pg_test, "additional test sample count");
    pg->add_option("--amp", pg_amp, "lesion intensity shift in [0, 1]")->required();
    pg->add_option("--out", pg_out, "output dataset directory")->required();

    // train
    std::string tr_config, tr_data, tr_out, tr_resume, tr_split = "train";
    auto* tr = app.add_subcommand("train", "alternating adversarial training");
    tr->add_option("--config", tr_config, "TrainConfig JSON (defaults when omitted)");
    tr->add_option("--data", tr_data, "dataset manifest JSON")->required();
    tr->add_option("--out", tr_out, "run directory")->required();
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    tr->add_option("--split", tr_split, "train|test|all (default train)");

    // synthesize
    std::string sy_gen, sy_data, sy_out, sy_split = "all";
    auto* sy = app.add_subcommand("synthesize", "write pseudo-healthy images and difference maps");
    sy->add_option("--gen", sy_gen, "checkpoint with the generator")->required();
    sy->add_option("--data", sy_data, "dataset manifest")->required();
    sy->add_option("--out", sy_out, "output directory")->required();
    sy->add_option("--split", sy_split, "train|test|all");

    // enhance
    std::string en_gen, en_data, en_out, en_sign = "pathological_residue", en_split = "all";
    double en_alpha = 0.0;
    bool en_noclamp = false;
    auto* en = app.add_subcommand("enhance", "write contrast-enhanced images");
    en->add_option("--gen", en_gen)->required();
    en->add_option("--alpha", en_alpha, "enhancement degree")->required();
    en->add_option("--in", en_data, "dataset manifest")->required();
    en->add_option("--out", en_out)->required();
    en->add_option("--sign-mode", en_sign, "pathological_residue|paper_literal");
    en->add_flag("--no-clamp", en_noclamp, "skip output clamping");
    en->add_option("--split", en_split, "train|test|all");

    // downstream
    std::string dn_gen, dn_alphas = "0,0.3,0.5,0.7,1.0", dn_data, dn_out, dn_segcfg, dn_seeds,
                dn_sign = "pathological_residue";
    auto* dn = app.add_subcommand("downstream", "train downstream segmentors on enhanced images");
    dn->add_option("--gen", dn_gen)->required();
    dn->add_option("--alphas", dn_alphas, "comma-separated alpha grid");
    dn->add_option("--data", dn_data, "dataset manifest with train/test splits")->required();
    dn->add_option("--out", dn_out, "results CSV path")->required();
    dn->add_option("--seg-config", dn_segcfg, "SegTrainConfig JSON");
    dn->add_option("--seeds", dn_seeds, "comma-separated seeds (default: config seed)");
    dn->add_option("--sign-mode", dn_sign, "pathological_residue|paper_literal");

    // eval-identity
    std::string ei_gen, ei_data, ei_out, ei_split = "test";
    auto* ei = app.add_subcommand("eval-identity", "masked PSNR/SSIM of the synthesis");
    ei->add_option("--gen", ei_gen)->required();
    ei->add_option("--data", ei_data)->required();
    ei->add_option("--out", ei_out, "report JSON path")->required();
    ei->add_option("--split", ei_split, "train|test|all");

    // eval-adice
    std::string ea_images, ea_masks, ea_config, ea_out;
    auto* ea = app.add_subcommand("eval-adice", "convergence-speed healthiness metric");
    ea->add_option("--images", ea_images, "directory of image PGMs")->required();
    ea->add_option("--masks", ea_masks, "directory of mask PGMs")->required();
    ea->add_option("--config", ea_config, "ADiceConfig JSON");
    ea->add_option("--out", ea_out, "report JSON path")->required();

    // eval-counterfeit
    std::string ec_mode, ec_data, ec_out, ec_adicecfg, ec_split = "all";
    std::uint64_t ec_seed = 0;
    auto* ec = app.add_subcommand("eval-counterfeit", "build counterfeit probes (and optionally A-Dice them)");
    ec->add_option("--mode", ec_mode, "meanfill|noisefill")->required();
    ec->add_option("--data", ec_data)->required();
    ec->add_option("--seed", ec_seed, "noise seed");
    ec->add_option("--out", ec_out)->required();
    ec->add_option("--adice-config", ec_adicecfg, "run A-Dice on the counterfeits with this config");
    ec->add_option("--split", ec_split, "train|test|all");

    // sweep-lambda
    std::string sl_lambdas, sl_config, sl_data, sl_out, sl_adicecfg;
    auto* sl = app.add_subcommand("sweep-lambda", "one full training + evaluation per lambda");
    sl->add_option("--lambdas", sl_lambdas, "comma-separated lambda list")->required();
    sl->add_option("--config", sl_config, "base TrainConfig JSON");
    sl->add_option("--data", sl_data)->required();
    sl->add_option("--out", sl_out, "sweep output directory")->required();
    sl->add_option("--adice-config", sl_adicecfg, "ADiceConfig JSON");

    // report
    std::string rp_runs, rp_out;
    auto* rp = app.add_subcommand("report", "consolidate run reports into a summary table");
    rp->add_option("--runs", rp_runs, "comma-separated run directories")->required();
    rp->add_option("--out", rp_out, "summary markdown path")->required();

    try {
        app.parse(argc, argv);
        if (pg->parsed()) return cmd_phantom_gen(pg_seed, pg_size, pg_count, pg_test, pg_amp, pg_out);
        if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_split);
        if (sy->parsed()) return cmd_synthesize(sy_gen, sy_data, sy_out, sy_split);
        if (en->parsed()) return cmd_enhance(en_gen, en_alpha, en_data, en_out, en_sign, en_noclamp, en_split);
        if (dn->parsed()) return cmd_downstream(dn_gen, dn_alphas, dn_data, dn_out, dn_segcfg, dn_seeds, dn_sign);
        if (ei->parsed()) return cmd_eval_identity(ei_gen, ei_data, ei_out, ei_split);
        if (ea->parsed()) return cmd_eval_adice(ea_images, ea_masks, ea_config, ea_out);
        if (ec->parsed()) return cmd_eval_counterfeit(ec_mode, ec_data, ec_seed, ec_out, ec_adicecfg, ec_split);
        if (sl->parsed()) return cmd_sweep_lambda(sl_lambdas, sl_config, sl_data, sl_out, sl_adicecfg);
        if (rp->parsed()) return cmd_report(rp_runs, rp_out);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) {
            std::cout << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
        }
        return code;
    } catch (const Error& e) {
        std::cout << json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cout << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
        return 3;
    }
}
