#include "gvs/config.hpp"

#include <cstdint>
#include <fstream>

#include "gvs/errors.hpp"

namespace gvs {

using nlohmann::json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const GeneratorSpec& spec) {
    return json{{"base_channels", spec.base_channels},
                {"down_stages", spec.down_stages},
                {"res_blocks", spec.res_blocks},
                {"norm", to_string(spec.norm)},
                {"residual_head", spec.residual_head}};
}

GeneratorSpec generator_spec_from_json(const json& j) {
    GeneratorSpec spec;
    get_if(j, "base_channels", spec.base_channels);
    get_if(j, "down_stages", spec.down_stages);
    get_if(j, "res_blocks", spec.res_blocks);
    if (j.contains("norm")) spec.norm = norm_kind_from_string(j.at("norm").get<std::string>());
    get_if(j, "residual_head", spec.residual_head);
    return spec;
}

json to_json(const SegmentorSpec& spec) {
    return json{{"levels", spec.levels},
                {"base_channels", spec.base_channels},
                {"skip_connections", spec.skip_connections},
                {"norm", to_string(spec.norm)}};
}

SegmentorSpec segmentor_spec_from_json(const json& j) {
    SegmentorSpec spec;
    get_if(j, "levels", spec.levels);
    get_if(j, "base_channels", spec.base_channels);
    get_if(j, "skip_connections", spec.skip_connections);
    if (j.contains("norm")) spec.norm = norm_kind_from_string(j.at("norm").get<std::string>());
    return spec;
}

json to_json(const TrainConfig& cfg) {
    return json{{"lambda", cfg.lambda},
                {"lr", cfg.lr},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"use_difference_aware", cfg.use_difference_aware},
                {"wce_mode", cfg.wce_mode == WceMode::TwoClass ? "two_class" : "formula_literal"},
                {"steps_per_phase", cfg.steps_per_phase},
                {"seed", cfg.seed},
                {"generator", to_json(cfg.generator)},
                {"segmentor", to_json(cfg.segmentor)}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    get_if(j, "lambda", cfg.lambda);
    get_if(j, "lr", cfg.lr);
    get_if(j, "beta1", cfg.beta1);
    get_if(j, "beta2", cfg.beta2);
    get_if(j, "adam_eps", cfg.adam_eps);
    get_if(j, "batch_size", cfg.batch_size);
    get_if(j, "epochs", cfg.epochs);
    get_if(j, "use_difference_aware", cfg.use_difference_aware);
    if (j.contains("wce_mode")) {
        const std::string mode = j.at("wce_mode").get<std::string>();
        if (mode == "two_class") {
            cfg.wce_mode = WceMode::TwoClass;
        } else if (mode == "formula_literal") {
            cfg.wce_mode = WceMode::FormulaLiteral;
        } else {
            throw InvalidConfigError("unknown wce_mode '" + mode + "'");
        }
    }
    get_if(j, "steps_per_phase", cfg.steps_per_phase);
    get_if(j, "seed", cfg.seed);
    if (j.contains("generator")) cfg.generator = generator_spec_from_json(j.at("generator"));
    if (j.contains("segmentor")) cfg.segmentor = segmentor_spec_from_json(j.at("segmentor"));
    cfg.validate();
    return cfg;
}

json to_json(const SegTrainConfig& cfg) {
    return json{{"spec", to_json(cfg.spec)},   {"lr", cfg.lr},
                {"beta1", cfg.beta1},          {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},    {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},        {"seed", cfg.seed}};
}

SegTrainConfig seg_train_config_from_json(const json& j) {
    SegTrainConfig cfg;
    if (j.contains("spec")) cfg.spec = segmentor_spec_from_json(j.at("spec"));
    get_if(j, "lr", cfg.lr);
    get_if(j, "beta1", cfg.beta1);
    get_if(j, "beta2", cfg.beta2);
    get_if(j, "adam_eps", cfg.adam_eps);
    get_if(j, "batch_size", cfg.batch_size);
    get_if(j, "epochs", cfg.epochs);
    get_if(j, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

json to_json(const ADiceConfig& cfg) {
    return json{{"eval_lr", cfg.eval_lr},
                {"epochs", cfg.epochs},
                {"repeats", cfg.repeats},
                {"batch_size", cfg.batch_size},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},
                {"base_seed", cfg.base_seed},
                {"seeds", cfg.seeds},
                {"spec", to_json(cfg.spec)}};
}

ADiceConfig adice_config_from_json(const json& j) {
    ADiceConfig cfg;
    get_if(j, "eval_lr", cfg.eval_lr);
    get_if(j, "epochs", cfg.epochs);
    get_if(j, "repeats", cfg.repeats);
    get_if(j, "batch_size", cfg.batch_size);
    get_if(j, "beta1", cfg.beta1);
    get_if(j, "beta2", cfg.beta2);
    get_if(j, "adam_eps", cfg.adam_eps);
    get_if(j, "base_seed", cfg.base_seed);
    get_if(j, "seeds", cfg.seeds);
    if (j.contains("spec")) cfg.spec = segmentor_spec_from_json(j.at("spec"));
    cfg.validate();
    return cfg;
}

json to_json(const EnhanceConfig& cfg) {
    return json{{"alpha_grid", cfg.alpha_grid},
                {"sign_mode", cfg.sign_mode == SignMode::PaperLiteral ? "paper_literal" : "pathological_residue"},
                {"clamp_output", cfg.clamp_output}};
}

EnhanceConfig enhance_config_from_json(const json& j) {
    EnhanceConfig cfg;
    get_if(j, "alpha_grid", cfg.alpha_grid);
    if (j.contains("sign_mode")) {
        const std::string mode = j.at("sign_mode").get<std::string>();
        if (mode == "paper_literal") {
            cfg.sign_mode = SignMode::PaperLiteral;
        } else if (mode == "pathological_residue") {
            cfg.sign_mode = SignMode::PathologicalResidue;
        } else {
            throw InvalidConfigError("unknown sign_mode '" + mode + "'");
        }
    }
    get_if(j, "clamp_output", cfg.clamp_output);
    cfg.validate();
    return cfg;
}

json to_json(const MetricReport& report) {
    json j;
    if (report.mpsnr_mean) j["mpsnr"] = *report.mpsnr_mean;
    if (report.mssim_mean) j["mssim"] = *report.mssim_mean;
    if (report.adice_mean) {
        j["adice"] = *report.adice_mean;
        j["adice_repeats"] = report.adice_repeats;
    }
    if (!report.dice_curves.empty()) j["dice_curves"] = report.dice_curves;
    j["config_hash"] = report.config_hash;
    return j;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfigError("cannot open " + path.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw InvalidConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InvalidConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string config_hash(const json& j) {
    const std::string dump = j.dump();  // objects are key-sorted
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace gvs
