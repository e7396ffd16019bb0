#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gvs/enhancement.hpp"
#include "gvs/evaluation.hpp"
#include "gvs/trainer.hpp"

namespace gvs {

// JSON round-trips for every config type. Parsing is strict about types but
// lenient about omitted keys (defaults apply), so a partial config file plus
// defaults resolves to a complete one.

nlohmann::json to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SegmentorSpec& spec);
SegmentorSpec segmentor_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SegTrainConfig& cfg);
SegTrainConfig seg_train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ADiceConfig& cfg);
ADiceConfig adice_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EnhanceConfig& cfg);
EnhanceConfig enhance_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MetricReport& report);

nlohmann::json load_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

// Content hash of the canonical (key-sorted) JSON dump; stable under key
// reordering in the source file.
std::string config_hash(const nlohmann::json& j);

}  // namespace gvs
