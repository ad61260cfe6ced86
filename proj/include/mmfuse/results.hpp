#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mmfuse/train.hpp"

namespace mmfuse {

// Results-file schema (stable for CI): a JSON object with keys
// artifact_version, seed, config, history, final_metrics, ablation (when
// applicable) plus parameter checksums. Percentages carry two decimals;
// counts are integers. Identical runs produce byte-identical files.

nlohmann::json config_to_json(const TrainConfig& cfg);
void config_update_from_json(TrainConfig& cfg, const nlohmann::json& j);
TrainConfig config_from_file(const std::filesystem::path& path);

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json history_to_json(const History& h);

nlohmann::json train_results_json(const TrainConfig& cfg, const TrainResult& result,
                                  const Metrics& final_val, const Metrics& final_test);
nlohmann::json ablation_results_json(const TrainConfig& cfg, const AblationReport& report);

std::string checksum_hex(std::uint64_t checksum);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace mmfuse
