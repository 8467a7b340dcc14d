// Serialization: base64-packed numeric arrays, scene and checkpoint files,
// and small JSON file helpers. All binary payloads are little-endian.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vendor/json.hpp"

#include "crossmodal/metrics.hpp"
#include "crossmodal/model.hpp"
#include "crossmodal/scenegen.hpp"

namespace crossmodal {

inline constexpr const char* kSceneFormat = "crossmodal-scene-v1";
inline constexpr const char* kCheckpointFormat = "crossmodal-checkpoint-v1";
inline constexpr const char* kMetricsFormat = "crossmodal-metrics-v1";
inline constexpr const char* kAblationFormat = "crossmodal-ablation-v1";

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// {"shape": [...], "dtype": "f64"|"i32", "data": base64}
nlohmann::json pack_f64(const std::vector<double>& values, const std::vector<std::size_t>& shape);
nlohmann::json pack_i32(const std::vector<int>& values, const std::vector<std::size_t>& shape);
std::vector<double> unpack_f64(const nlohmann::json& node, std::vector<std::size_t>* shape_out);
std::vector<int> unpack_i32(const nlohmann::json& node, std::vector<std::size_t>* shape_out);

// Reports use fixed key order and 6-decimal rounding for golden-file stability.
double round6(double v);
nlohmann::ordered_json metrics_report_json(const MetricsReport& report);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::ordered_json& value, int indent = 2);
void write_text_file(const std::string& path, const std::string& text);

nlohmann::json scene_to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& value);
void save_scene(const std::string& path, const SyntheticScene& scene);
SyntheticScene load_scene(const std::string& path);

// data_dir layout: manifest.json plus train_NNNN.json / eval_NNNN.json.
void save_dataset(const std::string& dir, const std::vector<SyntheticScene>& train,
                  const std::vector<SyntheticScene>& eval_scenes, const nlohmann::json& manifest_extra);
std::vector<SyntheticScene> load_split(const std::string& dir, const std::string& split);

void save_checkpoint(const std::string& path, const Model& model, const std::string& config_hash,
                     std::uint64_t seed);
// Restores parameter values into an already-constructed model; shapes and the
// config hash must match.
void load_checkpoint(const std::string& path, Model& model, const std::string& expected_hash,
                     std::uint64_t* seed_out);

}  // namespace crossmodal
