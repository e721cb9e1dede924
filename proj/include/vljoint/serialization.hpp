// Copyright 2026 The vljoint Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// On-disk formats. Everything is JSON or JSON-lines; doubles are written in
// shortest round-trip form so a save/load cycle is exact.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vljoint/evalmap.hpp"
#include "vljoint/trainer.hpp"

namespace vlj {

inline constexpr const char* kCheckpointFormat = "vljoint-checkpoint/1";

// Scenes: one JSON object per line,
// {"scene_id", "raw": [[...] per cell], "gts": [{"box": [x1,y1,x2,y2], "class_id"}]}.
nlohmann::json scene_to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& doc);
void write_dataset(const std::filesystem::path& path, const std::vector<SyntheticScene>& scenes);
std::vector<SyntheticScene> read_dataset(const std::filesystem::path& path);

/// Named, shaped, row-major array.
nlohmann::json matrix_to_json(const std::string& name, const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& doc, const std::string& expected_name);

nlohmann::json history_to_json(const MetricsHistory& history);
MetricsHistory history_from_json(const nlohmann::json& doc);

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
/// Shapes are checked against the model the embedded config describes.
Checkpoint checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// {"mode", "seed", "config", "epochs": [...]}; mode is "ce-baseline" when
/// both vision-language weights are zero, else "joint".
nlohmann::json metrics_document(const RunConfig& config, const MetricsHistory& history);

// Detections: one line per scene, {"scene_id", "detections": [{box, class_id, score}]}.
nlohmann::json detections_to_json(std::uint64_t scene_id, const std::vector<Detection>& dets);
std::pair<std::uint64_t, std::vector<Detection>> detections_from_json(const nlohmann::json& doc);

/// Text-embedding import document {dim, classes: [{name, vector}]}.
nlohmann::json text_embeddings_to_json(const TextEmbeddingTable& table);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace vlj
