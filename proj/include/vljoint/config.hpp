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

// Run configuration: one JSON document with sections
// {scene, train, vlhead, eval, paths}. Missing keys take defaults; unknown
// keys and wrongly typed values are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "vljoint/losses.hpp"
#include "vljoint/nanodet.hpp"

namespace vlj {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr = 0.005;
  /// Multiplies lr; the base value is the large-detector recipe.
  double lr_scale = 2.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int lr_step_epochs = 10;
  double gamma = 0.1;
  LossWeights weights;
  double alpha = 0.7;
  double iou_positive = 0.5;
  std::uint64_t seed = 0;
  int n_train = 800;
  int n_val = 200;
  int eval_every = 1;
  int backbone_hidden = 64;
  int feature_dim = 64;
  /// false builds the detector alone (no projection/text/temperature work).
  bool vl_branch = true;

  double effective_lr() const { return lr * lr_scale; }
  void validate() const;
};

struct VlHeadConfig {
  int hidden_dim = 256;
  int embed_dim = 512;
  double tau_init = 0.07;
  double tau_min = 1e-3;
  /// Learning-rate multipliers for the temperature and text-embedding groups.
  /// The temperature gradient scales as 1/τ², so at the shared rate τ runs
  /// away within an epoch; the reduced default keeps it near its init.
  double tau_lr_scale = 0.01;
  double text_lr_scale = 1.0;
  std::uint64_t text_seed = 0;

  void validate() const;
};

struct EvalConfig {
  double obj_threshold = 0.05;
  double nms_iou = 0.5;

  void validate() const;
};

struct PathsConfig {
  std::string train_data;
  std::string val_data;
  /// Optional {dim, classes} import file; empty means seeded random init.
  std::string text_embeddings;
};

struct RunConfig {
  SceneConfig scene;
  TrainConfig train;
  VlHeadConfig vlhead;
  EvalConfig eval;
  PathsConfig paths;

  void validate() const;
  /// True when both vision-language weights are zero.
  bool is_ce_baseline() const {
    return train.weights.lambda_cont == 0.0 && train.weights.lambda_aux == 0.0;
  }
};

nlohmann::json to_json(const RunConfig& config);
/// Overlays `doc` on the defaults and validates the result.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace vlj
