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

// Deterministic joint optimization (SGD with momentum, step decay) and the
// full-graph gradient check.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vljoint/config.hpp"
#include "vljoint/model.hpp"

namespace vlj {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double l_det = 0.0;
  double l_cont = 0.0;
  double l_aux = 0.0;
  double l_total = 0.0;
  double det_objectness = 0.0;
  double det_class = 0.0;
  double det_box = 0.0;
  std::size_t n_positives = 0;
  /// CLIP-branch top-1 on the training positives seen this epoch.
  std::optional<double> clip_top1_train;
  /// On validation positives; absent without the branch or a validation set.
  std::optional<double> clip_top1_val;
  std::optional<double> val_map50;
  std::optional<double> val_map5095;
};

struct MetricsHistory {
  std::vector<EpochRecord> epochs;
};

/// Running sums over the steps of the current epoch.
struct EpochAccumulator {
  std::size_t steps = 0;
  double l_det = 0.0;
  double l_cont = 0.0;
  double l_aux = 0.0;
  double l_total = 0.0;
  double det_objectness = 0.0;
  double det_class = 0.0;
  double det_box = 0.0;
  std::size_t n_positives = 0;
  std::size_t clip_correct = 0;
  std::size_t clip_total = 0;
};

/// Everything needed to resume training bit-for-bit.
struct Checkpoint {
  RunConfig config;
  Model model;
  /// Momentum buffers, in Model::parameters() order.
  std::vector<Matrix> velocity;
  std::int64_t step = 0;
  EpochAccumulator accumulator;
  MetricsHistory history;
};

struct ValidationResult {
  double map50 = 0.0;
  double map5095 = 0.0;
  std::map<int, double> per_class_ap50;
  std::optional<double> clip_top1;
  std::size_t n_images = 0;
};

/// Runs inference over `scenes` at `alpha` and scores it.
ValidationResult validate_model(const Model& model, std::span<const SyntheticScene> scenes,
                                const RunConfig& config, double alpha);

class Trainer {
 public:
  Trainer(RunConfig config, std::vector<SyntheticScene> train, std::vector<SyntheticScene> val);
  /// Resumes from a checkpoint; the checkpoint's config is used.
  Trainer(Checkpoint checkpoint, std::vector<SyntheticScene> train,
          std::vector<SyntheticScene> val);

  /// One optimization step; closes the epoch (metrics, evaluation) when it
  /// was the epoch's last step. Throws NumericError on a non-finite loss.
  BatchResult step();
  /// Steps until all configured epochs are complete.
  void run();

  bool finished() const;
  std::int64_t steps_done() const { return step_; }
  std::int64_t steps_per_epoch() const;
  int current_epoch() const;
  double learning_rate(int epoch) const;

  const Model& model() const { return model_; }
  const MetricsHistory& history() const { return history_; }
  const RunConfig& config() const { return config_; }
  Checkpoint checkpoint() const;

 private:
  std::vector<std::size_t> epoch_order(int epoch) const;
  void apply_update(double lr);
  void close_epoch(int epoch);

  RunConfig config_;
  Model model_;
  std::vector<Matrix> velocity_;
  std::int64_t step_ = 0;
  EpochAccumulator acc_;
  MetricsHistory history_;
  std::vector<SyntheticScene> train_;
  std::vector<SyntheticScene> val_;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckSummary {
  std::vector<GradCheckGroup> groups;  // in kParameterGroups order
  std::size_t n_positives = 0;
  double threshold = 1e-4;
  GradCheckReport detail;

  bool passed() const;
};

struct GradCheckSetup {
  /// Loss weights used for the check.
  LossWeights weights;
  std::size_t scenes = 2;
  /// Coordinates sampled per tensor (tensors smaller than this are checked fully).
  std::size_t coords_per_tensor = 16;
  enum class Positives { kRequire, kForbid, kAny };
  /// kRequire draws scenes that each have vision-language positives, kForbid
  /// only scenes without any.
  Positives positives = Positives::kRequire;
  double step = 1e-6;
};

/// Finite-difference check of L_total over every parameter group at a seeded
/// small batch and freshly initialized default-size parameters.
GradCheckSummary gradcheck_all(std::uint64_t seed, const GradCheckSetup& setup = {},
                               const RunConfig& config = {});

}  // namespace vlj
