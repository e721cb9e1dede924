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

// The jointly trained network: grid detector plus the vision-language branch
// attached to the detector's per-cell features.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vljoint/config.hpp"
#include "vljoint/losses.hpp"
#include "vljoint/nanodet.hpp"
#include "vljoint/vlhead.hpp"

namespace vlj {

/// Names of the parameter groups reported by gradient checks.
inline const std::vector<std::string> kParameterGroups = {
    "backbone", "heads", "projection", "text_embeddings", "temperatures"};

struct Model {
  DetectorParams detector;
  ProjectionHeadParams projection;
  TextEmbeddingTable text;
  TemperatureVector temperatures;

  /// Each component draws from its own stream of `config.train.seed`, so the
  /// detector initialization does not depend on whether the branch is used.
  static Model init(const RunConfig& config);

  std::vector<ParamTensor*> parameters();
  std::vector<const ParamTensor*> parameters() const;
  std::vector<ParamTensor*> vl_parameters();
  std::map<std::string, std::vector<ParamTensor*>> groups();
  void zero_grad();
};

struct StepOptions {
  LossWeights weights;
  double iou_positive = 0.5;
  bool vl_branch = true;
  bool compute_grads = true;
};

/// Optional inspection hook for tests: which feature rows fed the
/// vision-language branch.
struct BatchTrace {
  std::vector<Matrix> scene_features;
  /// (scene position in batch, cell) for each vision-language row.
  std::vector<std::pair<std::size_t, Index>> positive_rows;
  Matrix vl_input;
};

struct BatchResult {
  LossBreakdown loss;
  double det_objectness = 0.0;
  double det_class = 0.0;
  double det_box = 0.0;
  std::size_t clip_correct = 0;
  std::size_t clip_total = 0;
};

/// Vision-language positives of one scene: cells whose anchor reaches
/// `iou_positive` against some ground truth, with that ground truth's class.
std::vector<std::pair<Index, int>> vl_positives(const SyntheticScene& scene,
                                                const SceneConfig& config, double iou_positive);

/// L_total over a batch of scenes. L_det is the mean per-scene detection loss;
/// the vision-language terms use the union of positive cells across the batch.
/// With compute_grads, gradients are accumulated into `model` (not zeroed here).
/// Throws NumericError naming the term when any loss is non-finite.
BatchResult evaluate_batch(Model& model, std::span<const SyntheticScene* const> scenes,
                           const SceneConfig& config, const StepOptions& options,
                           BatchTrace* trace = nullptr);

/// Intermediate values a value-only evaluation may hold fixed. Non-empty
/// `features` replace the backbone output per scene; a set `l_det` replaces the
/// heads and detection loss. Used to skip recomputation when probing only
/// parameters downstream of them.
template <typename Scalar>
struct FrozenStage {
  std::vector<MatrixX<Scalar>> features;
  std::optional<Scalar> l_det;
};

/// L_total of the same batch evaluated entirely in `Scalar`, without
/// gradients. Instantiated for double and long double; the latter serves as
/// the finite-difference oracle, whose probe differences would otherwise sit
/// at the float64 rounding floor for small gradients.
template <typename Scalar>
Scalar batch_total_loss(const Model& model, std::span<const SyntheticScene* const> scenes,
                        const SceneConfig& config, const StepOptions& options,
                        const FrozenStage<Scalar>* frozen = nullptr);

extern template double batch_total_loss<double>(const Model&,
                                                std::span<const SyntheticScene* const>,
                                                const SceneConfig&, const StepOptions&,
                                                const FrozenStage<double>*);
extern template long double batch_total_loss<long double>(
    const Model&, std::span<const SyntheticScene* const>, const SceneConfig&, const StepOptions&,
    const FrozenStage<long double>*);

struct SceneInference {
  GridPrediction pred;
  Matrix p_ce;
  Matrix p_fused;
  std::vector<Detection> detections;
};

/// Detector probabilities fused with CLIP-branch probabilities at `alpha`,
/// decoded and suppressed per class. With alpha == 1 the branch is skipped.
SceneInference infer_scene(const Model& model, const SyntheticScene& scene,
                           const SceneConfig& config, double alpha, double obj_threshold,
                           double nms_iou = 0.5);

/// Top-1 accuracy of the CLIP branch on the positives of `scenes`; returns
/// (correct, total).
std::pair<std::size_t, std::size_t> clip_accuracy(const Model& model,
                                                  std::span<const SyntheticScene> scenes,
                                                  const SceneConfig& config, double iou_positive);

}  // namespace vlj
