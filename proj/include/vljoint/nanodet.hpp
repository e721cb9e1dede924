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

// Desk-scale one-stage grid detector and the synthetic scenes it trains on.
// Each grid cell carries one square anchor of one cell width; the backbone is
// applied per cell and its output rows f_i feed both the detection heads and
// the vision-language branch.

#include <cstdint>
#include <random>
#include <vector>

#include "vljoint/geometry.hpp"
#include "vljoint/numerics.hpp"

namespace vlj {

struct SceneConfig {
  int canvas_side = 128;
  int grid_rows = 8;
  int grid_cols = 8;
  int raw_dim = 16;
  int num_classes = 8;
  int min_objects = 1;
  int max_objects = 4;
  double noise_sigma = 0.3;
  double signature_overlap = 0.4;
  std::uint64_t signature_seed = 7;

  /// Throws ConfigError when the world cannot be built.
  void validate() const;
  int num_cells() const { return grid_rows * grid_cols; }
  double cell_width() const { return static_cast<double>(canvas_side) / grid_cols; }
  double cell_height() const { return static_cast<double>(canvas_side) / grid_rows; }
};

struct SyntheticScene {
  std::uint64_t scene_id = 0;
  Matrix raw;  // cells (row-major over the grid) x raw_dim
  std::vector<GroundTruth> gts;
};

/// Per-class signature vectors (rows), unit norm, pairwise cosine equal to
/// signature_overlap. Fixed by signature_seed.
Matrix class_signatures(const SceneConfig& config);

/// Places objects without two boxes sharing a covered cell center, writes
/// coverage-scaled class signatures into covered cells and adds Gaussian noise.
SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Scene `index` of a dataset drawn from `seed`.
std::vector<SyntheticScene> generate_dataset(const SceneConfig& config, std::uint64_t seed,
                                             std::size_t count, std::uint64_t first_id = 0);

Box anchor_for_cell(int cell_index, const SceneConfig& config);
std::vector<Box> cell_anchors(const SceneConfig& config);

struct DetectorParams {
  ParamTensor backbone_w1, backbone_b1;
  ParamTensor backbone_w2, backbone_b2;
  ParamTensor obj_w, obj_b;
  ParamTensor cls_w, cls_b;
  ParamTensor box_w, box_b;

  static DetectorParams init(Index raw_dim, Index hidden_dim, Index feature_dim,
                             Index num_classes, std::mt19937_64& rng);

  Index raw_dim() const { return backbone_w1.value.rows(); }
  Index feature_dim() const { return backbone_w2.value.cols(); }
  Index num_classes() const { return cls_w.value.cols(); }

  std::vector<ParamTensor*> backbone_tensors() {
    return {&backbone_w1, &backbone_b1, &backbone_w2, &backbone_b2};
  }
  std::vector<ParamTensor*> head_tensors() {
    return {&obj_w, &obj_b, &cls_w, &cls_b, &box_w, &box_b};
  }
};

template <typename Scalar>
struct GridPredictionT {
  MatrixX<Scalar> features;     // cells x D_f, shared with the vision-language branch
  VectorX<Scalar> obj_logits;   // cells
  MatrixX<Scalar> cls_logits;   // cells x C
  MatrixX<Scalar> box_offsets;  // cells x 4: (dcx, dcy, log w, log h)
};
using GridPrediction = GridPredictionT<double>;

template <typename Scalar>
struct DetectorCacheT {
  MatrixX<Scalar> raw;
  MatrixX<Scalar> hidden_pre;
  MatrixX<Scalar> hidden;
  MatrixX<Scalar> feature_pre;
};
using DetectorCache = DetectorCacheT<double>;

/// f = relu(relu(raw W1 + b1) W2 + b2); objectness, class and box heads are
/// single affine maps of f. Evaluated in `Scalar` with parameters cast from
/// their stored double values.
/// Applies only the objectness, class and box heads to precomputed shared
/// features (N × D_f).
template <typename Scalar>
GridPredictionT<Scalar> detector_heads(MatrixX<Scalar> features, const DetectorParams& params) {
  if (features.cols() != params.feature_dim()) {
    throw DimensionError("detector_heads: feature dim " + std::to_string(features.cols()) +
                         " but heads expect " + std::to_string(params.feature_dim()));
  }
  auto cast = [](const ParamTensor& p) { return p.value.template cast<Scalar>(); };
  GridPredictionT<Scalar> pred;
  pred.features = std::move(features);
  pred.obj_logits = affine(pred.features, cast(params.obj_w), cast(params.obj_b)).col(0);
  pred.cls_logits = affine(pred.features, cast(params.cls_w), cast(params.cls_b));
  pred.box_offsets = affine(pred.features, cast(params.box_w), cast(params.box_b));
  require_finite(pred.obj_logits, "detector objectness");
  require_finite(pred.cls_logits, "detector class logits");
  require_finite(pred.box_offsets, "detector box offsets");
  return pred;
}

template <typename Scalar>
GridPredictionT<Scalar> detector_forward(const MatrixX<Scalar>& raw, const DetectorParams& params,
                                         DetectorCacheT<Scalar>* cache = nullptr) {
  if (raw.cols() != params.raw_dim()) {
    throw DimensionError("detector_forward: raw dim " + std::to_string(raw.cols()) +
                         " but backbone expects " + std::to_string(params.raw_dim()));
  }
  auto cast = [](const ParamTensor& p) { return p.value.template cast<Scalar>(); };
  MatrixX<Scalar> hidden_pre = affine(raw, cast(params.backbone_w1), cast(params.backbone_b1));
  MatrixX<Scalar> hidden = relu(hidden_pre);
  MatrixX<Scalar> feature_pre = affine(hidden, cast(params.backbone_w2), cast(params.backbone_b2));

  GridPredictionT<Scalar> pred = detector_heads(MatrixX<Scalar>(relu(feature_pre)), params);

  if (cache != nullptr) {
    cache->raw = raw;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->feature_pre = std::move(feature_pre);
  }
  return pred;
}

/// Upstream gradients for one detector_forward call. `d_features` carries any
/// gradient arriving at f from outside the detection heads and may be empty.
struct DetectorUpstream {
  Vector d_obj;
  Matrix d_cls;
  Matrix d_box;
  Matrix d_features;
};

/// Accumulates parameter gradients into `params`.
void detector_backward(const DetectorCache& cache, const GridPrediction& pred,
                       const DetectorUpstream& upstream, DetectorParams& params);

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                        : std::exp(x) / (Scalar(1) + std::exp(x));
}

/// Cells whose objectness reaches `obj_threshold` become detections of their
/// argmax fused class, scored sigmoid(obj) * p_fused, with boxes decoded from
/// the cell anchor and clipped to the canvas; per-class NMS follows.
std::vector<Detection> decode_detections(const GridPrediction& pred, const Matrix& p_fused,
                                         double obj_threshold, const SceneConfig& config,
                                         double nms_iou = 0.5);

}  // namespace vlj
