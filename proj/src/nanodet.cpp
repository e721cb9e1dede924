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

#include "vljoint/nanodet.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace vlj {

namespace {

constexpr int kPlacementRetries = 500;
// Decoded log-scales are capped so exp() stays finite for wild predictions.
constexpr double kMaxLogScale = 8.0;

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

double cell_coverage(const Box& cell, const Box& box) {
  const double iw = std::min(cell.x_max, box.x_max) - std::max(cell.x_min, box.x_min);
  const double ih = std::min(cell.y_max, box.y_max) - std::max(cell.y_min, box.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih / cell.area();
}

bool covers_center(const Box& box, const Box& cell) {
  return box.x_min <= cell.center_x() && cell.center_x() <= box.x_max &&
         box.y_min <= cell.center_y() && cell.center_y() <= box.y_max;
}

}  // namespace

void SceneConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("scene: grid must be at least 1x1");
  if (canvas_side < 1 || canvas_side % grid_rows != 0 || canvas_side % grid_cols != 0) {
    throw ConfigError("scene: canvas_side must be divisible by the grid side");
  }
  if (num_classes < 2) throw ConfigError("scene: num_classes must be >= 2");
  if (raw_dim < num_classes + 1) {
    throw ConfigError("scene: raw_dim must exceed num_classes to hold the class signatures");
  }
  if (min_objects < 1 || max_objects < min_objects) {
    throw ConfigError("scene: need 1 <= min_objects <= max_objects");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("scene: noise_sigma must be >= 0");
  }
  if (!(signature_overlap >= 0.0 && signature_overlap <= 1.0)) {
    throw ConfigError("scene: signature_overlap must lie in [0, 1]");
  }
}

Matrix class_signatures(const SceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(mix_seed(config.signature_seed, 0x5167));
  const Matrix gaussian = normal_matrix(config.raw_dim, config.num_classes + 1, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  const Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(config.raw_dim, config.num_classes + 1);
  const double shared = std::sqrt(config.signature_overlap);
  const double own = std::sqrt(1.0 - config.signature_overlap);
  Matrix sig(config.num_classes, config.raw_dim);
  for (int c = 0; c < config.num_classes; ++c) {
    sig.row(c) = (shared * q.col(0) + own * q.col(c + 1)).transpose();
  }
  return sig;
}

Box anchor_for_cell(int cell_index, const SceneConfig& config) {
  if (cell_index < 0 || cell_index >= config.num_cells()) {
    throw GeometryError("anchor_for_cell: cell index out of range");
  }
  const int row = cell_index / config.grid_cols;
  const int col = cell_index % config.grid_cols;
  const double w = config.cell_width();
  const double h = config.cell_height();
  return {col * w, row * h, (col + 1) * w, (row + 1) * h};
}

std::vector<Box> cell_anchors(const SceneConfig& config) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(config.num_cells()));
  for (int i = 0; i < config.num_cells(); ++i) anchors.push_back(anchor_for_cell(i, config));
  return anchors;
}

SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  const Matrix signatures = class_signatures(config);
  const auto anchors = cell_anchors(config);
  std::mt19937_64 rng(mix_seed(seed, 0x5CE4E));

  SyntheticScene scene;
  scene.scene_id = seed;
  scene.raw = Matrix::Zero(config.num_cells(), config.raw_dim);
  std::vector<bool> occupied(anchors.size(), false);

  std::uniform_int_distribution<int> count_dist(config.min_objects, config.max_objects);
  std::uniform_int_distribution<int> class_dist(0, config.num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = static_cast<double>(config.canvas_side);

  const int n_objects = count_dist(rng);
  for (int k = 0; k < n_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const int cls = class_dist(rng);
      const double w = std::min(side, (0.75 + 1.75 * unit(rng)) * config.cell_width());
      const double h = std::min(side, (0.75 + 1.75 * unit(rng)) * config.cell_height());
      const double cx = 0.5 * w + unit(rng) * (side - w);
      const double cy = 0.5 * h + unit(rng) * (side - h);
      const Box box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};

      std::vector<std::size_t> covered;
      bool clash = false;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (!covers_center(box, anchors[a])) continue;
        if (occupied[a]) {
          clash = true;
          break;
        }
        covered.push_back(a);
      }
      if (clash || covered.empty()) continue;

      for (std::size_t a : covered) {
        occupied[a] = true;
        scene.raw.row(static_cast<Index>(a)) += cell_coverage(anchors[a], box) * signatures.row(cls);
      }
      scene.gts.push_back({box, cls});
      placed = true;
    }
    if (!placed) {
      throw GenerationError("generate_scene: could not place object " + std::to_string(k) +
                            " after " + std::to_string(kPlacementRetries) + " attempts");
    }
  }

  if (config.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    for (Index i = 0; i < scene.raw.size(); ++i) scene.raw.data()[i] += noise(rng);
  }
  return scene;
}

std::vector<SyntheticScene> generate_dataset(const SceneConfig& config, std::uint64_t seed,
                                             std::size_t count, std::uint64_t first_id) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t id = first_id + i;
    SyntheticScene scene = generate_scene(config, mix_seed(seed, id));
    scene.scene_id = id;
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

DetectorParams DetectorParams::init(Index raw_dim, Index hidden_dim, Index feature_dim,
                                    Index num_classes, std::mt19937_64& rng) {
  DetectorParams p;
  p.backbone_w1 = ParamTensor("backbone.w1",
                              normal_matrix(raw_dim, hidden_dim, std::sqrt(2.0 / raw_dim), rng), true);
  p.backbone_b1 = ParamTensor("backbone.b1", Matrix::Zero(1, hidden_dim));
  p.backbone_w2 = ParamTensor(
      "backbone.w2", normal_matrix(hidden_dim, feature_dim, std::sqrt(2.0 / hidden_dim), rng), true);
  p.backbone_b2 = ParamTensor("backbone.b2", Matrix::Zero(1, feature_dim));
  const double head_std = std::sqrt(1.0 / feature_dim);
  p.obj_w = ParamTensor("heads.obj_w", normal_matrix(feature_dim, 1, head_std, rng), true);
  // Objectness prior of roughly 1 in 8 cells.
  p.obj_b = ParamTensor("heads.obj_b", Matrix::Constant(1, 1, -2.0));
  p.cls_w = ParamTensor("heads.cls_w", normal_matrix(feature_dim, num_classes, head_std, rng), true);
  p.cls_b = ParamTensor("heads.cls_b", Matrix::Zero(1, num_classes));
  p.box_w = ParamTensor("heads.box_w", normal_matrix(feature_dim, 4, 0.1 * head_std, rng), true);
  p.box_b = ParamTensor("heads.box_b", Matrix::Zero(1, 4));
  return p;
}

void detector_backward(const DetectorCache& cache, const GridPrediction& pred,
                       const DetectorUpstream& upstream, DetectorParams& params) {
  const Matrix d_obj = upstream.d_obj;  // column -> cells x 1
  auto g_obj = affine_backward(pred.features, params.obj_w.value, d_obj);
  auto g_cls = affine_backward(pred.features, params.cls_w.value, upstream.d_cls);
  auto g_box = affine_backward(pred.features, params.box_w.value, upstream.d_box);
  params.obj_w.grad += g_obj.dw;
  params.obj_b.grad += g_obj.db;
  params.cls_w.grad += g_cls.dw;
  params.cls_b.grad += g_cls.db;
  params.box_w.grad += g_box.dw;
  params.box_b.grad += g_box.db;

  Matrix d_features = g_obj.dx + g_cls.dx + g_box.dx;
  if (upstream.d_features.size() != 0) d_features += upstream.d_features;

  const Matrix d_feature_pre = relu_backward(cache.feature_pre, d_features);
  auto g2 = affine_backward(cache.hidden, params.backbone_w2.value, d_feature_pre);
  params.backbone_w2.grad += g2.dw;
  params.backbone_b2.grad += g2.db;
  const Matrix d_hidden_pre = relu_backward(cache.hidden_pre, g2.dx);
  auto g1 = affine_backward(cache.raw, params.backbone_w1.value, d_hidden_pre);
  params.backbone_w1.grad += g1.dw;
  params.backbone_b1.grad += g1.db;
}

std::vector<Detection> decode_detections(const GridPrediction& pred, const Matrix& p_fused,
                                         double obj_threshold, const SceneConfig& config,
                                         double nms_iou) {
  if (p_fused.rows() != pred.obj_logits.size()) {
    throw DimensionError("decode_detections: fused score rows differ from cell count");
  }
  const double side = static_cast<double>(config.canvas_side);
  std::vector<Detection> dets;
  for (Index cell = 0; cell < pred.obj_logits.size(); ++cell) {
    const double objectness = sigmoid(pred.obj_logits(cell));
    if (objectness < obj_threshold) continue;
    const Box anchor = anchor_for_cell(static_cast<int>(cell), config);
    const auto off = pred.box_offsets.row(cell);
    Box box = decode_box(anchor, off(0), off(1), std::min(off(2), kMaxLogScale),
                         std::min(off(3), kMaxLogScale));
    box.x_min = std::clamp(box.x_min, 0.0, side);
    box.y_min = std::clamp(box.y_min, 0.0, side);
    box.x_max = std::clamp(box.x_max, 0.0, side);
    box.y_max = std::clamp(box.y_max, 0.0, side);

    Vector scores = objectness * p_fused.row(cell).transpose();
    Index best = 0;
    scores.maxCoeff(&best);
    Detection det;
    det.box = box;
    det.class_id = static_cast<int>(best);
    det.score = scores(best);
    det.per_class_scores = std::move(scores);
    dets.push_back(std::move(det));
  }
  return nms(dets, nms_iou);
}

}  // namespace vlj
