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

#include "vljoint/losses.hpp"

#include <cmath>

namespace vlj {

namespace detail {

void check_labels(Index rows, Index cols, std::span<const int> labels, const char* op) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw DimensionError(std::string(op) + ": label count differs from sample count");
  }
  for (int y : labels) {
    if (y < 0 || y >= cols) throw DimensionError(std::string(op) + ": label out of range");
  }
}

void check_detection_shapes(Index cells, Index cls_rows, Index box_rows,
                            const DetectionTargets& targets) {
  if (static_cast<Index>(targets.cls.size()) != cells || targets.box.rows() != cells ||
      cls_rows != cells || box_rows != cells) {
    throw DimensionError("loss_detection: prediction and target cell counts differ");
  }
}

}  // namespace detail

void LossWeights::validate() const {
  if (!(lambda_cont >= 0.0) || !(lambda_aux >= 0.0) || !std::isfinite(lambda_cont) ||
      !std::isfinite(lambda_aux)) {
    throw ConfigError("loss weights must be finite and nonnegative");
  }
}

LossAndGrad loss_i2t(const Matrix& sim, std::span<const int> labels) {
  LossAndGrad out{i2t_value(sim, labels), Matrix::Zero(sim.rows(), sim.cols())};
  const Index n = sim.rows();
  if (n == 0) return out;
  out.d_sim = softmax_rows(sim);
  for (Index i = 0; i < n; ++i) out.d_sim(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  out.d_sim /= static_cast<double>(n);
  return out;
}

LossAndGrad loss_t2i(const Matrix& sim, std::span<const int> labels) {
  LossAndGrad out{t2i_value(sim, labels), Matrix::Zero(sim.rows(), sim.cols())};
  const Index n = sim.rows();
  if (n == 0) return out;
  std::vector<int> column_count(static_cast<std::size_t>(sim.cols()), 0);
  for (int y : labels) ++column_count[static_cast<std::size_t>(y)];
  for (Index c = 0; c < sim.cols(); ++c) {
    const int count = column_count[static_cast<std::size_t>(c)];
    if (count == 0) continue;
    // Each sample of class c contributes the softmax of the whole column.
    const double lse = detail::log_sum_exp(sim.col(c));
    out.d_sim.col(c) = count * (sim.col(c).array() - lse).exp().matrix();
  }
  for (Index i = 0; i < n; ++i) out.d_sim(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  out.d_sim /= static_cast<double>(n);
  return out;
}

LossAndGrad loss_contrastive(const Matrix& sim, std::span<const int> labels) {
  LossAndGrad i2t = loss_i2t(sim, labels);
  LossAndGrad t2i = loss_t2i(sim, labels);
  return {0.5 * (i2t.value + t2i.value), 0.5 * (i2t.d_sim + t2i.d_sim)};
}

LossAndGrad loss_aux(const Matrix& sim, std::span<const int> labels) {
  return loss_i2t(sim, labels);
}

LossBreakdown loss_total(double l_det, double l_cont, double l_aux, const LossWeights& weights,
                         std::size_t n_positives) {
  weights.validate();
  LossBreakdown out;
  out.l_det = l_det;
  out.l_cont = l_cont;
  out.l_aux = l_aux;
  out.l_total = l_det + weights.lambda_cont * l_cont + weights.lambda_aux * l_aux;
  out.n_positives = n_positives;
  return out;
}

DetectionTargets build_detection_targets(std::span<const Box> anchors,
                                         std::span<const GroundTruth> gts,
                                         double iou_threshold) {
  DetectionTargets t;
  t.assignments = assign_positives(anchors, gts, iou_threshold, /*force_best_match=*/true);
  t.cls.assign(anchors.size(), -1);
  t.box = Matrix::Zero(static_cast<Index>(anchors.size()), 4);
  for (const Assignment& a : t.assignments) {
    if (!a.is_positive) continue;
    const GroundTruth& gt = gts[*a.matched_gt];
    t.cls[a.anchor_index] = gt.class_id;
    t.box.row(static_cast<Index>(a.anchor_index)) = encode_box(gt.box, anchors[a.anchor_index]);
    ++t.n_positives;
  }
  return t;
}

DetectionLoss loss_detection(const GridPrediction& pred, const DetectionTargets& targets) {
  const DetectionLossTerms<double> terms = detection_loss_terms(pred, targets);
  const Index cells = pred.obj_logits.size();
  DetectionLoss out;
  out.objectness = terms.objectness;
  out.classification = terms.classification;
  out.box = terms.box;
  out.total = terms.total();
  out.d_obj = Vector::Zero(cells);
  out.d_cls = Matrix::Zero(cells, pred.cls_logits.cols());
  out.d_box = Matrix::Zero(cells, 4);
  if (cells == 0) return out;

  for (Index i = 0; i < cells; ++i) {
    const double target = targets.cls[static_cast<std::size_t>(i)] >= 0 ? 1.0 : 0.0;
    out.d_obj(i) = (sigmoid(pred.obj_logits(i)) - target) / static_cast<double>(cells);
  }
  if (targets.n_positives == 0) return out;

  const auto n_pos = static_cast<double>(targets.n_positives);
  const Matrix p = softmax_rows(pred.cls_logits);
  for (Index i = 0; i < cells; ++i) {
    const int y = targets.cls[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    out.d_cls.row(i) = p.row(i);
    out.d_cls(i, y) -= 1.0;
    out.d_cls.row(i) /= n_pos;
    for (Index k = 0; k < 4; ++k) {
      const double diff = pred.box_offsets(i, k) - targets.box(i, k);
      out.d_box(i, k) =
          (std::abs(diff) < kSmoothL1Beta ? diff / kSmoothL1Beta : (diff > 0.0 ? 1.0 : -1.0)) /
          n_pos;
    }
  }
  return out;
}

}  // namespace vlj
