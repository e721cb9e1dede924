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

#include <span>
#include <vector>

#include "vljoint/geometry.hpp"
#include "vljoint/nanodet.hpp"
#include "vljoint/numerics.hpp"

namespace vlj {

struct LossWeights {
  double lambda_cont = 0.5;
  double lambda_aux = 0.8;

  void validate() const;
};

struct LossBreakdown {
  double l_det = 0.0;
  double l_cont = 0.0;
  double l_aux = 0.0;
  double l_total = 0.0;
  std::size_t n_positives = 0;
};

/// A scalar objective and its gradient with respect to the similarity logits.
struct LossAndGrad {
  double value = 0.0;
  Matrix d_sim;
};

// Vision-language objectives over the positive samples of a step. Each row of
// `sim` is one sample; labels[i] is its class. An empty batch yields 0 with an
// empty gradient.

namespace detail {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using std::exp;
  using std::log;
  const auto m = x.maxCoeff();
  return m + log((x.array() - m).exp().sum());
}

void check_labels(Index rows, Index cols, std::span<const int> labels, const char* op);

}  // namespace detail

/// Value of loss_i2t evaluated in the matrix's scalar type.
template <typename Derived>
typename Derived::Scalar i2t_value(const Eigen::MatrixBase<Derived>& sim,
                                   std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  detail::check_labels(sim.rows(), sim.cols(), labels, "loss_i2t");
  require_finite(sim, "loss_i2t");
  if (sim.rows() == 0) return Scalar(0);
  Scalar total(0);
  for (Index i = 0; i < sim.rows(); ++i) {
    total += detail::log_sum_exp(sim.row(i)) - sim(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<Scalar>(sim.rows());
}

/// Value of loss_t2i evaluated in the matrix's scalar type.
template <typename Derived>
typename Derived::Scalar t2i_value(const Eigen::MatrixBase<Derived>& sim,
                                   std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  detail::check_labels(sim.rows(), sim.cols(), labels, "loss_t2i");
  require_finite(sim, "loss_t2i");
  if (sim.rows() == 0) return Scalar(0);
  Scalar total(0);
  for (Index i = 0; i < sim.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    total += detail::log_sum_exp(sim.col(y)) - sim(i, y);
  }
  return total / static_cast<Scalar>(sim.rows());
}

/// Image-to-text InfoNCE: mean over samples of -log softmax_c(s_i)[y_i].
LossAndGrad loss_i2t(const Matrix& sim, std::span<const int> labels);

/// Text-to-image InfoNCE: each sample is normalized against the column of its
/// own class across the batch, -log(exp s[i][y_i] / sum_j exp s[j][y_i]).
LossAndGrad loss_t2i(const Matrix& sim, std::span<const int> labels);

/// (i2t + t2i) / 2.
LossAndGrad loss_contrastive(const Matrix& sim, std::span<const int> labels);

/// Cross-entropy over the similarity logits (same formula as i2t).
LossAndGrad loss_aux(const Matrix& sim, std::span<const int> labels);

/// l_det + lambda_cont * l_cont + lambda_aux * l_aux.
LossBreakdown loss_total(double l_det, double l_cont, double l_aux, const LossWeights& weights,
                         std::size_t n_positives = 0);

// ---------------------------------------------------------------------------
// Detection loss of the grid detector.

struct DetectionTargets {
  std::vector<Assignment> assignments;  // one per cell
  std::vector<int> cls;                 // class per cell, -1 when negative
  Matrix box;                           // H·W x 4 encoded offsets (zero rows for negatives)
  std::size_t n_positives = 0;
};

/// Detector targets use force_best_match so every ground truth has a learner.
DetectionTargets build_detection_targets(std::span<const Box> anchors,
                                         std::span<const GroundTruth> gts,
                                         double iou_threshold);

template <typename Scalar>
struct DetectionLossTerms {
  Scalar objectness{0};
  Scalar classification{0};
  Scalar box{0};

  Scalar total() const { return objectness + classification + box; }
};

namespace detail {
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::abs;
  using std::exp;
  using std::log1p;
  return std::max(x, Scalar(0)) + log1p(exp(-abs(x)));
}
void check_detection_shapes(Index cells, Index cls_rows, Index box_rows,
                            const DetectionTargets& targets);
}  // namespace detail

struct DetectionLoss {
  double objectness = 0.0;
  double classification = 0.0;
  double box = 0.0;
  double total = 0.0;
  Vector d_obj;   // H·W
  Matrix d_cls;   // H·W x C
  Matrix d_box;   // H·W x 4
};

/// Smooth-L1 transition point for the box term.
inline constexpr double kSmoothL1Beta = 1.0;

/// BCE-with-logits over all cells + CE over positives + smooth-L1 over
/// positives, each averaged over its own support.
DetectionLoss loss_detection(const GridPrediction& pred, const DetectionTargets& targets);

/// The three detection-loss terms without gradients, in the prediction's scalar type.
template <typename Scalar>
DetectionLossTerms<Scalar> detection_loss_terms(const GridPredictionT<Scalar>& pred,
                                                const DetectionTargets& targets) {
  const Index cells = pred.obj_logits.size();
  detail::check_detection_shapes(cells, pred.cls_logits.rows(), pred.box_offsets.rows(), targets);
  require_finite(pred.obj_logits, "loss_detection objectness");
  require_finite(pred.cls_logits, "loss_detection class logits");
  require_finite(pred.box_offsets, "loss_detection box offsets");
  DetectionLossTerms<Scalar> out;
  if (cells == 0) return out;

  for (Index i = 0; i < cells; ++i) {
    const Scalar x = pred.obj_logits(i);
    const Scalar target = targets.cls[static_cast<std::size_t>(i)] >= 0 ? Scalar(1) : Scalar(0);
    out.objectness += detail::softplus(x) - target * x;
  }
  out.objectness /= static_cast<Scalar>(cells);
  if (targets.n_positives == 0) return out;

  const auto n_pos = static_cast<Scalar>(targets.n_positives);
  const Scalar beta(kSmoothL1Beta);
  for (Index i = 0; i < cells; ++i) {
    const int y = targets.cls[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    out.classification += detail::log_sum_exp(pred.cls_logits.row(i)) - pred.cls_logits(i, y);
    for (Index k = 0; k < 4; ++k) {
      using std::abs;
      const Scalar diff = pred.box_offsets(i, k) - static_cast<Scalar>(targets.box(i, k));
      const Scalar ad = abs(diff);
      out.box += ad < beta ? Scalar(0.5) * diff * diff / beta : ad - Scalar(0.5) * beta;
    }
  }
  out.classification /= n_pos;
  out.box /= n_pos;
  return out;
}

}  // namespace vlj
