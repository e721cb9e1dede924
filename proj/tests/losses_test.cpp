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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "vljoint/errors.hpp"
#include "vljoint/losses.hpp"

namespace vlj {
namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  return Matrix::NullaryExpr(rows, cols, [&]() { return normal(rng); });
}

std::vector<int> random_labels(Index n, Index classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int& y : labels) y = pick(rng);
  return labels;
}

// ---------------------------------------------------------------------------
// Image-to-text direction

TEST(LossI2t, DiagonalFixture) {
  Matrix sim(2, 2);
  sim << 2.0, 0.0, 0.0, 2.0;
  const std::vector<int> labels = {0, 1};
  EXPECT_NEAR(loss_i2t(sim, labels).value, std::log1p(std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(loss_i2t(sim, labels).value, 0.126928, 1e-6);
}

TEST(LossI2t, UniformScoresGiveLogClassCount) {
  const std::vector<int> labels = {3, 7, 19};
  EXPECT_NEAR(loss_i2t(Matrix::Zero(3, 20), labels).value, std::log(20.0), 1e-9);
  EXPECT_NEAR(loss_i2t(Matrix::Zero(3, 20), labels).value, 2.995732, 1e-6);
}

TEST(LossI2t, LargeMarginApproachesZero) {
  Matrix sim = Matrix::Zero(4, 5);
  const std::vector<int> labels = {0, 1, 2, 3};
  for (Index i = 0; i < 4; ++i) sim(i, labels[i]) = 20.0;
  const double value = loss_i2t(sim, labels).value;
  EXPECT_GT(value, 0.0);
  EXPECT_NEAR(value, std::log1p(4.0 * std::exp(-20.0)), 1e-13);
  EXPECT_LT(value, 1e-8);
}

// ---------------------------------------------------------------------------
// Text-to-image direction

TEST(LossT2i, SingleSampleIsExactlyZero) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix sim = random_matrix(1, 8, rng, 10.0);
    const std::vector<int> labels = random_labels(1, 8, rng);
    EXPECT_EQ(loss_t2i(sim, labels).value, 0.0);
  }
}

TEST(LossT2i, UniformColumnGivesLogBatchSize) {
  const std::vector<int> labels = {1, 1, 1, 1, 1};
  EXPECT_NEAR(loss_t2i(Matrix::Zero(5, 3), labels).value, std::log(5.0), 1e-12);
}

TEST(LossT2i, LargeMarginApproachesZero) {
  Matrix sim = Matrix::Zero(3, 3);
  sim.diagonal().setConstant(20.0);
  const std::vector<int> labels = {0, 1, 2};
  EXPECT_NEAR(loss_t2i(sim, labels).value, std::log1p(2.0 * std::exp(-20.0)), 1e-13);
}

// ---------------------------------------------------------------------------
// Symmetric, auxiliary and total losses

TEST(LossContrastive, UniformPairGivesLogTwo) {
  const std::vector<int> labels = {0, 1};
  EXPECT_NEAR(loss_contrastive(Matrix::Zero(2, 2), labels).value, std::log(2.0), 1e-12);
}

TEST(LossContrastive, IsMeanOfBothDirections) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix sim = random_matrix(6, 4, rng, 3.0);
    const auto labels = random_labels(6, 4, rng);
    const auto both = loss_contrastive(sim, labels);
    const auto i2t = loss_i2t(sim, labels);
    const auto t2i = loss_t2i(sim, labels);
    EXPECT_NEAR(both.value, 0.5 * (i2t.value + t2i.value), 1e-12);
    EXPECT_LT((both.d_sim - 0.5 * (i2t.d_sim + t2i.d_sim)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(LossAux, IdenticalToImageToText) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> size(1, 12);
    const Index n = size(rng);
    const Index c = size(rng) + 1;
    const Matrix sim = random_matrix(n, c, rng, 5.0);
    const auto labels = random_labels(n, c, rng);
    const auto aux = loss_aux(sim, labels);
    const auto i2t = loss_i2t(sim, labels);
    EXPECT_NEAR(aux.value, i2t.value, 1e-12);
    EXPECT_LT((aux.d_sim - i2t.d_sim).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LossTotal, WeightedSumFixture) {
  const auto total = loss_total(1.0, 0.5, 0.25, LossWeights{});
  EXPECT_NEAR(total.l_total, 1.45, 1e-12);
  EXPECT_EQ(total.l_det, 1.0);
  EXPECT_EQ(total.l_cont, 0.5);
  EXPECT_EQ(total.l_aux, 0.25);
}

TEST(LossTotal, ZeroWeightsLeaveDetectionLoss) {
  EXPECT_EQ(loss_total(0.7, 3.0, 9.0, LossWeights{0.0, 0.0}).l_total, 0.7);
}

TEST(LossTotal, LinearInEachTerm) {
  std::mt19937_64 rng(54);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const LossWeights w{u(rng), u(rng)};
    const double d = u(rng);
    const double c = u(rng);
    const double a = u(rng);
    const double base = loss_total(d, c, a, w).l_total;
    EXPECT_NEAR(loss_total(d, c + 1.0, a, w).l_total - base, w.lambda_cont, 1e-12);
    EXPECT_NEAR(loss_total(d, c, a + 1.0, w).l_total - base, w.lambda_aux, 1e-12);
    EXPECT_NEAR(loss_total(d + 1.0, c, a, w).l_total - base, 1.0, 1e-12);
  }
}

TEST(LossWeights, RejectsNegativeOrNonFinite) {
  EXPECT_NO_THROW((LossWeights{0.0, 0.0}.validate()));
  EXPECT_THROW((LossWeights{-0.1, 0.8}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0.5, std::nan("")}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{INFINITY, 0.8}.validate()), ConfigError);
  EXPECT_THROW(loss_total(1.0, 1.0, 1.0, LossWeights{-1.0, 0.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Properties shared by both directions

TEST(ContrastiveProperties, NonNegative) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix sim = random_matrix(5, 6, rng, 20.0);
    const auto labels = random_labels(5, 6, rng);
    EXPECT_GE(loss_i2t(sim, labels).value, 0.0);
    EXPECT_GE(loss_t2i(sim, labels).value, 0.0);
  }
}

TEST(ContrastiveProperties, InvariantToSampleOrder) {
  std::mt19937_64 rng(56);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix sim = random_matrix(7, 4, rng, 2.0);
    const auto labels = random_labels(7, 4, rng);
    std::vector<int> order(7);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix permuted(7, 4);
    std::vector<int> permuted_labels(7);
    for (int i = 0; i < 7; ++i) {
      permuted.row(i) = sim.row(order[i]);
      permuted_labels[i] = labels[order[i]];
    }
    EXPECT_NEAR(loss_i2t(permuted, permuted_labels).value, loss_i2t(sim, labels).value, 1e-12);
    EXPECT_NEAR(loss_t2i(permuted, permuted_labels).value, loss_t2i(sim, labels).value, 1e-12);
  }
}

TEST(ContrastiveProperties, EmptyBatchIsZero) {
  const Matrix sim(0, 5);
  const std::vector<int> labels;
  for (const auto& r : {loss_i2t(sim, labels), loss_t2i(sim, labels), loss_contrastive(sim, labels)}) {
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.d_sim.rows(), 0);
    EXPECT_EQ(r.d_sim.cols(), 5);
  }
}

TEST(ContrastiveProperties, RejectsBadLabelsAndNonFiniteScores) {
  const Matrix sim = Matrix::Zero(2, 3);
  EXPECT_THROW(loss_i2t(sim, std::vector<int>{0}), DimensionError);
  EXPECT_THROW(loss_t2i(sim, std::vector<int>{0, 3}), DimensionError);
  EXPECT_THROW(loss_i2t(sim, std::vector<int>{-1, 0}), DimensionError);
  Matrix bad = sim;
  bad(1, 1) = std::nan("");
  EXPECT_THROW(loss_contrastive(bad, std::vector<int>{0, 1}), NumericError);
}

TEST(ContrastiveProperties, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(57);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    ParamTensor sim("sim", random_matrix(6, 5, rng, 3.0));
    const auto labels = random_labels(6, 5, rng);
    ParamTensor* params[] = {&sim};
    sim.grad = loss_i2t(sim.value, labels).d_sim;
    worst = std::max(worst, finite_diff_check([&]() -> long double {
                              return i2t_value(sim.value.cast<long double>(), labels);
                            }, params).max_rel_error());
    sim.grad = loss_t2i(sim.value, labels).d_sim;
    worst = std::max(worst, finite_diff_check([&]() -> long double {
                              return t2i_value(sim.value.cast<long double>(), labels);
                            }, params).max_rel_error());
  }
  EXPECT_LT(worst, 1e-5);
}

// ---------------------------------------------------------------------------
// Detection loss

std::vector<Box> two_by_two_anchors() {
  return {{0, 0, 16, 16}, {16, 0, 32, 16}, {0, 16, 16, 32}, {16, 16, 32, 32}};
}

GridPrediction zero_prediction(Index cells, Index classes) {
  GridPrediction pred;
  pred.features = Matrix::Zero(cells, 1);
  pred.obj_logits = Vector::Zero(cells);
  pred.cls_logits = Matrix::Zero(cells, classes);
  pred.box_offsets = Matrix::Zero(cells, 4);
  return pred;
}

TEST(DetectionLoss, NoObjectsAndZeroLogitsGiveLogTwo) {
  const auto anchors = two_by_two_anchors();
  const auto targets = build_detection_targets(anchors, {}, 0.5);
  EXPECT_EQ(targets.n_positives, 0u);
  const auto loss = loss_detection(zero_prediction(4, 3), targets);
  EXPECT_NEAR(loss.objectness, std::log(2.0), 1e-12);
  EXPECT_EQ(loss.classification, 0.0);
  EXPECT_EQ(loss.box, 0.0);
  EXPECT_NEAR(loss.total, std::log(2.0), 1e-12);
}

TEST(DetectionLoss, ConfidentCorrectPredictionIsNearZero) {
  const auto anchors = two_by_two_anchors();
  const std::vector<GroundTruth> gts = {{{17, 1, 31, 15}, 2}};
  const auto targets = build_detection_targets(anchors, gts, 0.5);
  ASSERT_EQ(targets.n_positives, 1u);
  ASSERT_EQ(targets.cls[1], 2);
  GridPrediction pred = zero_prediction(4, 3);
  pred.obj_logits << -12, 12, -12, -12;
  pred.cls_logits(1, 2) = 12.0;
  pred.box_offsets = targets.box;
  const auto loss = loss_detection(pred, targets);
  EXPECT_EQ(loss.box, 0.0);
  EXPECT_LT(loss.total, 1e-3);
}

TEST(DetectionLoss, UnreachableObjectStillGetsOneLearner) {
  const auto anchors = two_by_two_anchors();
  const std::vector<GroundTruth> gts = {{{2, 2, 30, 30}, 0}};
  const auto targets = build_detection_targets(anchors, gts, 0.5);
  EXPECT_EQ(targets.n_positives, 1u);
}

TEST(DetectionLoss, ShapeMismatchThrows) {
  const auto targets = build_detection_targets(two_by_two_anchors(), {}, 0.5);
  EXPECT_THROW(loss_detection(zero_prediction(3, 2), targets), DimensionError);
}

TEST(DetectionLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(58);
  const auto anchors = two_by_two_anchors();
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<GroundTruth> gts = {{{1, 1, 15, 14}, 0}, {{15, 17, 31, 30}, 2}};
    const auto targets = build_detection_targets(anchors, gts, 0.5);
    ParamTensor obj("obj", random_matrix(4, 1, rng, 2.0));
    ParamTensor cls("cls", random_matrix(4, 3, rng, 2.0));
    ParamTensor box("box", random_matrix(4, 4, rng, 0.3));
    GridPrediction pred = zero_prediction(4, 3);
    pred.obj_logits = obj.value.col(0);
    pred.cls_logits = cls.value;
    pred.box_offsets = box.value;
    const auto loss = loss_detection(pred, targets);
    obj.grad = loss.d_obj;
    cls.grad = loss.d_cls;
    box.grad = loss.d_box;
    auto value = [&]() -> long double {
      GridPredictionT<long double> p;
      p.obj_logits = obj.value.col(0).cast<long double>();
      p.cls_logits = cls.value.cast<long double>();
      p.box_offsets = box.value.cast<long double>();
      return detection_loss_terms(p, targets).total();
    };
    ParamTensor* params[] = {&obj, &cls, &box};
    worst = std::max(worst, finite_diff_check(value, params).max_rel_error());
  }
  EXPECT_LT(worst, 1e-5);
}

}  // namespace
}  // namespace vlj
