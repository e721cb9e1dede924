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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vljoint/errors.hpp"
#include "vljoint/geometry.hpp"

namespace vlj {
namespace {

Detection det(Box box, int class_id, double score) { return {box, class_id, score, std::nullopt}; }

// ---------------------------------------------------------------------------
// iou

TEST(Iou, IdenticalBoxes) { EXPECT_NEAR(iou({1, 2, 5, 9}, {1, 2, 5, 9}), 1.0, 1e-12); }

TEST(Iou, DisjointBoxes) { EXPECT_NEAR(iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0, 1e-12); }

TEST(Iou, HalfOverlap) { EXPECT_NEAR(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0, 1e-12); }

TEST(Iou, TouchingEdgesDoNotOverlap) { EXPECT_EQ(iou({0, 0, 1, 1}, {1, 0, 2, 1}), 0.0); }

TEST(Iou, TwoZeroAreaBoxesGiveZero) { EXPECT_EQ(iou({3, 3, 3, 3}, {3, 3, 3, 3}), 0.0); }

TEST(Iou, InvalidBoxThrows) {
  EXPECT_THROW(iou({2, 0, 1, 1}, {0, 0, 1, 1}), GeometryError);
  EXPECT_THROW(iou({0, 0, 1, 1}, {0, 0, 1, std::nan("")}), GeometryError);
}

TEST(Iou, SymmetricBoundedAndMatchesOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box a = oracle::random_box(rng, 64.0, 0.5, 30.0);
    const Box b = oracle::random_box(rng, 64.0, 0.5, 30.0);
    const double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, oracle::box_iou(a, b), 1e-12);
    EXPECT_EQ(iou(a, a), 1.0);
  }
}

// ---------------------------------------------------------------------------
// nms

TEST(Nms, SingleDetectionSurvives) {
  const std::vector<Detection> dets = {det({0, 0, 4, 4}, 0, 0.3)};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box, dets[0].box);
}

TEST(Nms, DuplicateKeepsHigherScore) {
  const std::vector<Detection> dets = {det({0, 0, 4, 4}, 1, 0.8), det({0, 0, 4, 4}, 1, 0.9)};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
}

TEST(Nms, DisjointBoxesKeptInScoreOrder) {
  const std::vector<Detection> dets = {det({0, 0, 1, 1}, 0, 0.2), det({5, 5, 6, 6}, 0, 0.7)};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.7);
  EXPECT_EQ(kept[1].score, 0.2);
}

TEST(Nms, ClassesAreSuppressedIndependently) {
  const std::vector<Detection> dets = {det({0, 0, 4, 4}, 0, 0.9), det({0, 0, 4, 4}, 1, 0.8)};
  EXPECT_EQ(nms(dets, 0.5).size(), 2u);
}

TEST(Nms, OverlapExactlyAtThresholdIsKept) {
  // IoU 1/3 with threshold 1/3: suppression requires strictly greater overlap.
  const std::vector<Detection> dets = {det({0, 0, 10, 10}, 0, 0.9), det({5, 0, 15, 10}, 0, 0.8)};
  EXPECT_EQ(nms(dets, iou(dets[0].box, dets[1].box)).size(), 2u);
}

TEST(Nms, ThresholdOneReturnsInputSortedByScore) {
  std::mt19937_64 rng(22);
  std::vector<Detection> dets;
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int i = 0; i < 20; ++i) dets.push_back(det(oracle::random_box(rng, 32, 1, 16), 0, score(rng)));
  const auto kept = nms(dets, 1.0);
  ASSERT_EQ(kept.size(), dets.size());
  for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].score, kept[i].score);
}

TEST(Nms, MatchesBruteForceGreedy) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> count(0, 64);
  std::uniform_int_distribution<int> cls(0, 2);
  // Coarse scores force frequent ties, exercising the index tie-break.
  std::uniform_int_distribution<int> score_step(0, 10);
  std::uniform_real_distribution<double> thr(0.05, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      dets.push_back(det(oracle::random_box(rng, 48, 2, 20), cls(rng), 0.1 * score_step(rng)));
    }
    const double threshold = thr(rng);
    const auto kept = nms(dets, threshold);
    const auto expected = oracle::greedy_nms(dets, threshold);
    ASSERT_EQ(kept.size(), expected.size()) << "trial " << trial;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const Detection& want = dets[expected[k]];
      EXPECT_EQ(kept[k].box, want.box) << "trial " << trial;
      EXPECT_EQ(kept[k].class_id, want.class_id);
      EXPECT_EQ(kept[k].score, want.score);
    }
  }
}

// ---------------------------------------------------------------------------
// assign_positives

std::vector<Box> unit_grid(int side, double cell) {
  std::vector<Box> anchors;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) anchors.push_back({c * cell, r * cell, (c + 1) * cell, (r + 1) * cell});
  }
  return anchors;
}

TEST(AssignPositives, IdenticalAnchorIsPositive) {
  const std::vector<Box> anchors = {{0, 0, 10, 10}, {10, 0, 20, 10}};
  const std::vector<GroundTruth> gts = {{{10, 0, 20, 10}, 3}};
  const auto a = assign_positives(anchors, gts, 0.5, false);
  EXPECT_FALSE(a[0].is_positive);
  ASSERT_TRUE(a[1].is_positive);
  EXPECT_EQ(a[1].iou, 1.0);
  EXPECT_EQ(*a[1].matched_gt, 0u);
  EXPECT_FALSE(a[1].forced);
}

TEST(AssignPositives, BelowThresholdIsNegative) {
  // The first ground truth covers 40% of the anchor; the second overlaps less.
  const std::vector<Box> anchors = {{0, 0, 10, 10}};
  const std::vector<GroundTruth> gts = {{{0, 0, 10, 4}, 0}, {{6, 0, 16, 10}, 1}};
  ASSERT_NEAR(iou(anchors[0], gts[0].box), 0.4, 1e-12);
  ASSERT_LT(iou(anchors[0], gts[1].box), 0.4);
  const auto a = assign_positives(anchors, gts, 0.5, false);
  EXPECT_FALSE(a[0].is_positive);
  EXPECT_NEAR(a[0].iou, 0.4, 1e-12);
}

TEST(AssignPositives, NoGroundTruthsMeansNoPositives) {
  const auto anchors = unit_grid(4, 8.0);
  for (bool force : {false, true}) {
    for (const Assignment& a : assign_positives(anchors, {}, 0.5, force)) {
      EXPECT_FALSE(a.is_positive);
      EXPECT_FALSE(a.matched_gt.has_value());
    }
  }
}

TEST(AssignPositives, ForcedBestMatchGivesEveryGroundTruthALearner) {
  const auto anchors = unit_grid(4, 8.0);
  // Too large for any single anchor to reach IoU 0.5.
  const std::vector<GroundTruth> gts = {{{1, 1, 20, 20}, 2}};
  const auto plain = assign_positives(anchors, gts, 0.5, false);
  const auto forced = assign_positives(anchors, gts, 0.5, true);
  int n_plain = 0;
  int n_forced = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    n_plain += plain[i].is_positive;
    if (forced[i].is_positive) {
      ++n_forced;
      EXPECT_TRUE(forced[i].forced);
      EXPECT_EQ(*forced[i].matched_gt, 0u);
    }
  }
  EXPECT_EQ(n_plain, 0);
  EXPECT_EQ(n_forced, 1);
}

TEST(AssignPositives, TiesMatchLowestGroundTruthIndex) {
  const std::vector<Box> anchors = {{0, 0, 10, 10}};
  const std::vector<GroundTruth> gts = {{{0, 0, 10, 10}, 4}, {{0, 0, 10, 10}, 5}};
  EXPECT_EQ(*assign_positives(anchors, gts, 0.5, false)[0].matched_gt, 0u);
}

TEST(AssignPositives, ThresholdRuleIsMonotone) {
  std::mt19937_64 rng(24);
  const auto anchors = unit_grid(6, 8.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GroundTruth> gts;
    for (int g = 0; g < 4; ++g) gts.push_back({oracle::random_box(rng, 48, 4, 20), g});
    std::size_t previous = anchors.size() + 1;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      std::size_t count = 0;
      for (const Assignment& a : assign_positives(anchors, gts, thr, false)) {
        if (!a.is_positive) continue;
        ++count;
        EXPECT_GE(a.iou, thr);
        EXPECT_TRUE(a.matched_gt.has_value());
      }
      EXPECT_LE(count, previous);
      previous = count;
    }
  }
}

// ---------------------------------------------------------------------------
// box encoding

TEST(BoxCoding, DecodeOfEncodeIsIdentity) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 200; ++trial) {
    const Box anchor = oracle::random_box(rng, 128, 4, 32);
    const Box gt = oracle::random_box(rng, 128, 4, 64);
    const RowVector t = encode_box(gt, anchor);
    const Box back = decode_box(anchor, t(0), t(1), t(2), t(3));
    EXPECT_NEAR(back.x_min, gt.x_min, 1e-9);
    EXPECT_NEAR(back.y_min, gt.y_min, 1e-9);
    EXPECT_NEAR(back.x_max, gt.x_max, 1e-9);
    EXPECT_NEAR(back.y_max, gt.y_max, 1e-9);
  }
}

TEST(BoxCoding, ZeroOffsetsReproduceAnchor) {
  const Box anchor{16, 32, 32, 48};
  EXPECT_EQ(decode_box(anchor, 0, 0, 0, 0), anchor);
}

TEST(BoxCoding, LogWidthDoublesWidth) {
  const Box b = decode_box({0, 0, 16, 16}, 0, 0, std::log(2.0), 0);
  EXPECT_NEAR(b.width(), 32.0, 1e-12);
  EXPECT_NEAR(b.height(), 16.0, 1e-12);
  EXPECT_NEAR(b.center_x(), 8.0, 1e-12);
}

}  // namespace
}  // namespace vlj
