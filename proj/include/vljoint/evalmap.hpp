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

// Detection-quality metrics: greedy matching, all-point interpolated average
// precision, mAP at one IoU threshold and the COCO-style threshold sweep.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "vljoint/geometry.hpp"

namespace vlj {

/// Detections and ground truths of one image.
struct EvalImage {
  std::vector<Detection> detections;
  std::vector<GroundTruth> gts;
};

struct MatchedDetection {
  std::size_t image = 0;
  std::size_t detection = 0;  // index within its image
  int class_id = 0;
  double score = 0.0;
  bool is_tp = false;
  std::optional<std::size_t> matched_gt;  // index within its image
};

struct MatchResult {
  /// Sorted by score descending; ties by (image, detection index).
  std::vector<MatchedDetection> detections;
  std::map<int, std::size_t> gt_count;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// IoU thresholds of the COCO sweep: 0.50, 0.55, ..., 0.95.
inline constexpr std::array<double, 10> kCocoIouThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                              0.75, 0.80, 0.85, 0.90, 0.95};

MatchResult match_detections(std::span<const EvalImage> images, double iou_thresh);
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_thresh);

std::vector<PRPoint> pr_curve(const MatchResult& match, int class_id);

/// Area under the precision envelope. Returns nullopt for a class without
/// ground truths (such classes are left out of mAP).
std::optional<double> average_precision(const MatchResult& match, int class_id);

/// Per-class AP for every class that has at least one ground truth.
std::map<int, double> per_class_ap(std::span<const EvalImage> images, double iou_thresh);

/// Mean AP over classes with ground truths. Throws std::domain_error when no
/// class has any ground truth.
double map_at_threshold(std::span<const EvalImage> images, double iou_thresh = 0.5);
double map_at_threshold(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                        double iou_thresh = 0.5);

/// Mean of map_at_threshold over kCocoIouThresholds.
double coco_style_map(std::span<const EvalImage> images);
double coco_style_map(std::span<const Detection> dets, std::span<const GroundTruth> gts);

}  // namespace vlj
