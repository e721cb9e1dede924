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

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vljoint/numerics.hpp"

namespace vlj {

/// Axis-aligned box in canvas coordinates, corner form.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct GroundTruth {
  Box box;
  int class_id = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
  /// Full fused score row; when present, score == per_class_scores[class_id].
  std::optional<Vector> per_class_scores;
};

struct Assignment {
  std::size_t anchor_index = 0;
  std::optional<std::size_t> matched_gt;
  double iou = 0.0;
  bool is_positive = false;
  /// Positive only because it is some ground truth's best anchor.
  bool forced = false;
};

/// Throws GeometryError on inverted or non-finite corners. Returns 0 when both
/// boxes have zero area.
double iou(const Box& a, const Box& b);

/// Greedy per-class NMS. Drops any box whose IoU with an already kept box of
/// the same class exceeds `iou_threshold`. Output is score-descending with
/// ties broken by original index.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

/// Marks anchors whose best IoU against any ground truth reaches `threshold`.
/// With `force_best_match`, every ground truth's highest-IoU anchor is also
/// marked (flagged `forced`) if not already positive.
std::vector<Assignment> assign_positives(std::span<const Box> anchors,
                                         std::span<const GroundTruth> gts,
                                         double threshold, bool force_best_match);

/// Regression target of `gt` relative to `anchor`:
/// ((cx - acx) / aw, (cy - acy) / ah, log(w / aw), log(h / ah)).
RowVector encode_box(const Box& gt, const Box& anchor);

/// Inverse of encode_box. The result is not clipped.
Box decode_box(const Box& anchor, double dcx, double dcy, double log_w, double log_h);

}  // namespace vlj
