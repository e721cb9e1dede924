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

#include "vljoint/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vlj {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw GeometryError("iou: invalid box");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<bool> removed(dets.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (removed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) removed[j] = true;
    }
  }

  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(dets[i]);
  return out;
}

std::vector<Assignment> assign_positives(std::span<const Box> anchors,
                                         std::span<const GroundTruth> gts,
                                         double threshold, bool force_best_match) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("assign_positives: threshold must lie in (0, 1)");
  }
  std::vector<Assignment> out(anchors.size());
  if (gts.empty()) {
    for (std::size_t a = 0; a < anchors.size(); ++a) out[a].anchor_index = a;
    return out;
  }

  // overlaps[a * G + g]
  const std::size_t n_gt = gts.size();
  std::vector<double> overlaps(anchors.size() * n_gt);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < n_gt; ++g) {
      overlaps[a * n_gt + g] = iou(anchors[a], gts[g].box);
    }
  }

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    Assignment& as = out[a];
    as.anchor_index = a;
    std::size_t best = 0;
    for (std::size_t g = 1; g < n_gt; ++g) {
      if (overlaps[a * n_gt + g] > overlaps[a * n_gt + best]) best = g;
    }
    as.iou = overlaps[a * n_gt + best];
    if (as.iou >= threshold) {
      as.is_positive = true;
      as.matched_gt = best;
    }
  }

  if (force_best_match && !anchors.empty()) {
    for (std::size_t g = 0; g < n_gt; ++g) {
      std::size_t best = 0;
      for (std::size_t a = 1; a < anchors.size(); ++a) {
        if (overlaps[a * n_gt + g] > overlaps[best * n_gt + g]) best = a;
      }
      if (overlaps[best * n_gt + g] <= 0.0) continue;
      Assignment& as = out[best];
      if (as.is_positive) continue;
      as.is_positive = true;
      as.forced = true;
      as.matched_gt = g;
      as.iou = overlaps[best * n_gt + g];
    }
  }
  return out;
}

RowVector encode_box(const Box& gt, const Box& anchor) {
  if (!gt.valid() || !anchor.valid() || gt.area() <= 0.0 || anchor.area() <= 0.0) {
    throw GeometryError("encode_box: boxes must be valid with positive area");
  }
  RowVector t(4);
  t << (gt.center_x() - anchor.center_x()) / anchor.width(),
      (gt.center_y() - anchor.center_y()) / anchor.height(),
      std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height());
  return t;
}

Box decode_box(const Box& anchor, double dcx, double dcy, double log_w, double log_h) {
  const double cx = anchor.center_x() + dcx * anchor.width();
  const double cy = anchor.center_y() + dcy * anchor.height();
  const double w = anchor.width() * std::exp(log_w);
  const double h = anchor.height() * std::exp(log_h);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace vlj
