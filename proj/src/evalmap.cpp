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

#include "vljoint/evalmap.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace vlj {

MatchResult match_detections(std::span<const EvalImage> images, double iou_thresh) {
  MatchResult result;
  for (const EvalImage& img : images) {
    for (const GroundTruth& gt : img.gts) ++result.gt_count[gt.class_id];
  }

  for (std::size_t im = 0; im < images.size(); ++im) {
    const EvalImage& img = images[im];
    for (std::size_t d = 0; d < img.detections.size(); ++d) {
      const Detection& det = img.detections[d];
      if (!std::isfinite(det.score)) throw NumericError("match_detections: non-finite score");
      result.detections.push_back({im, d, det.class_id, det.score, false, std::nullopt});
    }
  }
  std::stable_sort(result.detections.begin(), result.detections.end(),
                   [](const MatchedDetection& a, const MatchedDetection& b) {
                     return a.score > b.score;
                   });

  std::vector<std::vector<bool>> taken(images.size());
  for (std::size_t im = 0; im < images.size(); ++im) {
    taken[im].assign(images[im].gts.size(), false);
  }
  for (MatchedDetection& md : result.detections) {
    const EvalImage& img = images[md.image];
    const Box& box = img.detections[md.detection].box;
    double best_iou = -1.0;
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      if (taken[md.image][g] || img.gts[g].class_id != md.class_id) continue;
      const double overlap = iou(box, img.gts[g].box);
      if (overlap >= iou_thresh && overlap > best_iou) {
        best_iou = overlap;
        best = g;
      }
    }
    if (best) {
      taken[md.image][*best] = true;
      md.is_tp = true;
      md.matched_gt = best;
    }
  }
  return result;
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_thresh) {
  const EvalImage image{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return match_detections(std::span<const EvalImage>(&image, 1), iou_thresh);
}

std::vector<PRPoint> pr_curve(const MatchResult& match, int class_id) {
  std::vector<PRPoint> curve;
  const auto it = match.gt_count.find(class_id);
  const std::size_t n_gt = it == match.gt_count.end() ? 0 : it->second;
  if (n_gt == 0) return curve;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (const MatchedDetection& md : match.detections) {
    if (md.class_id != class_id) continue;
    ++seen;
    if (md.is_tp) ++tp;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(n_gt),
                     static_cast<double>(tp) / static_cast<double>(seen)});
  }
  return curve;
}

std::optional<double> average_precision(const MatchResult& match, int class_id) {
  const auto it = match.gt_count.find(class_id);
  if (it == match.gt_count.end() || it->second == 0) return std::nullopt;
  const std::vector<PRPoint> curve = pr_curve(match, class_id);

  // Sentinels (0, 0) and (1, 0), envelope from the right, then sum the
  // rectangles where recall steps.
  std::vector<double> recall{0.0};
  std::vector<double> precision{0.0};
  for (const PRPoint& p : curve) {
    recall.push_back(p.recall);
    precision.push_back(p.precision);
  }
  recall.push_back(1.0);
  precision.push_back(0.0);
  for (std::size_t i = precision.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) {
    if (recall[i] != recall[i - 1]) ap += (recall[i] - recall[i - 1]) * precision[i];
  }
  return ap;
}

std::map<int, double> per_class_ap(std::span<const EvalImage> images, double iou_thresh) {
  const MatchResult match = match_detections(images, iou_thresh);
  std::map<int, double> out;
  for (const auto& [cls, count] : match.gt_count) {
    if (count > 0) out[cls] = *average_precision(match, cls);
  }
  return out;
}

double map_at_threshold(std::span<const EvalImage> images, double iou_thresh) {
  const auto aps = per_class_ap(images, iou_thresh);
  if (aps.empty()) throw std::domain_error("mAP undefined: no class has a ground truth");
  double sum = 0.0;
  for (const auto& [cls, ap] : aps) sum += ap;
  return sum / static_cast<double>(aps.size());
}

double map_at_threshold(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                        double iou_thresh) {
  const EvalImage image{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return map_at_threshold(std::span<const EvalImage>(&image, 1), iou_thresh);
}

double coco_style_map(std::span<const EvalImage> images) {
  double sum = 0.0;
  for (double t : kCocoIouThresholds) sum += map_at_threshold(images, t);
  return sum / static_cast<double>(kCocoIouThresholds.size());
}

double coco_style_map(std::span<const Detection> dets, std::span<const GroundTruth> gts) {
  const EvalImage image{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return coco_style_map(std::span<const EvalImage>(&image, 1));
}

}  // namespace vlj
