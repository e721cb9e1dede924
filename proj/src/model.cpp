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

#include "vljoint/model.hpp"

#include <cmath>

namespace vlj {

namespace {

// RNG stream identifiers for Model::init.
constexpr std::uint64_t kDetectorStream = 0xD7EC;
constexpr std::uint64_t kProjectionStream = 0x9207;
constexpr std::uint64_t kTextStream = 0x7E47;

Index argmax_row(const Matrix& m, Index row) {
  Index best = 0;
  m.row(row).maxCoeff(&best);
  return best;
}

void require_finite_term(double value, const char* term) {
  if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss term ") + term);
}

}  // namespace

Model Model::init(const RunConfig& config) {
  config.validate();
  const auto& s = config.scene;
  const auto& t = config.train;
  const auto& v = config.vlhead;
  Model m;
  std::mt19937_64 det_rng(mix_seed(t.seed, kDetectorStream));
  m.detector = DetectorParams::init(s.raw_dim, t.backbone_hidden, t.feature_dim, s.num_classes,
                                    det_rng);
  std::mt19937_64 proj_rng(mix_seed(t.seed, kProjectionStream));
  m.projection = ProjectionHeadParams::init(t.feature_dim, v.hidden_dim, v.embed_dim, proj_rng);
  TextEmbeddingSource source = SeededRandomInit{mix_seed(t.seed, kTextStream) ^ v.text_seed};
  if (!config.paths.text_embeddings.empty()) {
    source = std::filesystem::path(config.paths.text_embeddings);
  }
  m.text = init_text_embeddings(s.num_classes, v.embed_dim, source);
  m.temperatures = TemperatureVector::constant(s.num_classes, v.tau_init, v.tau_min);
  return m;
}

std::vector<ParamTensor*> Model::parameters() {
  std::vector<ParamTensor*> out = detector.backbone_tensors();
  for (ParamTensor* p : detector.head_tensors()) out.push_back(p);
  for (ParamTensor* p : vl_parameters()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<ParamTensor*> Model::vl_parameters() {
  std::vector<ParamTensor*> out = projection.tensors();
  out.push_back(&text.embeddings);
  out.push_back(&temperatures.tau);
  return out;
}

std::map<std::string, std::vector<ParamTensor*>> Model::groups() {
  return {{"backbone", detector.backbone_tensors()},
          {"heads", detector.head_tensors()},
          {"projection", projection.tensors()},
          {"text_embeddings", {&text.embeddings}},
          {"temperatures", {&temperatures.tau}}};
}

void Model::zero_grad() {
  for (ParamTensor* p : parameters()) p->zero_grad();
}

std::vector<std::pair<Index, int>> vl_positives(const SyntheticScene& scene,
                                                const SceneConfig& config, double iou_positive) {
  const auto anchors = cell_anchors(config);
  std::vector<std::pair<Index, int>> out;
  for (const Assignment& a : assign_positives(anchors, scene.gts, iou_positive, false)) {
    if (a.is_positive) {
      out.emplace_back(static_cast<Index>(a.anchor_index), scene.gts[*a.matched_gt].class_id);
    }
  }
  return out;
}

BatchResult evaluate_batch(Model& model, std::span<const SyntheticScene* const> scenes,
                           const SceneConfig& config, const StepOptions& options,
                           BatchTrace* trace) {
  options.weights.validate();
  const auto anchors = cell_anchors(config);
  const std::size_t n_scenes = scenes.size();
  if (n_scenes == 0) throw DimensionError("evaluate_batch: empty batch");
  const double inv_batch = 1.0 / static_cast<double>(n_scenes);

  std::vector<DetectorCache> caches(n_scenes);
  std::vector<GridPrediction> preds(n_scenes);
  std::vector<DetectionLoss> det_losses(n_scenes);
  BatchResult result;
  double l_det = 0.0;
  for (std::size_t b = 0; b < n_scenes; ++b) {
    preds[b] = detector_forward(scenes[b]->raw, model.detector,
                                options.compute_grads ? &caches[b] : nullptr);
    const DetectionTargets targets =
        build_detection_targets(anchors, scenes[b]->gts, options.iou_positive);
    det_losses[b] = loss_detection(preds[b], targets);
    l_det += det_losses[b].total * inv_batch;
    result.det_objectness += det_losses[b].objectness * inv_batch;
    result.det_class += det_losses[b].classification * inv_batch;
    result.det_box += det_losses[b].box * inv_batch;
  }
  require_finite_term(l_det, "l_det");

  // Vision-language rows are copied straight out of the detector's features.
  std::vector<std::pair<std::size_t, Index>> rows;
  std::vector<int> labels;
  if (options.vl_branch) {
    for (std::size_t b = 0; b < n_scenes; ++b) {
      for (const auto& [cell, label] : vl_positives(*scenes[b], config, options.iou_positive)) {
        rows.emplace_back(b, cell);
        labels.push_back(label);
      }
    }
  }
  const auto n_pos = static_cast<Index>(rows.size());
  Matrix vl_input(n_pos, model.detector.feature_dim());
  for (Index r = 0; r < n_pos; ++r) {
    vl_input.row(r) = preds[rows[static_cast<std::size_t>(r)].first].features.row(
        rows[static_cast<std::size_t>(r)].second);
  }
  if (trace != nullptr) {
    trace->scene_features.clear();
    for (const auto& p : preds) trace->scene_features.push_back(p.features);
    trace->positive_rows = rows;
    trace->vl_input = vl_input;
  }

  ProjectionCache proj_cache;
  SimilarityMatrix sim;
  LossAndGrad cont{0.0, {}};
  LossAndGrad aux{0.0, {}};
  if (n_pos > 0) {
    const Matrix vhat = visual_embed(vl_input, model.projection, &proj_cache);
    sim = similarity(vhat, model.text, model.temperatures);
    cont = loss_contrastive(sim.s, labels);
    aux = loss_aux(sim.s, labels);
    for (Index r = 0; r < n_pos; ++r) {
      if (argmax_row(sim.s, r) == labels[static_cast<std::size_t>(r)]) ++result.clip_correct;
    }
    result.clip_total = static_cast<std::size_t>(n_pos);
  }
  require_finite_term(cont.value, "l_cont");
  require_finite_term(aux.value, "l_aux");
  result.loss = loss_total(l_det, cont.value, aux.value, options.weights,
                           static_cast<std::size_t>(n_pos));
  require_finite_term(result.loss.l_total, "l_total");

  if (!options.compute_grads) return result;

  Matrix d_vl_input;
  if (n_pos > 0) {
    const Matrix d_sim =
        options.weights.lambda_cont * cont.d_sim + options.weights.lambda_aux * aux.d_sim;
    const SimilarityGrads sg =
        similarity_backward(proj_cache.embed, model.text, model.temperatures, sim, d_sim);
    model.text.embeddings.grad += sg.d_embeddings;
    model.temperatures.tau.grad += sg.d_tau;
    d_vl_input = visual_embed_backward(proj_cache, sg.d_vhat, model.projection);
  }

  for (std::size_t b = 0; b < n_scenes; ++b) {
    DetectorUpstream up;
    up.d_obj = det_losses[b].d_obj * inv_batch;
    up.d_cls = det_losses[b].d_cls * inv_batch;
    up.d_box = det_losses[b].d_box * inv_batch;
    if (options.vl_branch) {
      up.d_features = Matrix::Zero(preds[b].features.rows(), preds[b].features.cols());
      for (Index r = 0; r < n_pos; ++r) {
        const auto& [scene, cell] = rows[static_cast<std::size_t>(r)];
        if (scene == b) up.d_features.row(cell) += d_vl_input.row(r);
      }
    }
    detector_backward(caches[b], preds[b], up, model.detector);
  }
  return result;
}

template <typename Scalar>
Scalar batch_total_loss(const Model& model, std::span<const SyntheticScene* const> scenes,
                        const SceneConfig& config, const StepOptions& options,
                        const FrozenStage<Scalar>* frozen) {
  options.weights.validate();
  if (scenes.empty()) throw DimensionError("batch_total_loss: empty batch");
  const bool frozen_features = frozen != nullptr && !frozen->features.empty();
  if (frozen_features && frozen->features.size() != scenes.size()) {
    throw DimensionError("batch_total_loss: frozen features do not match the batch");
  }

  std::vector<MatrixX<Scalar>> features(scenes.size());
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    if (frozen_features) {
      features[b] = frozen->features[b];
    } else {
      const MatrixX<Scalar> raw = scenes[b]->raw.template cast<Scalar>();
      features[b] = detector_forward(raw, model.detector).features;
    }
  }

  Scalar l_det(0);
  if (frozen != nullptr && frozen->l_det) {
    l_det = *frozen->l_det;
  } else {
    const auto anchors = cell_anchors(config);
    const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(scenes.size());
    for (std::size_t b = 0; b < scenes.size(); ++b) {
      const GridPredictionT<Scalar> pred = detector_heads(features[b], model.detector);
      const DetectionTargets targets =
          build_detection_targets(anchors, scenes[b]->gts, options.iou_positive);
      l_det += detection_loss_terms(pred, targets).total() * inv_batch;
    }
  }
  if (!options.vl_branch) return l_det;

  std::vector<std::pair<std::size_t, Index>> rows;
  std::vector<int> labels;
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    for (const auto& [cell, label] : vl_positives(*scenes[b], config, options.iou_positive)) {
      rows.emplace_back(b, cell);
      labels.push_back(label);
    }
  }
  if (rows.empty()) return l_det;
  MatrixX<Scalar> vl_input(static_cast<Index>(rows.size()), model.detector.feature_dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    vl_input.row(static_cast<Index>(r)) = features[rows[r].first].row(rows[r].second);
  }
  const MatrixX<Scalar> sim =
      similarity(visual_embed(vl_input, model.projection), model.text, model.temperatures).s;
  const Scalar l_cont = Scalar(0.5) * (i2t_value(sim, labels) + t2i_value(sim, labels));
  const Scalar l_aux = i2t_value(sim, labels);
  return l_det + static_cast<Scalar>(options.weights.lambda_cont) * l_cont +
         static_cast<Scalar>(options.weights.lambda_aux) * l_aux;
}

template double batch_total_loss<double>(const Model&, std::span<const SyntheticScene* const>,
                                         const SceneConfig&, const StepOptions&,
                                         const FrozenStage<double>*);
template long double batch_total_loss<long double>(const Model&,
                                                   std::span<const SyntheticScene* const>,
                                                   const SceneConfig&, const StepOptions&,
                                                   const FrozenStage<long double>*);

SceneInference infer_scene(const Model& model, const SyntheticScene& scene,
                           const SceneConfig& config, double alpha, double obj_threshold,
                           double nms_iou) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("infer_scene: alpha must lie in [0, 1]");
  SceneInference out;
  out.pred = detector_forward(scene.raw, model.detector);
  out.p_ce = softmax_rows(out.pred.cls_logits);
  if (alpha == 1.0) {
    out.p_fused = out.p_ce;
  } else {
    // CLIP probabilities are only needed where a detection can be emitted.
    std::vector<Index> cells;
    for (Index i = 0; i < out.pred.obj_logits.size(); ++i) {
      if (sigmoid(out.pred.obj_logits(i)) >= obj_threshold) cells.push_back(i);
    }
    Matrix p_clip = out.p_ce;
    if (!cells.empty()) {
      Matrix feats(static_cast<Index>(cells.size()), out.pred.features.cols());
      for (std::size_t k = 0; k < cells.size(); ++k) {
        feats.row(static_cast<Index>(k)) = out.pred.features.row(cells[k]);
      }
      const Matrix probs =
          clip_probs(similarity(visual_embed(feats, model.projection), model.text,
                                model.temperatures));
      for (std::size_t k = 0; k < cells.size(); ++k) {
        p_clip.row(cells[k]) = probs.row(static_cast<Index>(k));
      }
    }
    out.p_fused = fuse_scores(out.p_ce, p_clip, alpha);
  }
  out.detections = decode_detections(out.pred, out.p_fused, obj_threshold, config, nms_iou);
  return out;
}

std::pair<std::size_t, std::size_t> clip_accuracy(const Model& model,
                                                  std::span<const SyntheticScene> scenes,
                                                  const SceneConfig& config, double iou_positive) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const SyntheticScene& scene : scenes) {
    const auto positives = vl_positives(scene, config, iou_positive);
    if (positives.empty()) continue;
    const GridPrediction pred = detector_forward(scene.raw, model.detector);
    Matrix feats(static_cast<Index>(positives.size()), pred.features.cols());
    for (std::size_t k = 0; k < positives.size(); ++k) {
      feats.row(static_cast<Index>(k)) = pred.features.row(positives[k].first);
    }
    const SimilarityMatrix sim =
        similarity(visual_embed(feats, model.projection), model.text, model.temperatures);
    for (std::size_t k = 0; k < positives.size(); ++k) {
      if (argmax_row(sim.s, static_cast<Index>(k)) == positives[k].second) ++correct;
    }
    total += positives.size();
  }
  return {correct, total};
}

}  // namespace vlj
