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

#include "vljoint/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vljoint/evalmap.hpp"

namespace vlj {

namespace {

constexpr std::uint64_t kShuffleStream = 0xE90C;
constexpr std::uint64_t kGradcheckSceneStream = 0x6C00;
constexpr int kGradcheckSceneAttempts = 1000;

void check_scenes(const std::vector<SyntheticScene>& scenes, const SceneConfig& config,
                  const char* what) {
  for (const SyntheticScene& s : scenes) {
    if (s.raw.rows() != config.num_cells() || s.raw.cols() != config.raw_dim) {
      throw FormatError(std::string(what) + " scene " + std::to_string(s.scene_id) +
                        " does not match the configured grid/raw_dim");
    }
    for (const GroundTruth& gt : s.gts) {
      if (gt.class_id < 0 || gt.class_id >= config.num_classes || !gt.box.valid()) {
        throw FormatError(std::string(what) + " scene " + std::to_string(s.scene_id) +
                          " has an invalid ground truth");
      }
    }
  }
}

}  // namespace

ValidationResult validate_model(const Model& model, std::span<const SyntheticScene> scenes,
                                const RunConfig& config, double alpha) {
  ValidationResult out;
  std::vector<EvalImage> images;
  images.reserve(scenes.size());
  for (const SyntheticScene& scene : scenes) {
    SceneInference inf = infer_scene(model, scene, config.scene, alpha, config.eval.obj_threshold,
                                     config.eval.nms_iou);
    images.push_back({std::move(inf.detections), scene.gts});
  }
  out.n_images = images.size();
  out.per_class_ap50 = per_class_ap(images, 0.5);
  out.map50 = map_at_threshold(images, 0.5);
  out.map5095 = coco_style_map(images);
  if (config.train.vl_branch) {
    const auto [correct, total] =
        clip_accuracy(model, scenes, config.scene, config.train.iou_positive);
    if (total > 0) out.clip_top1 = static_cast<double>(correct) / static_cast<double>(total);
  }
  return out;
}

Trainer::Trainer(RunConfig config, std::vector<SyntheticScene> train,
                 std::vector<SyntheticScene> val)
    : config_(std::move(config)), train_(std::move(train)), val_(std::move(val)) {
  config_.validate();
  check_scenes(train_, config_.scene, "training");
  check_scenes(val_, config_.scene, "validation");
  if (config_.train.epochs > 0 && train_.empty()) {
    throw ConfigError("training needs at least one scene");
  }
  model_ = Model::init(config_);
  for (const ParamTensor* p : model_.parameters()) {
    velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

Trainer::Trainer(Checkpoint checkpoint, std::vector<SyntheticScene> train,
                 std::vector<SyntheticScene> val)
    : config_(std::move(checkpoint.config)),
      model_(std::move(checkpoint.model)),
      velocity_(std::move(checkpoint.velocity)),
      step_(checkpoint.step),
      acc_(checkpoint.accumulator),
      history_(std::move(checkpoint.history)),
      train_(std::move(train)),
      val_(std::move(val)) {
  config_.validate();
  check_scenes(train_, config_.scene, "training");
  check_scenes(val_, config_.scene, "validation");
  const auto params = model_.parameters();
  if (velocity_.size() != params.size()) {
    throw FormatError("checkpoint: momentum buffer count differs from parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (velocity_[i].rows() != params[i]->value.rows() ||
        velocity_[i].cols() != params[i]->value.cols()) {
      throw FormatError("checkpoint: momentum buffer shape differs for " + params[i]->name);
    }
  }
}

std::int64_t Trainer::steps_per_epoch() const {
  const auto n = static_cast<std::int64_t>(train_.size());
  const auto b = static_cast<std::int64_t>(config_.train.batch_size);
  return std::max<std::int64_t>(1, (n + b - 1) / b);
}

int Trainer::current_epoch() const { return static_cast<int>(step_ / steps_per_epoch()); }

bool Trainer::finished() const { return current_epoch() >= config_.train.epochs; }

double Trainer::learning_rate(int epoch) const {
  const int drops = epoch / config_.train.lr_step_epochs;
  return config_.train.effective_lr() * std::pow(config_.train.gamma, drops);
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(config_.train.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

BatchResult Trainer::step() {
  if (finished()) throw std::logic_error("Trainer::step: training already finished");
  const int epoch = current_epoch();
  const std::int64_t within = step_ % steps_per_epoch();
  const auto order = epoch_order(epoch);
  const auto begin = static_cast<std::size_t>(within) * static_cast<std::size_t>(config_.train.batch_size);
  const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config_.train.batch_size));

  std::vector<const SyntheticScene*> batch;
  for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_[order[i]]);

  StepOptions options;
  options.weights = config_.train.weights;
  options.iou_positive = config_.train.iou_positive;
  options.vl_branch = config_.train.vl_branch;

  model_.zero_grad();
  BatchResult result;
  try {
    result = evaluate_batch(model_, batch, config_.scene, options);
  } catch (const NumericError& e) {
    spdlog::error("step {} (epoch {}): {}", step_, epoch + 1, e.what());
    throw;
  }
  apply_update(learning_rate(epoch));

  acc_.steps += 1;
  acc_.l_det += result.loss.l_det;
  acc_.l_cont += result.loss.l_cont;
  acc_.l_aux += result.loss.l_aux;
  acc_.l_total += result.loss.l_total;
  acc_.det_objectness += result.det_objectness;
  acc_.det_class += result.det_class;
  acc_.det_box += result.det_box;
  acc_.n_positives += result.loss.n_positives;
  acc_.clip_correct += result.clip_correct;
  acc_.clip_total += result.clip_total;

  ++step_;
  if (within == steps_per_epoch() - 1) close_epoch(epoch);
  return result;
}

void Trainer::run() {
  while (!finished()) step();
}

void Trainer::apply_update(double lr) {
  const auto params = model_.parameters();
  const auto& t = config_.train;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamTensor& p = *params[i];
    double group_lr = lr;
    if (&p == &model_.text.embeddings) {
      group_lr *= config_.vlhead.text_lr_scale;
    } else if (&p == &model_.temperatures.tau) {
      group_lr *= config_.vlhead.tau_lr_scale;
    }
    const bool vl_tensor = i >= params.size() - model_.vl_parameters().size();
    if (vl_tensor && !t.vl_branch) continue;

    Matrix& v = velocity_[i];
    if (p.decay && t.weight_decay > 0.0) {
      v = t.momentum * v + (p.grad + t.weight_decay * p.value);
    } else {
      v = t.momentum * v + p.grad;
    }
    p.value -= group_lr * v;
  }
  if (const int moved = model_.temperatures.clamp(); moved > 0) {
    spdlog::debug("step {}: clamped {} temperatures to {}", step_, moved,
                  model_.temperatures.tau_min);
  }
}

void Trainer::close_epoch(int epoch) {
  EpochRecord rec;
  rec.epoch = epoch + 1;
  rec.lr = learning_rate(epoch);
  const double steps = static_cast<double>(std::max<std::size_t>(acc_.steps, 1));
  rec.l_det = acc_.l_det / steps;
  rec.l_cont = acc_.l_cont / steps;
  rec.l_aux = acc_.l_aux / steps;
  rec.l_total = acc_.l_total / steps;
  rec.det_objectness = acc_.det_objectness / steps;
  rec.det_class = acc_.det_class / steps;
  rec.det_box = acc_.det_box / steps;
  rec.n_positives = acc_.n_positives;
  if (acc_.clip_total > 0) {
    rec.clip_top1_train =
        static_cast<double>(acc_.clip_correct) / static_cast<double>(acc_.clip_total);
  }
  const bool last = rec.epoch == config_.train.epochs;
  if (!val_.empty() && (rec.epoch % config_.train.eval_every == 0 || last)) {
    const ValidationResult v = validate_model(model_, val_, config_, config_.train.alpha);
    rec.val_map50 = v.map50;
    rec.val_map5095 = v.map5095;
    rec.clip_top1_val = v.clip_top1;
  }
  spdlog::info("epoch {:>3}  lr {:.2e}  l_total {:.4f}  l_det {:.4f}  l_cont {:.4f}  l_aux {:.4f}"
               "  map50 {}",
               rec.epoch, rec.lr, rec.l_total, rec.l_det, rec.l_cont, rec.l_aux,
               rec.val_map50 ? std::to_string(*rec.val_map50) : std::string("-"));
  history_.epochs.push_back(rec);
  acc_ = EpochAccumulator{};
}

Checkpoint Trainer::checkpoint() const {
  return {config_, model_, velocity_, step_, acc_, history_};
}

bool GradCheckSummary::passed() const {
  return std::all_of(groups.begin(), groups.end(),
                     [&](const GradCheckGroup& g) { return g.max_rel_error < threshold; });
}

GradCheckSummary gradcheck_all(std::uint64_t seed, const GradCheckSetup& setup,
                               const RunConfig& base_config) {
  RunConfig config = base_config;
  config.train.seed = seed;
  config.train.weights = setup.weights;
  config.validate();
  Model model = Model::init(config);

  std::vector<SyntheticScene> scenes;
  for (int attempt = 0; scenes.size() < setup.scenes; ++attempt) {
    if (attempt >= kGradcheckSceneAttempts) {
      throw GenerationError("gradcheck_all: could not draw a batch with the requested positives");
    }
    SyntheticScene scene =
        generate_scene(config.scene, mix_seed(seed, kGradcheckSceneStream + static_cast<std::uint64_t>(attempt)));
    const bool has_pos = !vl_positives(scene, config.scene, config.train.iou_positive).empty();
    using P = GradCheckSetup::Positives;
    if ((setup.positives == P::kRequire && !has_pos) ||
        (setup.positives == P::kForbid && has_pos)) {
      continue;
    }
    scenes.push_back(std::move(scene));
  }
  std::vector<const SyntheticScene*> batch;
  for (const auto& s : scenes) batch.push_back(&s);

  StepOptions options;
  options.weights = setup.weights;
  options.iou_positive = config.train.iou_positive;
  options.vl_branch = true;

  model.zero_grad();
  const BatchResult analytic = evaluate_batch(model, batch, config.scene, options);
  // Probes of a tensor only need the graph downstream of it, so upstream
  // stages are evaluated once at the unperturbed values and held fixed.
  using Oracle = long double;
  FrozenStage<Oracle> after_backbone;
  for (const SyntheticScene* scene : batch) {
    const MatrixX<Oracle> raw = scene->raw.template cast<Oracle>();
    after_backbone.features.push_back(detector_forward(raw, model.detector).features);
  }
  FrozenStage<Oracle> after_heads = after_backbone;
  StepOptions det_only = options;
  det_only.vl_branch = false;
  after_heads.l_det = batch_total_loss(model, batch, config.scene, det_only, &after_backbone);

  const std::vector<std::pair<std::vector<ParamTensor*>, const FrozenStage<Oracle>*>> stages = {
      {model.detector.backbone_tensors(), nullptr},
      {model.detector.head_tensors(), &after_backbone},
      {model.vl_parameters(), &after_heads},
  };

  GradCheckSummary summary;
  summary.n_positives = analytic.loss.n_positives;
  GradCheckOptions fd;
  fd.step = setup.step;
  fd.max_coords_per_tensor = setup.coords_per_tensor;
  fd.seed = mix_seed(seed, 0xFD);
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& [tensors, frozen] = stages[k];
    auto loss = [&, frozen]() -> long double {
      return batch_total_loss<Oracle>(model, batch, config.scene, options, frozen);
    };
    fd.seed = mix_seed(seed, 0xFD + k);
    GradCheckReport part = finite_diff_check(loss, tensors, fd);
    for (auto& t : part.tensors) summary.detail.tensors.push_back(std::move(t));
  }

  auto groups = model.groups();
  for (const std::string& name : kParameterGroups) {
    GradCheckGroup g{name, 0.0, 0};
    for (const ParamTensor* p : groups.at(name)) {
      const TensorGradCheck* t = summary.detail.find(p->name);
      g.max_rel_error = std::max(g.max_rel_error, t->max_rel_error);
      g.coords_checked += t->coords_checked;
    }
    summary.groups.push_back(g);
  }
  return summary;
}

}  // namespace vlj
