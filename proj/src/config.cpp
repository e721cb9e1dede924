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

#include "vljoint/config.hpp"

#include <cmath>
#include <fstream>

namespace vlj {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0) || !(lr_scale > 0.0) || !std::isfinite(effective_lr())) {
    throw ConfigError("train.lr and train.lr_scale must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (lr_step_epochs < 1) throw ConfigError("train.lr_step_epochs must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must lie in (0, 1]");
  weights.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha must lie in [0, 1]");
  if (!(iou_positive > 0.0 && iou_positive < 1.0)) {
    throw ConfigError("train.iou_positive must lie in (0, 1)");
  }
  if (n_train < 0 || n_val < 0) throw ConfigError("train.n_train/n_val must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (backbone_hidden < 1 || feature_dim < 1) throw ConfigError("train: layer widths must be >= 1");
}

void VlHeadConfig::validate() const {
  if (hidden_dim < 1 || embed_dim < 1) throw ConfigError("vlhead: dims must be >= 1");
  if (!(tau_min > 0.0) || !(tau_init >= tau_min)) {
    throw ConfigError("vlhead: need tau_init >= tau_min > 0");
  }
  if (!(tau_lr_scale >= 0.0) || !(text_lr_scale >= 0.0)) {
    throw ConfigError("vlhead: lr multipliers must be >= 0");
  }
}

void EvalConfig::validate() const {
  if (!(obj_threshold >= 0.0)) throw ConfigError("eval.obj_threshold must be >= 0");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must lie in (0, 1]");
}

void RunConfig::validate() const {
  scene.validate();
  train.validate();
  vlhead.validate();
  eval.validate();
}

json to_json(const RunConfig& c) {
  const auto& s = c.scene;
  const auto& t = c.train;
  const auto& v = c.vlhead;
  return json{
      {"scene",
       {{"canvas_side", s.canvas_side},
        {"grid_rows", s.grid_rows},
        {"grid_cols", s.grid_cols},
        {"raw_dim", s.raw_dim},
        {"num_classes", s.num_classes},
        {"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"noise_sigma", s.noise_sigma},
        {"signature_overlap", s.signature_overlap},
        {"signature_seed", s.signature_seed}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"lr_scale", t.lr_scale},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"lr_step_epochs", t.lr_step_epochs},
        {"gamma", t.gamma},
        {"lambda_cont", t.weights.lambda_cont},
        {"lambda_aux", t.weights.lambda_aux},
        {"alpha", t.alpha},
        {"iou_positive", t.iou_positive},
        {"seed", t.seed},
        {"n_train", t.n_train},
        {"n_val", t.n_val},
        {"eval_every", t.eval_every},
        {"backbone_hidden", t.backbone_hidden},
        {"feature_dim", t.feature_dim},
        {"vl_branch", t.vl_branch}}},
      {"vlhead",
       {{"hidden_dim", v.hidden_dim},
        {"embed_dim", v.embed_dim},
        {"tau_init", v.tau_init},
        {"tau_min", v.tau_min},
        {"tau_lr_scale", v.tau_lr_scale},
        {"text_lr_scale", v.text_lr_scale},
        {"text_seed", v.text_seed}}},
      {"eval", {{"obj_threshold", c.eval.obj_threshold}, {"nms_iou", c.eval.nms_iou}}},
      {"paths",
       {{"train_data", c.paths.train_data},
        {"val_data", c.paths.val_data},
        {"text_embeddings", c.paths.text_embeddings}}},
  };
}

namespace {

bool same_kind(const json& def, const json& val) {
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_number_unsigned()) return val.is_number_unsigned();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number()) return val.is_number();
  return false;
}

template <typename T>
void take(const json& section, const char* key, T& out) {
  out = section.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  json merged = to_json(RunConfig{});
  for (const auto& [section, body] : doc.items()) {
    if (!merged.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!merged[section].contains(key)) {
        throw ConfigError("unknown config key '" + section + "." + key + "'");
      }
      if (!same_kind(merged[section][key], value)) {
        throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
      }
      merged[section][key] = value;
    }
  }

  RunConfig c;
  const json& s = merged["scene"];
  take(s, "canvas_side", c.scene.canvas_side);
  take(s, "grid_rows", c.scene.grid_rows);
  take(s, "grid_cols", c.scene.grid_cols);
  take(s, "raw_dim", c.scene.raw_dim);
  take(s, "num_classes", c.scene.num_classes);
  take(s, "min_objects", c.scene.min_objects);
  take(s, "max_objects", c.scene.max_objects);
  take(s, "noise_sigma", c.scene.noise_sigma);
  take(s, "signature_overlap", c.scene.signature_overlap);
  take(s, "signature_seed", c.scene.signature_seed);

  const json& t = merged["train"];
  take(t, "epochs", c.train.epochs);
  take(t, "batch_size", c.train.batch_size);
  take(t, "lr", c.train.lr);
  take(t, "lr_scale", c.train.lr_scale);
  take(t, "momentum", c.train.momentum);
  take(t, "weight_decay", c.train.weight_decay);
  take(t, "lr_step_epochs", c.train.lr_step_epochs);
  take(t, "gamma", c.train.gamma);
  take(t, "lambda_cont", c.train.weights.lambda_cont);
  take(t, "lambda_aux", c.train.weights.lambda_aux);
  take(t, "alpha", c.train.alpha);
  take(t, "iou_positive", c.train.iou_positive);
  take(t, "seed", c.train.seed);
  take(t, "n_train", c.train.n_train);
  take(t, "n_val", c.train.n_val);
  take(t, "eval_every", c.train.eval_every);
  take(t, "backbone_hidden", c.train.backbone_hidden);
  take(t, "feature_dim", c.train.feature_dim);
  take(t, "vl_branch", c.train.vl_branch);

  const json& v = merged["vlhead"];
  take(v, "hidden_dim", c.vlhead.hidden_dim);
  take(v, "embed_dim", c.vlhead.embed_dim);
  take(v, "tau_init", c.vlhead.tau_init);
  take(v, "tau_min", c.vlhead.tau_min);
  take(v, "tau_lr_scale", c.vlhead.tau_lr_scale);
  take(v, "text_lr_scale", c.vlhead.text_lr_scale);
  take(v, "text_seed", c.vlhead.text_seed);

  take(merged["eval"], "obj_threshold", c.eval.obj_threshold);
  take(merged["eval"], "nms_iou", c.eval.nms_iou);

  take(merged["paths"], "train_data", c.paths.train_data);
  take(merged["paths"], "val_data", c.paths.val_data);
  take(merged["paths"], "text_embeddings", c.paths.text_embeddings);

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

}  // namespace vlj
