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

// vljoint: generate synthetic detection data, train the joint detector,
// evaluate, run inference and check gradients.
//
// Exit codes: 0 success, 1 validation/format/I-O error, 2 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vljoint/config.hpp"
#include "vljoint/evalmap.hpp"
#include "vljoint/serialization.hpp"
#include "vljoint/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitNumeric = 2;

vlj::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? vlj::RunConfig{} : vlj::load_run_config(path);
}

fs::path provenance_path(const fs::path& out) {
  return fs::path(out.string() + ".meta.json");
}

void write_provenance(const fs::path& out, const std::string& command, const vlj::RunConfig& config,
                      json extra = json::object()) {
  json doc = {{"command", command}, {"seed", config.train.seed}, {"config", vlj::to_json(config)}};
  doc.update(extra);
  vlj::write_json(provenance_path(out), doc);
}

std::vector<vlj::SyntheticScene> validation_scenes(const vlj::RunConfig& config, bool generate) {
  if (!config.paths.val_data.empty()) return vlj::read_dataset(config.paths.val_data);
  if (generate) {
    return vlj::generate_dataset(config.scene, config.train.seed,
                                 static_cast<std::size_t>(config.train.n_val),
                                 static_cast<std::uint64_t>(config.train.n_train));
  }
  return {};
}

int cmd_gen_data(const std::string& config_path, std::uint64_t seed, std::size_t count,
                 const fs::path& out) {
  vlj::RunConfig config = config_or_default(config_path);
  config.train.seed = seed;
  const auto scenes = vlj::generate_dataset(config.scene, seed, count);
  vlj::write_dataset(out, scenes);
  write_provenance(out, "gen-data", config, {{"count", count}});
  std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, bool generate,
              const std::string& val_data, bool baseline, std::optional<std::uint64_t> seed,
              std::optional<int> epochs, const fs::path& out_dir) {
  vlj::RunConfig config = config_or_default(config_path);
  if (seed) config.train.seed = *seed;
  if (epochs) config.train.epochs = *epochs;
  if (!val_data.empty()) config.paths.val_data = val_data;
  if (!data.empty()) config.paths.train_data = data;
  if (baseline) {
    config.train.weights = {0.0, 0.0};
    config.train.alpha = 1.0;
    config.train.vl_branch = false;
  }
  config.validate();

  std::vector<vlj::SyntheticScene> train;
  if (!config.paths.train_data.empty()) {
    train = vlj::read_dataset(config.paths.train_data);
  } else if (generate) {
    train = vlj::generate_dataset(config.scene, config.train.seed,
                                  static_cast<std::size_t>(config.train.n_train));
  } else {
    throw vlj::ConfigError("train: pass --data, set paths.train_data, or use --generate");
  }
  auto val = validation_scenes(config, generate);

  fs::create_directories(out_dir);
  vlj::Trainer trainer(config, std::move(train), std::move(val));
  int status = 0;
  try {
    trainer.run();
  } catch (const vlj::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    status = kExitNumeric;
  }
  vlj::save_checkpoint(out_dir / "checkpoint.json", trainer.checkpoint());
  vlj::write_json(out_dir / "metrics.json", vlj::metrics_document(config, trainer.history()));
  vlj::write_json(out_dir / "config.json", vlj::to_json(config));
  if (status == 0) {
    std::cout << "trained " << trainer.history().epochs.size() << " epochs; outputs in "
              << out_dir.string() << "\n";
  }
  return status;
}

json per_class_json(const std::map<int, double>& aps, const std::vector<std::string>& names) {
  json out = json::object();
  for (const auto& [cls, ap] : aps) {
    const std::string name = cls >= 0 && static_cast<std::size_t>(cls) < names.size()
                                 ? names[static_cast<std::size_t>(cls)]
                                 : "class_" + std::to_string(cls);
    out[name] = ap;
  }
  return out;
}

void check_data_shape(const vlj::RunConfig& config, const std::vector<vlj::SyntheticScene>& scenes) {
  for (const auto& s : scenes) {
    if (s.raw.rows() != config.scene.num_cells() || s.raw.cols() != config.scene.raw_dim) {
      throw vlj::FormatError("scene " + std::to_string(s.scene_id) +
                             " does not match the checkpoint's grid/raw_dim");
    }
  }
}

int cmd_eval(const std::string& checkpoint_path, const std::string& detections_path,
             const fs::path& data, double alpha, std::optional<double> obj_threshold,
             const fs::path& out) {
  const auto scenes = vlj::read_dataset(data);
  json doc;
  if (!detections_path.empty()) {
    // Score a detections file produced by `infer`.
    std::map<std::uint64_t, std::vector<vlj::Detection>> by_scene;
    std::ifstream in(detections_path);
    if (!in) throw vlj::FormatError("cannot open " + detections_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto [id, dets] = vlj::detections_from_json(json::parse(line));
      by_scene[id] = std::move(dets);
    }
    std::vector<vlj::EvalImage> images;
    for (const auto& s : scenes) images.push_back({by_scene[s.scene_id], s.gts});
    doc = {{"map50", vlj::map_at_threshold(images, 0.5)},
           {"map5095", vlj::coco_style_map(images)},
           {"per_class_ap", per_class_json(vlj::per_class_ap(images, 0.5), {})},
           {"n_images", images.size()},
           {"detections", detections_path}};
  } else {
    const vlj::Checkpoint ck = vlj::load_checkpoint(checkpoint_path);
    vlj::RunConfig config = ck.config;
    if (obj_threshold) config.eval.obj_threshold = *obj_threshold;
    check_data_shape(config, scenes);
    const vlj::ValidationResult v = vlj::validate_model(ck.model, scenes, config, alpha);
    doc = {{"map50", v.map50},
           {"map5095", v.map5095},
           {"per_class_ap", per_class_json(v.per_class_ap50, ck.model.text.class_names)},
           {"alpha", alpha},
           {"n_images", v.n_images},
           {"clip_top1", v.clip_top1 ? json(*v.clip_top1) : json(nullptr)},
           {"seed", config.train.seed},
           {"config", vlj::to_json(config)},
           {"checkpoint", checkpoint_path}};
  }
  vlj::write_json(out, doc);
  std::cout << "map50 " << doc["map50"].get<double>() << "  map5095 "
            << doc["map5095"].get<double>() << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const fs::path& data, double alpha,
              std::optional<double> obj_threshold, const fs::path& out) {
  const vlj::Checkpoint ck = vlj::load_checkpoint(checkpoint_path);
  vlj::RunConfig config = ck.config;
  if (obj_threshold) config.eval.obj_threshold = *obj_threshold;
  const auto scenes = vlj::read_dataset(data);
  check_data_shape(config, scenes);

  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + out.string());
  for (const auto& scene : scenes) {
    const auto inf = vlj::infer_scene(ck.model, scene, config.scene, alpha,
                                      config.eval.obj_threshold, config.eval.nms_iou);
    os << vlj::detections_to_json(scene.scene_id, inf.detections).dump() << '\n';
  }
  os.close();
  write_provenance(out, "infer", config,
                   {{"alpha", alpha}, {"obj_threshold", config.eval.obj_threshold},
                    {"checkpoint", checkpoint_path}});
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int n_seeds) {
  bool ok = true;
  for (int k = 0; k < n_seeds; ++k) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
    const vlj::GradCheckSummary summary = vlj::gradcheck_all(s);
    std::printf("seed %llu  (%zu vision-language positives)\n",
                static_cast<unsigned long long>(s), summary.n_positives);
    for (const auto& g : summary.groups) {
      const bool pass = g.max_rel_error < summary.threshold;
      ok = ok && pass;
      std::printf("  %-16s max_rel_error %.3e  coords %4zu  %s\n", g.name.c_str(),
                  g.max_rel_error, g.coords_checked, pass ? "PASS" : "FAIL");
    }
  }
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint detector / vision-language training at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string out;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic scenes as JSON lines");
  gen->add_option("--config", config_path, "Run config (JSON)");
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--count", count, "Number of scenes")->required();
  gen->add_option("--out", out, "Output .jsonl")->required();

  std::string data;
  std::string val_data;
  bool generate = false;
  bool baseline = false;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> epochs;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "Train and write checkpoint.json + metrics.json");
  train->add_option("--config", config_path, "Run config (JSON)");
  auto* data_opt = train->add_option("--data", data, "Training scenes (.jsonl)");
  train->add_flag("--generate", generate, "Generate training/validation scenes from the config")
      ->excludes(data_opt);
  train->add_option("--val-data", val_data, "Validation scenes (.jsonl)");
  train->add_flag("--baseline", baseline, "Detector only: zero vision-language weights, alpha 1");
  train->add_option("--seed", train_seed, "Override train.seed");
  train->add_option("--epochs", epochs, "Override train.epochs");
  train->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string checkpoint;
  std::string detections;
  double alpha = 0.7;
  std::optional<double> obj_threshold;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint (or a detections file) on scenes");
  auto* ck_opt = eval->add_option("--checkpoint", checkpoint, "checkpoint.json");
  eval->add_option("--detections", detections, "detections.jsonl from infer")->excludes(ck_opt);
  eval->add_option("--data", data, "Scenes (.jsonl)")->required();
  eval->add_option("--alpha", alpha, "Fusion weight of the detector branch")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--obj-threshold", obj_threshold, "Objectness threshold");
  eval->add_option("--out", out, "eval.json")->required();

  auto* infer = app.add_subcommand("infer", "Write post-NMS detections as JSON lines");
  infer->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  infer->add_option("--data", data, "Scenes (.jsonl)")->required();
  infer->add_option("--alpha", alpha, "Fusion weight of the detector branch")->check(CLI::Range(0.0, 1.0));
  infer->add_option("--obj-threshold", obj_threshold, "Objectness threshold");
  infer->add_option("--out", out, "detections.jsonl")->required();

  int n_seeds = 1;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  grad->add_option("--seed", seed, "First seed");
  grad->add_option("--seeds", n_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*gen) return cmd_gen_data(config_path, seed, count, out);
    if (*train) {
      return cmd_train(config_path, data, generate, val_data, baseline, train_seed, epochs,
                       out_dir);
    }
    if (*eval) {
      if (checkpoint.empty() && detections.empty()) {
        throw vlj::ConfigError("eval: pass --checkpoint or --detections");
      }
      return cmd_eval(checkpoint, detections, data, alpha, obj_threshold, out);
    }
    if (*infer) return cmd_infer(checkpoint, data, alpha, obj_threshold, out);
    if (*grad) return cmd_gradcheck(seed, n_seeds);
  } catch (const vlj::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
