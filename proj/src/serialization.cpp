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

#include "vljoint/serialization.hpp"

#include <fstream>

namespace vlj {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& doc, const char* key, const char* what) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw FormatError(std::string(what) + ": missing field '" + key + "'");
  }
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string(what) + ": field '" + key + "' has the wrong type");
  }
}

json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& doc, const char* what) {
  if (!doc.is_array() || doc.size() != 4) {
    throw FormatError(std::string(what) + ": box must be [x1, y1, x2, y2]");
  }
  Box b;
  try {
    b = {doc[0].get<double>(), doc[1].get<double>(), doc[2].get<double>(), doc[3].get<double>()};
  } catch (const json::exception&) {
    throw FormatError(std::string(what) + ": box values must be numbers");
  }
  if (!b.valid()) throw FormatError(std::string(what) + ": invalid box");
  return b;
}

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from_json(const json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<double>();
}

json accumulator_to_json(const EpochAccumulator& a) {
  return {{"steps", a.steps},
          {"l_det", a.l_det},
          {"l_cont", a.l_cont},
          {"l_aux", a.l_aux},
          {"l_total", a.l_total},
          {"det_objectness", a.det_objectness},
          {"det_class", a.det_class},
          {"det_box", a.det_box},
          {"n_positives", a.n_positives},
          {"clip_correct", a.clip_correct},
          {"clip_total", a.clip_total}};
}

EpochAccumulator accumulator_from_json(const json& doc) {
  constexpr const char* what = "checkpoint accumulator";
  EpochAccumulator a;
  a.steps = field<std::size_t>(doc, "steps", what);
  a.l_det = field<double>(doc, "l_det", what);
  a.l_cont = field<double>(doc, "l_cont", what);
  a.l_aux = field<double>(doc, "l_aux", what);
  a.l_total = field<double>(doc, "l_total", what);
  a.det_objectness = field<double>(doc, "det_objectness", what);
  a.det_class = field<double>(doc, "det_class", what);
  a.det_box = field<double>(doc, "det_box", what);
  a.n_positives = field<std::size_t>(doc, "n_positives", what);
  a.clip_correct = field<std::size_t>(doc, "clip_correct", what);
  a.clip_total = field<std::size_t>(doc, "clip_total", what);
  return a;
}

}  // namespace

json scene_to_json(const SyntheticScene& scene) {
  json raw = json::array();
  for (Index i = 0; i < scene.raw.rows(); ++i) {
    json row = json::array();
    for (Index k = 0; k < scene.raw.cols(); ++k) row.push_back(scene.raw(i, k));
    raw.push_back(std::move(row));
  }
  json gts = json::array();
  for (const GroundTruth& gt : scene.gts) {
    gts.push_back({{"box", box_to_json(gt.box)}, {"class_id", gt.class_id}});
  }
  return {{"scene_id", scene.scene_id}, {"raw", std::move(raw)}, {"gts", std::move(gts)}};
}

SyntheticScene scene_from_json(const json& doc) {
  constexpr const char* what = "scene record";
  SyntheticScene scene;
  scene.scene_id = field<std::uint64_t>(doc, "scene_id", what);
  const json& raw = doc.contains("raw") ? doc.at("raw") : json();
  if (!raw.is_array() || raw.empty() || !raw[0].is_array()) {
    throw FormatError("scene record: 'raw' must be a non-empty array of rows");
  }
  const auto rows = static_cast<Index>(raw.size());
  const auto cols = static_cast<Index>(raw[0].size());
  scene.raw.resize(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = raw[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw FormatError("scene record: ragged 'raw' rows");
    }
    for (Index k = 0; k < cols; ++k) {
      const json& x = row[static_cast<std::size_t>(k)];
      if (!x.is_number()) throw FormatError("scene record: non-numeric raw value");
      scene.raw(i, k) = x.get<double>();
    }
  }
  if (!scene.raw.allFinite()) throw FormatError("scene record: non-finite raw value");
  const json& gts = doc.contains("gts") ? doc.at("gts") : json();
  if (!gts.is_array()) throw FormatError("scene record: 'gts' must be an array");
  for (const json& g : gts) {
    scene.gts.push_back({box_from_json(g.contains("box") ? g.at("box") : json(), what),
                         field<int>(g, "class_id", what)});
  }
  return scene;
}

void write_dataset(const std::filesystem::path& path, const std::vector<SyntheticScene>& scenes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const SyntheticScene& s : scenes) out << scene_to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<SyntheticScene> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  std::vector<SyntheticScene> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scenes;
}

json matrix_to_json(const std::string& name, const Matrix& m) {
  json values = json::array();
  for (Index k = 0; k < m.size(); ++k) values.push_back(m.data()[k]);
  return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"values", std::move(values)}};
}

Matrix matrix_from_json(const json& doc, const std::string& expected_name) {
  constexpr const char* what = "array";
  const auto name = field<std::string>(doc, "name", what);
  if (name != expected_name) {
    throw FormatError("expected array '" + expected_name + "', found '" + name + "'");
  }
  const auto shape = field<std::vector<Index>>(doc, "shape", what);
  const auto values = field<std::vector<double>>(doc, "values", what);
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
      static_cast<std::size_t>(shape[0] * shape[1]) != values.size()) {
    throw FormatError("array '" + name + "': shape does not match value count");
  }
  Matrix m(shape[0], shape[1]);
  std::copy(values.begin(), values.end(), m.data());
  if (!m.allFinite()) throw FormatError("array '" + name + "': non-finite value");
  return m;
}

json history_to_json(const MetricsHistory& history) {
  json epochs = json::array();
  for (const EpochRecord& r : history.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"lr", r.lr},
                      {"l_det", r.l_det},
                      {"l_cont", r.l_cont},
                      {"l_aux", r.l_aux},
                      {"l_total", r.l_total},
                      {"det_objectness", r.det_objectness},
                      {"det_class", r.det_class},
                      {"det_box", r.det_box},
                      {"n_positives", r.n_positives},
                      {"clip_top1_train", optional_to_json(r.clip_top1_train)},
                      {"clip_top1_val", optional_to_json(r.clip_top1_val)},
                      {"val_map50", optional_to_json(r.val_map50)},
                      {"val_map5095", optional_to_json(r.val_map5095)}});
  }
  return epochs;
}

MetricsHistory history_from_json(const json& doc) {
  if (!doc.is_array()) throw FormatError("metrics history must be an array");
  constexpr const char* what = "epoch record";
  MetricsHistory h;
  for (const json& e : doc) {
    EpochRecord r;
    r.epoch = field<int>(e, "epoch", what);
    r.lr = field<double>(e, "lr", what);
    r.l_det = field<double>(e, "l_det", what);
    r.l_cont = field<double>(e, "l_cont", what);
    r.l_aux = field<double>(e, "l_aux", what);
    r.l_total = field<double>(e, "l_total", what);
    r.det_objectness = field<double>(e, "det_objectness", what);
    r.det_class = field<double>(e, "det_class", what);
    r.det_box = field<double>(e, "det_box", what);
    r.n_positives = field<std::size_t>(e, "n_positives", what);
    r.clip_top1_train = optional_from_json(e, "clip_top1_train");
    r.clip_top1_val = optional_from_json(e, "clip_top1_val");
    r.val_map50 = optional_from_json(e, "val_map50");
    r.val_map5095 = optional_from_json(e, "val_map5095");
    h.epochs.push_back(r);
  }
  return h;
}

json checkpoint_to_json(const Checkpoint& ck) {
  json params = json::array();
  json velocity = json::array();
  const auto tensors = ck.model.parameters();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    params.push_back(matrix_to_json(tensors[i]->name, tensors[i]->value));
    if (i < ck.velocity.size()) velocity.push_back(matrix_to_json(tensors[i]->name, ck.velocity[i]));
  }
  return {{"format", kCheckpointFormat},
          {"seed", ck.config.train.seed},
          {"config", to_json(ck.config)},
          {"step", ck.step},
          {"class_names", ck.model.text.class_names},
          {"accumulator", accumulator_to_json(ck.accumulator)},
          {"history", history_to_json(ck.history)},
          {"params", std::move(params)},
          {"velocity", std::move(velocity)}};
}

Checkpoint checkpoint_from_json(const json& doc) {
  constexpr const char* what = "checkpoint";
  if (field<std::string>(doc, "format", what) != kCheckpointFormat) {
    throw FormatError("checkpoint: unsupported format");
  }
  Checkpoint ck;
  try {
    ck.config = run_config_from_json(doc.at("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  // Load into a model of the configured shape but without re-reading any
  // text-embedding import file.
  RunConfig shape_config = ck.config;
  shape_config.paths.text_embeddings.clear();
  ck.model = Model::init(shape_config);
  ck.step = field<std::int64_t>(doc, "step", what);
  ck.model.text.class_names = field<std::vector<std::string>>(doc, "class_names", what);
  if (static_cast<Index>(ck.model.text.class_names.size()) != ck.model.text.num_classes()) {
    throw FormatError("checkpoint: class name count differs from class count");
  }
  ck.accumulator = accumulator_from_json(doc.at("accumulator"));
  ck.history = history_from_json(doc.at("history"));

  const json& params = doc.at("params");
  const json& velocity = doc.at("velocity");
  const auto tensors = ck.model.parameters();
  if (!params.is_array() || params.size() != tensors.size() || !velocity.is_array() ||
      velocity.size() != tensors.size()) {
    throw FormatError("checkpoint: parameter array count differs from the model");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Matrix value = matrix_from_json(params[i], tensors[i]->name);
    Matrix vel = matrix_from_json(velocity[i], tensors[i]->name);
    if (value.rows() != tensors[i]->value.rows() || value.cols() != tensors[i]->value.cols() ||
        vel.rows() != value.rows() || vel.cols() != value.cols()) {
      throw FormatError("checkpoint: shape mismatch for " + tensors[i]->name);
    }
    tensors[i]->value = std::move(value);
    tensors[i]->zero_grad();
    ck.velocity.push_back(std::move(vel));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_json(path, checkpoint_to_json(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
}

json metrics_document(const RunConfig& config, const MetricsHistory& history) {
  return {{"mode", config.is_ce_baseline() ? "ce-baseline" : "joint"},
          {"seed", config.train.seed},
          {"config", to_json(config)},
          {"epochs", history_to_json(history)}};
}

json detections_to_json(std::uint64_t scene_id, const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const Detection& d : dets) {
    arr.push_back({{"box", box_to_json(d.box)}, {"class_id", d.class_id}, {"score", d.score}});
  }
  return {{"scene_id", scene_id}, {"detections", std::move(arr)}};
}

std::pair<std::uint64_t, std::vector<Detection>> detections_from_json(const json& doc) {
  constexpr const char* what = "detections record";
  const auto id = field<std::uint64_t>(doc, "scene_id", what);
  const json& arr = doc.contains("detections") ? doc.at("detections") : json();
  if (!arr.is_array()) throw FormatError("detections record: 'detections' must be an array");
  std::vector<Detection> dets;
  for (const json& d : arr) {
    Detection det;
    det.box = box_from_json(d.contains("box") ? d.at("box") : json(), what);
    det.class_id = field<int>(d, "class_id", what);
    det.score = field<double>(d, "score", what);
    dets.push_back(std::move(det));
  }
  return {id, std::move(dets)};
}

json text_embeddings_to_json(const TextEmbeddingTable& table) {
  json classes = json::array();
  for (Index c = 0; c < table.num_classes(); ++c) {
    json vec = json::array();
    for (Index k = 0; k < table.dim(); ++k) vec.push_back(table.embeddings.value(c, k));
    classes.push_back({{"name", table.class_names[static_cast<std::size_t>(c)]},
                       {"vector", std::move(vec)}});
  }
  return {{"dim", table.dim()}, {"classes", std::move(classes)}};
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace vlj
