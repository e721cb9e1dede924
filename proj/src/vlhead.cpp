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

#include "vljoint/vlhead.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace vlj {

namespace {

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

double effective_tau(const TemperatureVector& temps, Index c) {
  return std::max(temps.tau.value(0, c), temps.tau_min);
}

}  // namespace

ProjectionHeadParams ProjectionHeadParams::init(Index input_dim, Index hidden_dim,
                                                Index embed_dim, std::mt19937_64& rng) {
  ProjectionHeadParams p;
  p.w1 = ParamTensor("projection.w1",
                     normal_matrix(input_dim, hidden_dim, std::sqrt(2.0 / input_dim), rng), true);
  p.b1 = ParamTensor("projection.b1", Matrix::Zero(1, hidden_dim));
  p.w2 = ParamTensor("projection.w2",
                     normal_matrix(hidden_dim, embed_dim, std::sqrt(2.0 / hidden_dim), rng), true);
  p.b2 = ParamTensor("projection.b2", Matrix::Zero(1, embed_dim));
  return p;
}

TemperatureVector TemperatureVector::constant(Index num_classes, double value,
                                              double tau_min) {
  if (!(value >= tau_min) || !(tau_min > 0.0)) {
    throw ConfigError("temperature init must be >= tau_min > 0");
  }
  TemperatureVector t;
  t.tau = ParamTensor("temperatures", Matrix::Constant(1, num_classes, value));
  t.tau_min = tau_min;
  return t;
}

int TemperatureVector::clamp() {
  int moved = 0;
  for (Index c = 0; c < tau.value.cols(); ++c) {
    if (tau.value(0, c) < tau_min) {
      tau.value(0, c) = tau_min;
      ++moved;
    }
  }
  return moved;
}

TextEmbeddingTable init_text_embeddings(Index num_classes, Index dim,
                                        const TextEmbeddingSource& source,
                                        std::vector<std::string> class_names) {
  if (num_classes < 2) throw ConfigError("init_text_embeddings: need at least 2 classes");
  if (dim < 1) throw ConfigError("init_text_embeddings: dim must be positive");

  Matrix table(num_classes, dim);
  if (const auto* random = std::get_if<SeededRandomInit>(&source)) {
    std::mt19937_64 rng(random->seed);
    table = normal_matrix(num_classes, dim, 1.0, rng);
  } else {
    const auto& path = std::get<std::filesystem::path>(source);
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open text-embedding file " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("text-embedding file: " + std::string(e.what()));
    }
    if (!doc.is_object() || !doc.contains("dim") || !doc.contains("classes") ||
        !doc["classes"].is_array()) {
      throw FormatError("text-embedding file must contain {dim, classes}");
    }
    if (!doc["dim"].is_number_integer() || doc["dim"].get<Index>() != dim) {
      throw FormatError("text-embedding file: dim does not match " + std::to_string(dim));
    }
    const auto& classes = doc["classes"];
    if (static_cast<Index>(classes.size()) != num_classes) {
      throw FormatError("text-embedding file: expected " + std::to_string(num_classes) +
                        " classes, found " + std::to_string(classes.size()));
    }
    class_names.clear();
    for (Index c = 0; c < num_classes; ++c) {
      const auto& entry = classes[static_cast<std::size_t>(c)];
      if (!entry.is_object() || !entry.contains("vector") || !entry["vector"].is_array()) {
        throw FormatError("text-embedding file: class entry without vector");
      }
      const auto& vec = entry["vector"];
      if (static_cast<Index>(vec.size()) != dim) {
        throw FormatError("text-embedding file: vector length differs from dim");
      }
      for (Index k = 0; k < dim; ++k) {
        const auto& x = vec[static_cast<std::size_t>(k)];
        if (!x.is_number()) throw FormatError("text-embedding file: non-numeric value");
        table(c, k) = x.get<double>();
      }
      class_names.push_back(entry.value("name", "class_" + std::to_string(c)));
    }
    if (!table.allFinite()) throw FormatError("text-embedding file: non-finite value");
  }

  try {
    table = normalize_rows(table);
  } catch (const DegenerateVectorError&) {
    throw FormatError("text embeddings contain a zero vector");
  }
  if (class_names.empty()) {
    for (Index c = 0; c < num_classes; ++c) class_names.push_back("class_" + std::to_string(c));
  }
  if (static_cast<Index>(class_names.size()) != num_classes) {
    throw ConfigError("init_text_embeddings: class name count differs from class count");
  }
  return {ParamTensor("text_embeddings", std::move(table)), std::move(class_names)};
}

Matrix visual_embed_backward(const ProjectionCache& cache, const Matrix& d_embed,
                             ProjectionHeadParams& params) {
  const Matrix d_pre = normalize_rows_backward(cache.embed, cache.norms, d_embed);
  auto g2 = affine_backward(cache.hidden, params.w2.value, d_pre);
  params.w2.grad += g2.dw;
  params.b2.grad += g2.db;
  const Matrix d_hidden_pre = relu_backward(cache.hidden_pre, g2.dx);
  auto g1 = affine_backward(cache.input, params.w1.value, d_hidden_pre);
  params.w1.grad += g1.dw;
  params.b1.grad += g1.db;
  return std::move(g1.dx);
}

namespace detail {
void warn_clamped_temperature(Index c, double tau, double tau_min) {
  spdlog::warn("similarity: tau[{}] = {} below minimum {}; clamped", c, tau, tau_min);
}
}  // namespace detail

SimilarityGrads similarity_backward(const Matrix& vhat, const TextEmbeddingTable& table,
                                    const TemperatureVector& temps, const SimilarityMatrix& sim,
                                    const Matrix& d_sim) {
  const Index n_classes = table.num_classes();
  Matrix scaled = d_sim;  // d_sim(i, c) / tau_c
  RowVector d_tau = RowVector::Zero(n_classes);
  for (Index c = 0; c < n_classes; ++c) {
    const double tau = effective_tau(temps, c);
    scaled.col(c) /= tau;
    // d s / d tau = -s / tau; no gradient flows through the clamp.
    if (temps.tau.value(0, c) >= temps.tau_min) {
      d_tau(c) = -(d_sim.col(c).array() * sim.s.col(c).array()).sum() / tau;
    }
  }
  return {scaled * table.embeddings.value, scaled.transpose() * vhat, std::move(d_tau)};
}

Matrix fuse_scores(const Matrix& p_ce, const Matrix& p_clip, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("fuse_scores: alpha must lie in [0, 1]");
  }
  if (p_ce.rows() != p_clip.rows() || p_ce.cols() != p_clip.cols()) {
    throw DimensionError("fuse_scores: branch shapes differ");
  }
  for (const Matrix* p : {&p_ce, &p_clip}) {
    if (!p->allFinite() || (p->array() < 0.0).any() ||
        ((p->rowwise().sum().array() - 1.0).abs() > 1e-6).any()) {
      throw NumericError("fuse_scores: inputs must be row-stochastic");
    }
  }
  return alpha * p_ce + (1.0 - alpha) * p_clip;
}

}  // namespace vlj
