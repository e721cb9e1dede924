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

// Parallel vision-language branch: projection MLP into the embedding space,
// learnable per-class text embeddings and temperatures, scaled similarity,
// CLIP-branch probabilities and score fusion.

#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "vljoint/numerics.hpp"

namespace vlj {

inline constexpr Index kDefaultEmbedDim = 512;
inline constexpr Index kDefaultProjectionHidden = 256;
inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kMinTemperature = 1e-3;
inline constexpr double kDefaultFusionAlpha = 0.7;

/// Two affine layers with a ReLU between them: D_f -> hidden -> embed.
struct ProjectionHeadParams {
  ParamTensor w1;
  ParamTensor b1;
  ParamTensor w2;
  ParamTensor b2;

  Index input_dim() const { return w1.value.rows(); }
  Index embed_dim() const { return w2.value.cols(); }

  /// He-scaled normal weights, zero biases.
  static ProjectionHeadParams init(Index input_dim, Index hidden_dim, Index embed_dim,
                                   std::mt19937_64& rng);
  std::vector<ParamTensor*> tensors() { return {&w1, &b1, &w2, &b2}; }
};

struct TextEmbeddingTable {
  ParamTensor embeddings;  // C x dim
  std::vector<std::string> class_names;

  Index num_classes() const { return embeddings.value.rows(); }
  Index dim() const { return embeddings.value.cols(); }
};

struct TemperatureVector {
  ParamTensor tau;  // 1 x C
  double tau_min = kMinTemperature;

  static TemperatureVector constant(Index num_classes, double value = kDefaultTemperature,
                                    double tau_min = kMinTemperature);
  Index size() const { return tau.value.cols(); }
  /// Raises every entry below tau_min to tau_min; returns how many moved.
  int clamp();
};

struct SeededRandomInit {
  std::uint64_t seed = 0;
};

using TextEmbeddingSource = std::variant<SeededRandomInit, std::filesystem::path>;

/// Builds a C x dim table with unit rows. An import file must hold exactly C
/// vectors of `dim` finite values ({dim, classes: [{name, vector}]}).
TextEmbeddingTable init_text_embeddings(Index num_classes, Index dim,
                                        const TextEmbeddingSource& source,
                                        std::vector<std::string> class_names = {});

/// Intermediate values kept for the backward pass.
template <typename Scalar>
struct ProjectionCacheT {
  MatrixX<Scalar> input;
  MatrixX<Scalar> hidden_pre;
  MatrixX<Scalar> hidden;
  MatrixX<Scalar> embed_pre;
  VectorX<Scalar> norms;
  MatrixX<Scalar> embed;  // unit rows
};
using ProjectionCache = ProjectionCacheT<double>;

/// Rows of l2_normalize(relu(f W1 + b1) W2 + b2).
template <typename Scalar>
MatrixX<Scalar> visual_embed(const MatrixX<Scalar>& features, const ProjectionHeadParams& params,
                             ProjectionCacheT<Scalar>* cache = nullptr) {
  if (features.cols() != params.input_dim()) {
    throw DimensionError("visual_embed: feature dim " + std::to_string(features.cols()) +
                         " but projection expects " + std::to_string(params.input_dim()));
  }
  auto cast = [](const ParamTensor& p) { return p.value.template cast<Scalar>(); };
  MatrixX<Scalar> hidden_pre = affine(features, cast(params.w1), cast(params.b1));
  MatrixX<Scalar> hidden = relu(hidden_pre);
  MatrixX<Scalar> embed_pre = affine(hidden, cast(params.w2), cast(params.b2));
  VectorX<Scalar> norms;
  MatrixX<Scalar> embed = normalize_rows(embed_pre, &norms);
  if (cache != nullptr) {
    cache->input = features;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->embed_pre = std::move(embed_pre);
    cache->norms = std::move(norms);
    cache->embed = embed;
  }
  return embed;
}

/// Accumulates parameter gradients into `params` and returns d/d features.
Matrix visual_embed_backward(const ProjectionCache& cache, const Matrix& d_embed,
                             ProjectionHeadParams& params);

template <typename Scalar>
struct SimilarityMatrixT {
  MatrixX<Scalar> s;  // N x C, s(i, c) = <vhat_i, t_c> / tau_c
};
using SimilarityMatrix = SimilarityMatrixT<double>;

namespace detail {
void warn_clamped_temperature(Index c, double tau, double tau_min);
}

/// Entries of tau below tau_min are used as tau_min (with a warning).
template <typename Scalar>
SimilarityMatrixT<Scalar> similarity(const MatrixX<Scalar>& vhat, const TextEmbeddingTable& table,
                                     const TemperatureVector& temps) {
  if (vhat.cols() != table.dim() || temps.size() != table.num_classes()) {
    throw DimensionError("similarity: embedding or temperature shape mismatch");
  }
  require_finite(vhat, "similarity input");
  SimilarityMatrixT<Scalar> out{vhat * table.embeddings.value.template cast<Scalar>().transpose()};
  for (Index c = 0; c < out.s.cols(); ++c) {
    const double tau = temps.tau.value(0, c);
    if (tau < temps.tau_min) detail::warn_clamped_temperature(c, tau, temps.tau_min);
    out.s.col(c) /= static_cast<Scalar>(std::max(tau, temps.tau_min));
  }
  return out;
}

struct SimilarityGrads {
  Matrix d_vhat;
  Matrix d_embeddings;
  RowVector d_tau;
};

SimilarityGrads similarity_backward(const Matrix& vhat, const TextEmbeddingTable& table,
                                    const TemperatureVector& temps, const SimilarityMatrix& sim,
                                    const Matrix& d_sim);

/// softmax over classes for each sample.
template <typename Scalar>
MatrixX<Scalar> clip_probs(const SimilarityMatrixT<Scalar>& sim) {
  return softmax_rows(sim.s);
}

/// alpha * p_ce + (1 - alpha) * p_clip. Both inputs must be row-stochastic
/// within 1e-6; alpha outside [0, 1] is a ConfigError.
Matrix fuse_scores(const Matrix& p_ce, const Matrix& p_clip, double alpha);

}  // namespace vlj
