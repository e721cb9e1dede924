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

// Dense differentiable primitives. Every forward op has a matching *_backward
// that maps an upstream gradient to gradients of the op's inputs.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vljoint/errors.hpp"

namespace vlj {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;
using Index = Eigen::Index;

/// Norms at or below this are rejected by l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, std::string_view what) {
  if (!x.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

/// splitmix64 finalizer over (seed, stream); used to derive independent
/// deterministic RNG streams from one user seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// affine: out = x * W + b (b broadcast over rows)

template <typename Scalar>
struct AffineGrads {
  MatrixX<Scalar> dx;
  MatrixX<Scalar> dw;
  RowVectorX<Scalar> db;
};

template <typename DX, typename DW, typename DB>
MatrixX<typename DX::Scalar> affine(const Eigen::MatrixBase<DX>& x,
                                    const Eigen::MatrixBase<DW>& w,
                                    const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DX::Scalar;
  if (x.cols() != w.rows() || b.size() != w.cols()) {
    throw DimensionError("affine: x is " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + ", W is " +
                         std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         ", b has " + std::to_string(b.size()));
  }
  require_finite(x, "affine input");
  MatrixX<Scalar> out = x * w;
  const RowVectorX<Scalar> bias = b.reshaped().transpose();
  out.rowwise() += bias;
  return out;
}

/// Given upstream G: dx = G Wᵀ, dW = xᵀ G, db = column sums of G.
template <typename DX, typename DW, typename DG>
AffineGrads<typename DX::Scalar> affine_backward(const Eigen::MatrixBase<DX>& x,
                                                 const Eigen::MatrixBase<DW>& w,
                                                 const Eigen::MatrixBase<DG>& g) {
  if (g.rows() != x.rows() || g.cols() != w.cols()) {
    throw DimensionError("affine_backward: upstream gradient shape mismatch");
  }
  return {g * w.transpose(), x.transpose() * g, g.colwise().sum()};
}

// ---------------------------------------------------------------------------
// relu; the subgradient at exactly 0 is 0.

template <typename Derived>
MatrixX<typename Derived::Scalar> relu(const Eigen::MatrixBase<Derived>& x) {
  require_finite(x, "relu input");
  return x.cwiseMax(typename Derived::Scalar(0));
}

template <typename DX, typename DG>
MatrixX<typename DX::Scalar> relu_backward(const Eigen::MatrixBase<DX>& pre,
                                           const Eigen::MatrixBase<DG>& g) {
  using Scalar = typename DX::Scalar;
  return (pre.array() > Scalar(0)).select(g, Scalar(0));
}

// ---------------------------------------------------------------------------
// L2 normalization

template <typename Derived>
VectorX<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  require_finite(v, "l2_normalize input");
  const auto norm = v.norm();
  if (!(norm > kNormEpsilon)) {
    throw DegenerateVectorError("l2_normalize: norm " + std::to_string(norm) +
                                " is at or below epsilon");
  }
  return v.reshaped() / norm;
}

/// Applies the Jacobian (I - u uᵀ)/‖v‖ to g, where u = v/‖v‖.
template <typename DV, typename DG>
VectorX<typename DV::Scalar> l2_normalize_backward(const Eigen::MatrixBase<DV>& v,
                                                   const Eigen::MatrixBase<DG>& g) {
  const auto norm = v.norm();
  const VectorX<typename DV::Scalar> u = v.reshaped() / norm;
  const VectorX<typename DV::Scalar> gv = g.reshaped();
  return (gv - u * u.dot(gv)) / norm;
}

/// Row-wise l2_normalize; `norms` receives each row's pre-normalization norm.
template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x,
                                                 VectorX<typename Derived::Scalar>* norms = nullptr) {
  using Scalar = typename Derived::Scalar;
  require_finite(x, "normalize_rows input");
  MatrixX<Scalar> out(x.rows(), x.cols());
  VectorX<Scalar> n(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    n(i) = x.row(i).norm();
    if (!(n(i) > kNormEpsilon)) {
      throw DegenerateVectorError("normalize_rows: row " + std::to_string(i) +
                                  " has norm at or below epsilon");
    }
    out.row(i) = x.row(i) / n(i);
  }
  if (norms != nullptr) *norms = std::move(n);
  return out;
}

template <typename DU, typename DN, typename DG>
MatrixX<typename DU::Scalar> normalize_rows_backward(const Eigen::MatrixBase<DU>& unit,
                                                     const Eigen::MatrixBase<DN>& norms,
                                                     const Eigen::MatrixBase<DG>& g) {
  using Scalar = typename DU::Scalar;
  const VectorX<Scalar> proj = (unit.array() * g.array()).rowwise().sum();
  MatrixX<Scalar> out = g - (unit.array().colwise() * proj.array()).matrix();
  out.array().colwise() /= norms.reshaped().array();
  return out;
}

// ---------------------------------------------------------------------------
// Softmax over each row, max-subtracted.

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = s;
  require_finite(out, "softmax_rows input");
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = s;
  require_finite(out, "log_softmax_rows input");
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  return out;
}

/// dS = P ⊙ (G − rowsum(G ⊙ P)).
template <typename DP, typename DG>
MatrixX<typename DP::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DP>& p,
                                                   const Eigen::MatrixBase<DG>& g) {
  using Scalar = typename DP::Scalar;
  const VectorX<Scalar> inner = (p.array() * g.array()).rowwise().sum();
  return (p.array() * (g.array().colwise() - inner.array())).matrix();
}

// ---------------------------------------------------------------------------
// Parameters and finite-difference verification

/// A learnable array and its accumulated gradient (always the same shape).
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
  /// Weight decay applies only to tensors flagged here.
  bool decay = false;

  ParamTensor() = default;
  ParamTensor(std::string n, Matrix v, bool decay_weights = false)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())), decay(decay_weights) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

struct GradCheckOptions {
  double step = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct TensorGradCheck {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  Index worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradCheck> tensors;

  double max_rel_error() const;
  const TensorGradCheck* find(std::string_view name) const;
};

/// |a − n| / max(|a|, |n|, 1e-12).
double relative_error(double analytic, double numeric);

/// Compares each tensor's current `grad` with central differences of `loss`.
/// The caller must have populated the gradients at the current values; `loss`
/// is re-evaluated at perturbed values, which are restored afterwards. It may
/// return extended precision so the difference quotient is not limited by
/// float64 rounding of the loss itself.
GradCheckReport finite_diff_check(const std::function<long double()>& loss,
                                  std::span<ParamTensor* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace vlj
