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

#include "vljoint/numerics.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace vlj {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& t : tensors) worst = std::max(worst, t.max_rel_error);
  return worst;
}

const TensorGradCheck* GradCheckReport::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<Index> pick_coords(Index size, std::size_t budget, std::mt19937_64& rng) {
  std::vector<Index> coords(static_cast<std::size_t>(size));
  std::iota(coords.begin(), coords.end(), Index{0});
  if (budget == 0 || coords.size() <= budget) return coords;
  // Partial Fisher-Yates keeps the draw independent of the library's shuffle.
  for (std::size_t i = 0; i < budget; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
    std::swap(coords[i], coords[pick(rng)]);
  }
  coords.resize(budget);
  std::sort(coords.begin(), coords.end());
  return coords;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<long double()>& loss,
                                  std::span<ParamTensor* const> params,
                                  const GradCheckOptions& options) {
  if (!(options.step >= 1e-8 && options.step <= 1e-4)) {
    throw ConfigError("finite_diff_check: step must lie in [1e-8, 1e-4]");
  }
  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (ParamTensor* p : params) {
    TensorGradCheck check;
    check.name = p->name;
    const Matrix analytic = p->grad;
    for (Index k : pick_coords(p->value.size(), options.max_coords_per_tensor, rng)) {
      double& slot = p->value.data()[k];
      const double saved = slot;
      const double hi = saved + options.step;
      const double lo = saved - options.step;
      slot = hi;
      const long double up = loss();
      slot = lo;
      const long double down = loss();
      slot = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_check: non-finite loss while probing " + p->name);
      }
      // Divide by the representable span actually probed, not the nominal 2h.
      const double numeric = static_cast<double>((up - down) / static_cast<long double>(hi - lo));
      const double a = analytic.data()[k];
      const double err = relative_error(a, numeric);
      ++check.coords_checked;
      if (err > check.max_rel_error || check.worst_coord < 0) {
        check.max_rel_error = std::max(err, check.max_rel_error);
        check.worst_coord = k;
        check.worst_analytic = a;
        check.worst_numeric = numeric;
      }
    }
    p->grad = analytic;
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace vlj
