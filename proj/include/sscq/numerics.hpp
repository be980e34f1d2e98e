/*
 * Copyright 2026 The sscq Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sscq/error.hpp"

namespace sscq {

/// Dense real matrix, row-major. Every trainable tensor in the library is
/// one of these: embeddings, quantized representations, codewords, layer
/// weights and the similarity matrices built inside the losses.
using RealMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealVector = Eigen::VectorXd;

inline bool all_finite(const RealMatrix& m) { return m.allFinite(); }

inline void require_finite(const RealMatrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  return a * b;
}

/// Gradients of sum(G .* (a*b)) with respect to a and b.
struct MatmulGrads {
  RealMatrix grad_a;
  RealMatrix grad_b;
};

inline MatmulGrads matmul_backward(const RealMatrix& a, const RealMatrix& b,
                                   const RealMatrix& grad_out) {
  if (grad_out.rows() != a.rows() || grad_out.cols() != b.cols()) {
    throw DimensionError("matmul_backward: upstream gradient shape mismatch");
  }
  return {grad_out * b.transpose(), a.transpose() * grad_out};
}

inline double cosine_similarity(std::span<const double> u,
                                std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_similarity: length mismatch");
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu <= 0.0 || vv <= 0.0) {
    throw DegenerateInputError("cosine_similarity: zero-norm input");
  }
  const double s = dot / (std::sqrt(uu) * std::sqrt(vv));
  return std::clamp(s, -1.0, 1.0);
}

inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

/// softmax(scores / temperature), stabilised by subtracting the maximum.
inline std::vector<double> softmax(std::span<const double> scores,
                                   double temperature = 1.0) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax: temperature must be positive");
  }
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double mx = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - mx) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

/// Backward of p = softmax(s): returns dL/ds given p and dL/dp.
inline std::vector<double> softmax_backward(std::span<const double> p,
                                            std::span<const double> grad_p) {
  double inner = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * grad_p[i];
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] * (grad_p[i] - inner);
  }
  return out;
}

/// Rows scaled to unit L2 norm, with the norms kept for the backward pass.
struct UnitRows {
  RealMatrix unit;
  RealVector norms;
};

inline UnitRows normalize_rows(const RealMatrix& a) {
  UnitRows out{a, a.rowwise().norm()};
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!(out.norms[i] > 0.0)) {
      throw DegenerateInputError("zero-norm row " + std::to_string(i));
    }
    out.unit.row(i) /= out.norms[i];
  }
  return out;
}

inline RealMatrix normalize_rows_backward(const UnitRows& rows,
                                          const RealMatrix& grad_unit) {
  RealMatrix g(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double radial = grad_unit.row(i).dot(rows.unit.row(i));
    g.row(i) = (grad_unit.row(i) - radial * rows.unit.row(i)) / rows.norms[i];
  }
  return g;
}

/// Pairwise cosine similarities of already-normalised rows.
inline RealMatrix cosine_matrix(const RealMatrix& unit) {
  return unit * unit.transpose();
}

/// Backward of S = U U^T: dL/dU = (G + G^T) U.
inline RealMatrix cosine_matrix_backward(const RealMatrix& unit,
                                         const RealMatrix& grad_sim) {
  return (grad_sim + grad_sim.transpose()) * unit;
}

struct GradCheckResult {
  bool passed = true;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient of `fn` at `point` against central finite
/// differences. `fn(x, grad)` returns the objective and fills `grad` when it
/// is non-empty.
template <typename Fn>
GradCheckResult grad_check(Fn&& fn, std::span<const double> point,
                           double step = 1e-5, double tolerance = 1e-4) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> analytic(x.size(), 0.0);
  const double f0 = fn(std::span<const double>(x), std::span<double>(analytic));
  if (!std::isfinite(f0)) throw NumericError("grad_check: non-finite value");

  GradCheckResult result;
  std::span<double> no_grad;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = fn(std::span<const double>(x), no_grad);
    x[i] = saved - step;
    const double fm = fn(std::span<const double>(x), no_grad);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm) ||
        !std::isfinite(analytic[i])) {
      throw NumericError("grad_check: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (i == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

}  // namespace sscq
