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
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "sscq/error.hpp"
#include "sscq/numerics.hpp"
#include "sscq/quantizer.hpp"

namespace sscq {

// Two-view batches hold 2*N_b rows; rows 2i and 2i+1 are the two views of one
// input, so the positive of row r is r ^ 1.
inline std::size_t positive_of(std::size_t row) { return row ^ 1u; }

enum class Fusion { concatenate, sum, cross, quantized_only };

enum class DiversityVariant {
  cosine_entropy,
  soft_quantization_entropy,
  euclidean_entropy,
  squared_probability,
};

inline std::string_view to_string(Fusion f) {
  switch (f) {
    case Fusion::concatenate: return "concatenate";
    case Fusion::sum: return "sum";
    case Fusion::cross: return "cross";
    case Fusion::quantized_only: return "quantized-only";
  }
  return "?";
}

inline std::string_view to_string(DiversityVariant v) {
  switch (v) {
    case DiversityVariant::cosine_entropy: return "cosine-entropy";
    case DiversityVariant::soft_quantization_entropy: return "soft-quantization-entropy";
    case DiversityVariant::euclidean_entropy: return "euclidean-entropy";
    case DiversityVariant::squared_probability: return "squared-probability";
  }
  return "?";
}

inline Fusion parse_fusion(std::string_view s) {
  for (Fusion f : {Fusion::concatenate, Fusion::sum, Fusion::cross,
                   Fusion::quantized_only}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown fusion variant: " + std::string(s));
}

inline DiversityVariant parse_diversity(std::string_view s) {
  for (DiversityVariant v :
       {DiversityVariant::cosine_entropy,
        DiversityVariant::soft_quantization_entropy,
        DiversityVariant::euclidean_entropy,
        DiversityVariant::squared_probability}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown diversity variant: " + std::string(s));
}

/// Which of the five objective terms are active.
struct LossTerms {
  bool icz = true;
  bool pn = true;
  bool cd = true;
  bool icf = true;
  bool cc = true;

  static LossTerms baseline() { return {true, false, false, false, false}; }

  /// "{icz,pn,cd,icf,cc}" style label.
  std::string label() const {
    std::string s = "{";
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (s.size() > 1) s += ',';
      s += name;
    };
    add(icz, "icz");
    add(pn, "pn");
    add(cd, "cd");
    add(icf, "icf");
    add(cc, "cc");
    return s + "}";
  }

  static LossTerms parse(std::string_view text) {
    LossTerms t{false, false, false, false, false};
    std::string tok;
    auto flush = [&] {
      if (tok.empty()) return;
      if (tok == "icz") t.icz = true;
      else if (tok == "pn") t.pn = true;
      else if (tok == "cd") t.cd = true;
      else if (tok == "icf") t.icf = true;
      else if (tok == "cc") t.cc = true;
      else throw ConfigError("unknown loss term: " + tok);
      tok.clear();
    };
    for (char c : text) {
      if (c == ',' || c == '+' || c == '{' || c == '}' || c == ' ') flush();
      else tok += c;
    }
    flush();
    return t;
  }

  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

struct LossConfig {
  double lambda_pn = 0.1;
  double lambda_cd = 0.2;
  double lambda_cc = 0.4;
  double tau_ic = 0.5;
  double tau_pn = 0.5;
  double tau_cc = 0.2;
  std::size_t neighbors = 20;
  Fusion fusion = Fusion::concatenate;
  DiversityVariant diversity = DiversityVariant::cosine_entropy;
  LossTerms terms;

  void validate() const {
    if (!(tau_ic > 0.0 && tau_pn > 0.0 && tau_cc > 0.0)) {
      throw ConfigError("loss temperatures must be positive");
    }
    if (lambda_pn < 0.0 || lambda_cd < 0.0 || lambda_cc < 0.0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (neighbors < 1) throw ConfigError("neighbor count must be >= 1");
  }
};

namespace detail {

inline void check_two_view_rows(const RealMatrix& reps, std::size_t min_rows,
                                const char* who) {
  const auto n = static_cast<std::size_t>(reps.rows());
  if (n % 2 != 0) {
    throw DimensionError(std::string(who) + ": two-view batch needs an even row count");
  }
  if (n < min_rows) {
    throw ConfigError(std::string(who) + ": need at least " +
                      std::to_string(min_rows) + " rows");
  }
}

// Row-wise softmax restricted to `cols`, returning probabilities aligned to
// `cols` and the log-sum-exp of the scaled scores.
inline double masked_lse(const RealMatrix& sim, Eigen::Index row,
                         const std::vector<Eigen::Index>& cols, double tau,
                         std::vector<double>& probs) {
  probs.resize(cols.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (auto c : cols) mx = std::max(mx, sim(row, c) / tau);
  double total = 0.0;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    probs[j] = std::exp(sim(row, cols[j]) / tau - mx);
    total += probs[j];
  }
  for (double& p : probs) p /= total;
  return mx + std::log(total);
}

}  // namespace detail

/// Mean over all 2N_b anchors of the contrastive log-ratio: the positive
/// against every other row (self excluded), on cosine similarities.
/// When `grad` is non-null it receives dL/d(reps).
inline double instance_contrastive(const RealMatrix& reps, double tau,
                                   RealMatrix* grad = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("instance_contrastive: tau must be > 0");
  detail::check_two_view_rows(reps, 2, "instance_contrastive");
  const Eigen::Index n = reps.rows();
  const UnitRows unit = normalize_rows(reps);
  const RealMatrix sim = cosine_matrix(unit.unit);

  RealMatrix g = RealMatrix::Zero(n, n);
  std::vector<Eigen::Index> others;
  std::vector<double> probs;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    others.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    const auto pos = static_cast<Eigen::Index>(positive_of(static_cast<std::size_t>(i)));
    const double lse = detail::masked_lse(sim, i, others, tau, probs);
    loss += lse - sim(i, pos) / tau;
    for (std::size_t t = 0; t < others.size(); ++t) {
      const double target = (others[t] == pos) ? 1.0 : 0.0;
      g(i, others[t]) = (probs[t] - target) / (tau * static_cast<double>(n));
    }
  }
  if (grad) {
    *grad = normalize_rows_backward(unit, cosine_matrix_backward(unit.unit, g));
  }
  return loss / static_cast<double>(n);
}

/// Per sub-space neighbor attraction among negatives. For each anchor and
/// sub-space, the negatives (all rows but the anchor and its positive) are
/// ranked by cosine similarity and the top `neighbors` form the numerator.
/// The ranking itself is not differentiated. `neighbors` is clamped to the
/// negative count; `clamped` reports whether that happened.
inline double part_neighbor_loss(const RealMatrix& z, std::size_t M,
                                 std::size_t neighbors, double tau,
                                 RealMatrix* grad = nullptr,
                                 bool* clamped = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("part_neighbor_loss: tau must be > 0");
  if (neighbors < 1) throw ConfigError("part_neighbor_loss: neighbors must be >= 1");
  detail::check_two_view_rows(z, 4, "part_neighbor_loss");
  if (M == 0 || static_cast<std::size_t>(z.cols()) % M != 0) {
    throw DimensionError("part_neighbor_loss: M must divide D");
  }
  const Eigen::Index n = z.rows();
  const auto negatives = static_cast<std::size_t>(n - 2);
  if (clamped) *clamped = neighbors > negatives;
  const std::size_t top_k = std::min(neighbors, negatives);
  const auto sd = z.cols() / static_cast<Eigen::Index>(M);

  if (grad) *grad = RealMatrix::Zero(n, z.cols());
  // Every negative is a neighbor: numerator equals denominator.
  if (top_k == negatives) return 0.0;

  const double scale = 1.0 / (tau * static_cast<double>(n) * static_cast<double>(M));
  double loss = 0.0;
  std::vector<Eigen::Index> neg, top;
  std::vector<double> p_all, p_top;
  for (std::size_t m = 0; m < M; ++m) {
    const Eigen::Index off = static_cast<Eigen::Index>(m) * sd;
    const UnitRows unit = normalize_rows(z.middleCols(off, sd));
    const RealMatrix sim = cosine_matrix(unit.unit);
    RealMatrix g = RealMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto pos = static_cast<Eigen::Index>(positive_of(static_cast<std::size_t>(i)));
      neg.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i && j != pos) neg.push_back(j);
      }
      top = neg;
      std::stable_sort(top.begin(), top.end(), [&](Eigen::Index a, Eigen::Index b) {
        return sim(i, a) > sim(i, b);
      });
      top.resize(top_k);
      const double lse_all = detail::masked_lse(sim, i, neg, tau, p_all);
      const double lse_top = detail::masked_lse(sim, i, top, tau, p_top);
      loss += lse_all - lse_top;
      if (!grad) continue;
      for (std::size_t t = 0; t < neg.size(); ++t) g(i, neg[t]) += p_all[t] * scale;
      for (std::size_t t = 0; t < top.size(); ++t) g(i, top[t]) -= p_top[t] * scale;
    }
    if (grad) {
      grad->middleCols(off, sd) +=
          normalize_rows_backward(unit, cosine_matrix_backward(unit.unit, g));
    }
  }
  return loss / (static_cast<double>(n) * static_cast<double>(M));
}

/// Codeword diversity regulariser: (1/M) sum_m sum_k p̂_{m,k} log p̂_{m,k},
/// where p̂ is the batch-mean per-sample codeword distribution. Minimising
/// it spreads assignments across codewords. `tau_sq` is used only by the
/// soft-quantization variant.
inline double codeword_diversity(const RealMatrix& f, const CodebookSet& books,
                                 DiversityVariant variant, double tau_sq = 0.2,
                                 RealMatrix* grad_f = nullptr,
                                 RealMatrix* grad_codewords = nullptr) {
  check_embedding_shape(f, books);
  if (f.rows() == 0) throw DimensionError("codeword_diversity: empty batch");
  if (variant == DiversityVariant::soft_quantization_entropy && !(tau_sq > 0.0)) {
    throw ConfigError("codeword_diversity: tau_sq must be > 0");
  }
  const Eigen::Index n = f.rows();
  const auto K = static_cast<Eigen::Index>(books.K);
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);
  const double Md = static_cast<double>(books.M);
  if (grad_f) *grad_f = RealMatrix::Zero(n, f.cols());
  if (grad_codewords) {
    *grad_codewords = RealMatrix::Zero(books.codewords.rows(), books.codewords.cols());
  }
  const bool want_grad = grad_f || grad_codewords;

  const bool cosine_scores = variant == DiversityVariant::cosine_entropy ||
                             variant == DiversityVariant::squared_probability;
  const double dist_scale =
      variant == DiversityVariant::soft_quantization_entropy ? 1.0 / tau_sq : 1.0;

  double loss = 0.0;
  for (std::size_t m = 0; m < books.M; ++m) {
    const Eigen::Index off = static_cast<Eigen::Index>(m) * sd;
    const RealMatrix fm = f.middleCols(off, sd);
    const RealMatrix cw = books.codewords.middleRows(static_cast<Eigen::Index>(m) * K, K);

    // Per-sample scores (n x K).
    RealMatrix scores(n, K);
    UnitRows uf, uc;
    if (cosine_scores) {
      uf = normalize_rows(fm);
      uc = normalize_rows(cw);
      scores = uf.unit * uc.unit.transpose();
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < K; ++k) {
          scores(i, k) = -dist_scale * (fm.row(i) - cw.row(k)).squaredNorm();
        }
      }
    }

    RealMatrix probs(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::vector<double> row(scores.row(i).data(), scores.row(i).data() + K);
      const auto p = softmax(row);
      for (Eigen::Index k = 0; k < K; ++k) probs(i, k) = p[static_cast<std::size_t>(k)];
    }
    RealMatrix used = probs;
    RealVector sq_norm;
    if (variant == DiversityVariant::squared_probability) {
      used = probs.cwiseProduct(probs);
      sq_norm = used.rowwise().sum();
      for (Eigen::Index i = 0; i < n; ++i) used.row(i) /= sq_norm[i];
    }

    const RealVector mean = used.colwise().mean().transpose();
    for (Eigen::Index k = 0; k < K; ++k) loss += mean[k] * std::log(mean[k]);
    if (!want_grad) continue;

    // dL/d(used_{i,k}) = (log p̂_k + 1) / (M n)
    RealMatrix g_used(n, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      g_used.col(k).setConstant((std::log(mean[k]) + 1.0) / (Md * static_cast<double>(n)));
    }
    RealMatrix g_probs = g_used;
    if (variant == DiversityVariant::squared_probability) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double inner = g_used.row(i).dot(used.row(i));
        for (Eigen::Index k = 0; k < K; ++k) {
          g_probs(i, k) = 2.0 * probs(i, k) / sq_norm[i] * (g_used(i, k) - inner);
        }
      }
    }
    RealMatrix g_scores(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double inner = g_probs.row(i).dot(probs.row(i));
      for (Eigen::Index k = 0; k < K; ++k) {
        g_scores(i, k) = probs(i, k) * (g_probs(i, k) - inner);
      }
    }

    if (cosine_scores) {
      if (grad_f) {
        grad_f->middleCols(off, sd) += normalize_rows_backward(uf, g_scores * uc.unit);
      }
      if (grad_codewords) {
        grad_codewords->middleRows(static_cast<Eigen::Index>(m) * K, K) +=
            normalize_rows_backward(uc, g_scores.transpose() * uf.unit);
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < K; ++k) {
          const double c = 2.0 * dist_scale * g_scores(i, k);
          const auto diff = (fm.row(i) - cw.row(k)).eval();
          if (grad_f) grad_f->row(i).segment(off, sd) -= c * diff;
          if (grad_codewords) {
            grad_codewords->row(static_cast<Eigen::Index>(m) * K + k) += c * diff;
          }
        }
      }
    }
  }
  return loss / Md;
}

/// Symmetric-KL consistency between an anchor's and its positive's
/// similarity distributions over the shared negatives, computed on fused
/// representations. f and z are L2-normalised before fusion.
inline double consistent_contrastive(const RealMatrix& f, const RealMatrix& z,
                                     Fusion fusion, double tau,
                                     RealMatrix* grad_f = nullptr,
                                     RealMatrix* grad_z = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("consistent_contrastive: tau must be > 0");
  if (f.rows() != z.rows() || f.cols() != z.cols()) {
    throw DimensionError("consistent_contrastive: f and z shapes differ");
  }
  if (f.rows() < 4) {
    throw ConfigError("consistent_contrastive: need at least one negative (4 rows)");
  }
  detail::check_two_view_rows(f, 4, "consistent_contrastive");
  const Eigen::Index n = f.rows();
  const Eigen::Index D = f.cols();

  const bool use_f = fusion != Fusion::quantized_only;
  UnitRows uf;
  if (use_f) uf = normalize_rows(f);
  const UnitRows uz = normalize_rows(z);

  // Anchor stream feeds Q, positive stream feeds P. They differ only for the
  // cross variant.
  RealMatrix anchor_raw, positive_raw;
  switch (fusion) {
    case Fusion::concatenate:
      anchor_raw.resize(n, 2 * D);
      anchor_raw << uf.unit, uz.unit;
      break;
    case Fusion::sum:
      anchor_raw = uf.unit + uz.unit;
      break;
    case Fusion::quantized_only:
      anchor_raw = uz.unit;
      break;
    case Fusion::cross:
      anchor_raw = uf.unit;
      positive_raw = uz.unit;
      break;
  }
  const bool split = fusion == Fusion::cross;
  const UnitRows ua = normalize_rows(anchor_raw);
  const UnitRows ub = split ? normalize_rows(positive_raw) : ua;
  const RealMatrix sim_a = cosine_matrix(ua.unit);
  const RealMatrix sim_b = split ? cosine_matrix(ub.unit) : sim_a;

  RealMatrix g_a = RealMatrix::Zero(n, n);
  RealMatrix g_b = RealMatrix::Zero(n, n);
  std::vector<Eigen::Index> neg;
  std::vector<double> q, p;
  double loss = 0.0;
  const double scale = 1.0 / (tau * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto pos = static_cast<Eigen::Index>(positive_of(static_cast<std::size_t>(i)));
    neg.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && j != pos) neg.push_back(j);
    }
    detail::masked_lse(sim_a, i, neg, tau, q);
    detail::masked_lse(sim_b, pos, neg, tau, p);
    // 0.5 * (KL(P||Q) + KL(Q||P)) = 0.5 * sum (P - Q)(log P - log Q), and the
    // log-ratio equals the score difference up to a constant that cancels.
    double term = 0.0, p_delta = 0.0, q_delta = 0.0;
    std::vector<double> delta(neg.size());
    for (std::size_t t = 0; t < neg.size(); ++t) {
      delta[t] = (sim_b(pos, neg[t]) - sim_a(i, neg[t])) / tau;
      term += (p[t] - q[t]) * delta[t];
      p_delta += p[t] * delta[t];
      q_delta += q[t] * delta[t];
    }
    loss += 0.5 * term;
    for (std::size_t t = 0; t < neg.size(); ++t) {
      const double d_b = 0.5 * ((p[t] - q[t]) + p[t] * (delta[t] - p_delta));
      const double d_a = 0.5 * (-(p[t] - q[t]) - q[t] * (delta[t] - q_delta));
      g_a(i, neg[t]) += d_a * scale;
      g_b(pos, neg[t]) += d_b * scale;
    }
  }

  if (grad_f || grad_z) {
    RealMatrix grad_anchor, grad_positive;
    if (split) {
      grad_anchor = normalize_rows_backward(ua, cosine_matrix_backward(ua.unit, g_a));
      grad_positive = normalize_rows_backward(ub, cosine_matrix_backward(ub.unit, g_b));
    } else {
      grad_anchor =
          normalize_rows_backward(ua, cosine_matrix_backward(ua.unit, g_a + g_b));
    }
    RealMatrix g_uf = RealMatrix::Zero(n, D);
    RealMatrix g_uz;
    switch (fusion) {
      case Fusion::concatenate:
        g_uf = grad_anchor.leftCols(D);
        g_uz = grad_anchor.rightCols(D);
        break;
      case Fusion::sum:
        g_uf = grad_anchor;
        g_uz = grad_anchor;
        break;
      case Fusion::quantized_only:
        g_uz = grad_anchor;
        break;
      case Fusion::cross:
        g_uf = grad_anchor;
        g_uz = grad_positive;
        break;
    }
    if (grad_f) {
      *grad_f = use_f ? normalize_rows_backward(uf, g_uf) : RealMatrix::Zero(n, D);
    }
    if (grad_z) *grad_z = normalize_rows_backward(uz, g_uz);
  }
  return loss / static_cast<double>(n);
}

/// Embeddings of a two-view batch together with their soft quantization.
struct TwoViewBatch {
  RealMatrix f;
  SoftQuantization quantized;

  const RealMatrix& z() const { return quantized.z; }
};

inline TwoViewBatch make_two_view_batch(RealMatrix f, const CodebookSet& books,
                                        double tau_sq) {
  detail::check_two_view_rows(f, 2, "two-view batch");
  auto sq = soft_quantize(f, books, tau_sq);
  return {std::move(f), std::move(sq)};
}

struct LossBundle {
  double icz = 0.0;
  double icf = 0.0;
  double pn = 0.0;
  double cd = 0.0;
  double cc = 0.0;
  double total = 0.0;
  RealMatrix grad_f;          // dL/df, 2N_b x D
  RealMatrix grad_codewords;  // dL/dcodewords, (M*K) x sub_dim
  bool neighbors_clamped = false;
};

/// The unified objective
///   L = L_icz + λ_pn L_pn + λ_cd L_cd + L_icf + λ_cc L_cc
/// with gradients w.r.t. the embeddings and the codewords. Disabled terms
/// report zero.
inline LossBundle total_loss(const TwoViewBatch& batch, const CodebookSet& books,
                             const LossConfig& config, bool with_grad = true) {
  config.validate();
  const RealMatrix& f = batch.f;
  const RealMatrix& z = batch.z();
  const Eigen::Index n = f.rows();
  LossBundle out;
  RealMatrix grad_z = RealMatrix::Zero(n, f.cols());
  out.grad_f = RealMatrix::Zero(n, f.cols());
  out.grad_codewords = RealMatrix::Zero(books.codewords.rows(), books.codewords.cols());
  RealMatrix g, g2;
  auto* gp = with_grad ? &g : nullptr;
  auto* gp2 = with_grad ? &g2 : nullptr;

  if (config.terms.icz) {
    out.icz = instance_contrastive(z, config.tau_ic, gp);
    if (with_grad) grad_z += g;
  }
  if (config.terms.icf) {
    out.icf = instance_contrastive(f, config.tau_ic, gp);
    if (with_grad) out.grad_f += g;
  }
  if (config.terms.pn) {
    out.pn = part_neighbor_loss(z, books.M, config.neighbors, config.tau_pn, gp,
                                &out.neighbors_clamped);
    if (with_grad) grad_z += config.lambda_pn * g;
  }
  if (config.terms.cd) {
    out.cd = codeword_diversity(f, books, config.diversity, batch.quantized.assign.tau,
                                gp, gp2);
    if (with_grad) {
      out.grad_f += config.lambda_cd * g;
      out.grad_codewords += config.lambda_cd * g2;
    }
  }
  if (config.terms.cc) {
    out.cc = consistent_contrastive(f, z, config.fusion, config.tau_cc, gp, gp2);
    if (with_grad) {
      out.grad_f += config.lambda_cc * g;
      grad_z += config.lambda_cc * g2;
    }
  }
  out.total = out.icz + config.lambda_pn * out.pn + config.lambda_cd * out.cd +
              out.icf + config.lambda_cc * out.cc;
  if (with_grad) {
    soft_quantize_backward(f, books, batch.quantized, grad_z, out.grad_f,
                           out.grad_codewords);
  }
  return out;
}

}  // namespace sscq
