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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sscq/data.hpp"
#include "sscq/encoder.hpp"
#include "sscq/error.hpp"
#include "sscq/index.hpp"
#include "sscq/text.hpp"

namespace sscq {

/// True match: the two items share at least one label.
inline bool is_match(const LabelSet& query, const LabelSet& item) {
  if (query.empty()) throw EvaluationError("is_match: query has no labels");
  auto a = query.begin();
  auto b = item.begin();
  while (a != query.end() && b != item.end()) {
    if (*a == *b) return true;
    if (*a < *b) {
      ++a;
    } else {
      ++b;
    }
  }
  return false;
}

/// Relevance flags in rank order, one byte per item (0 or 1).
using Relevance = std::vector<std::uint8_t>;

/// AP over the first R ranks, normalised by the number of relevant items
/// found there; 0 when there are none.
inline double average_precision(std::span<const std::uint8_t> relevant, std::size_t cutoff) {
  const std::size_t n = std::min(cutoff, relevant.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!relevant[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

inline std::vector<double> recall_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 20; ++i) g.push_back(i / 20.0);
  return g;
}

struct EvalReport {
  std::size_t cutoff = 0;
  double map = 0.0;
  std::vector<double> per_query_ap;
  std::vector<std::pair<std::size_t, double>> precision_at_k;
  std::vector<std::pair<double, double>> pr_curve;  // (recall, precision)
};

/// Metrics from full per-query relevance rankings (every database item, in
/// rank order).
inline EvalReport evaluate_relevance(const std::vector<Relevance>& rankings, std::size_t cutoff,
                                     std::span<const std::size_t> k_list) {
  if (rankings.empty()) throw ConfigError("evaluate: empty query set");
  if (cutoff == 0) throw ConfigError("evaluate: cutoff must be >= 1");
  EvalReport report;
  report.cutoff = cutoff;
  const double nq = static_cast<double>(rankings.size());

  double sum = 0.0;
  for (const auto& rel : rankings) {
    report.per_query_ap.push_back(average_precision(rel, cutoff));
    sum += report.per_query_ap.back();
  }
  report.map = sum / nq;

  for (std::size_t k : k_list) {
    if (k == 0) throw ConfigError("evaluate: k must be >= 1");
    double total = 0.0;
    for (const auto& rel : rankings) {
      const std::size_t n = std::min(k, rel.size());
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i) hits += rel[i] != 0;
      total += n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
    }
    report.precision_at_k.emplace_back(k, total / nq);
  }

  // Per query: precision at the deepest rank whose recall does not exceed
  // the grid point (rank 1 if even that overshoots). Queries without any
  // relevant item have no recall axis and are left out of the average.
  const auto grid = recall_grid();
  std::vector<double> acc(grid.size(), 0.0);
  std::size_t counted = 0;
  for (const auto& rel : rankings) {
    const std::size_t total_rel = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), std::uint8_t{1}));
    if (total_rel == 0) continue;
    ++counted;
    std::vector<double> precision(rel.size()), recall(rel.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
      hits += rel[i] != 0;
      precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
      recall[i] = static_cast<double>(hits) / static_cast<double>(total_rel);
    }
    std::size_t r = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      while (r + 1 < rel.size() && recall[r + 1] <= grid[g] + 1e-12) ++r;
      acc[g] += precision[r];
    }
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    report.pr_curve.emplace_back(grid[g], counted == 0 ? 0.0 : acc[g] / static_cast<double>(counted));
  }
  return report;
}

/// Ranks the whole index for every query row and scores it with the
/// shared-label rule against `data` labels (index ids are dataset rows).
inline EvalReport evaluate(const PQIndex& index, const EncoderParams& encoder, const Dataset& data,
                           std::span<const std::size_t> query_rows, std::size_t cutoff,
                           std::span<const std::size_t> k_list, std::size_t threads = 1) {
  if (query_rows.empty()) throw ConfigError("evaluate: empty query set");
  for (auto id : index.ids) {
    if (id >= data.size()) throw EvaluationError("evaluate: index id " + std::to_string(id) + " not in dataset");
  }
  const auto results = search_batch(index, encode(encoder, data.gather(query_rows)), index.size(), threads);
  std::vector<Relevance> rankings(results.size());
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& qlabels = data.labels[query_rows[q]];
    if (qlabels.empty()) {
      throw EvaluationError("evaluate: query row " + std::to_string(query_rows[q]) + " has no labels");
    }
    rankings[q].reserve(results[q].hits.size());
    for (const auto& h : results[q].hits) rankings[q].push_back(is_match(qlabels, data.labels[h.item_id]));
  }
  return evaluate_relevance(rankings, cutoff, k_list);
}

/// Writes map.csv, p_at_k.csv, pr_curve.csv and summary.txt; returns paths.
inline std::vector<std::string> write_report(const EvalReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir + ": " + ec.message());
  const std::filesystem::path base(dir);
  std::vector<std::string> written;
  const auto open = [&](const char* name) {
    written.push_back((base / name).string());
    std::ofstream out(written.back(), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + written.back());
    return out;
  };
  {
    auto out = open("map.csv");
    out << "cutoff,queries,map\n"
        << report.cutoff << ',' << report.per_query_ap.size() << ',' << format_double(report.map) << '\n';
  }
  {
    auto out = open("p_at_k.csv");
    out << "k,precision\n";
    for (const auto& [k, p] : report.precision_at_k) out << k << ',' << format_double(p) << '\n';
  }
  {
    auto out = open("pr_curve.csv");
    out << "recall,precision\n";
    for (const auto& [r, p] : report.pr_curve) out << format_double(r) << ',' << format_double(p) << '\n';
  }
  {
    auto out = open("summary.txt");
    out << "queries: " << report.per_query_ap.size() << "\n"
        << "mAP@" << report.cutoff << ": " << format_double(report.map) << "\n";
    for (const auto& [k, p] : report.precision_at_k) out << "P@" << k << ": " << format_double(p) << "\n";
  }
  return written;
}

}  // namespace sscq
