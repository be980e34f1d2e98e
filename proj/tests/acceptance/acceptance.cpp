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

// Acceptance gate: one PASS/FAIL line per criterion. Optional arguments
// restrict the run to the listed criterion numbers, e.g. `acceptance 1 3`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sscq/binary_io.hpp"
#include "sscq/eval.hpp"
#include "sscq/index.hpp"
#include "sscq/losses.hpp"
#include "sscq/quantizer.hpp"
#include "sscq/trainer.hpp"

namespace fs = std::filesystem;
using namespace sscq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

RealMatrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  RealMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

struct Outcome {
  bool pass;
  std::string detail;
};

// ---- 1: full-objective gradient check -----------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.encoder = {6, {10}, 8};
  cfg.quantizer = {2, 4, 4, 0.2};
  Model model = init_model(cfg, 101);
  for (auto& layer : model.encoder.layers) layer.bias = gaussian(1, layer.bias.cols(), 102, 0.1);
  const RealMatrix x = gaussian(8, 6, 103);
  LossConfig loss;
  loss.neighbors = 3;  // below the 6 negatives, so the neighbor term is active

  std::vector<double> point;
  for (const auto& s : parameter_slots(model)) point.insert(point.end(), s.value->data(), s.value->data() + s.value->size());
  auto fn = [&](std::span<const double> v, std::span<double> grad) {
    Model m = model;
    std::size_t off = 0;
    for (auto& s : parameter_slots(m)) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), s.value->size(), s.value->data());
      off += static_cast<std::size_t>(s.value->size());
    }
    const auto obj = evaluate_objective(m, x, cfg.quantizer.tau_sq, loss, !grad.empty());
    if (!grad.empty()) {
      off = 0;
      for (const auto& g : obj.grads) {
        std::copy_n(g.data(), g.size(), grad.begin() + static_cast<std::ptrdiff_t>(off));
        off += static_cast<std::size_t>(g.size());
      }
    }
    return obj.losses.total;
  };
  const auto r = grad_check(fn, point, 1e-5, 1e-4);
  const double t = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu parameters, max relative error %.3g (limit 1e-4), %.2f s (limit 60 s)",
                point.size(), r.max_relative_error, t);
  return {r.passed && t < 60.0, buf};
}

// ---- 2: soft quantization approaches hard assignment --------------------

Outcome quantization_limit() {
  const auto t0 = Clock::now();
  const double tau = 1e-3;
  const auto books = init_codebooks(8, 16, 16, 201);
  std::mt19937_64 rng(202);
  std::normal_distribution<double> dist(0.0, 0.25);
  RealMatrix f(100, 128);
  std::size_t kept = 0, drawn = 0;
  while (kept < 100) {
    RealMatrix row(1, 128);
    for (Eigen::Index j = 0; j < 128; ++j) row(0, j) = dist(rng);
    ++drawn;
    // Unique argmin per sub-space: nearest and runner-up separated by 20 tau.
    const RealMatrix d = subspace_sq_distances(row, books);
    bool unique = true;
    for (std::size_t m = 0; m < books.M && unique; ++m) {
      std::vector<double> v(d.row(0).data() + m * books.K, d.row(0).data() + (m + 1) * books.K);
      std::nth_element(v.begin(), v.begin() + 1, v.end());
      unique = std::max(v[0], v[1]) - std::min(v[0], v[1]) >= 20.0 * tau;
    }
    if (unique) f.row(static_cast<Eigen::Index>(kept++)) = row;
  }
  const RealMatrix soft = soft_quantize(f, books, tau).z;
  const auto codes = hard_assign(f, books);
  RealMatrix hard(f.rows(), f.cols());
  for (std::size_t i = 0; i < codes.size(); ++i) hard.row(static_cast<Eigen::Index>(i)) = reconstruct(codes.code(i), books);
  const double err = (soft - hard).cwiseAbs().maxCoeff();
  const double t = seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "max |soft - hard| %.3g (limit 1e-6) on 100 vectors (%zu drawn), %.3f s (limit 1 s)",
                err, drawn, t);
  return {err < 1e-6 && t < 1.0, buf};
}

// ---- 3: asymmetric distance identity ------------------------------------

Outcome asymmetric_identity() {
  const auto t0 = Clock::now();
  const auto books = init_codebooks(8, 16, 16, 301);
  const RealMatrix items = gaussian(500, 128, 302, 0.3);
  std::vector<std::uint32_t> ids(500);
  for (std::uint32_t i = 0; i < 500; ++i) ids[i] = i;
  const auto index = build_index_from_embeddings(items, books, ids);
  const RealMatrix queries = gaussian(20, 128, 303, 0.3);
  double worst = 0.0;
  for (Eigen::Index q = 0; q < 20; ++q) {
    const std::vector<double> qv(queries.row(q).data(), queries.row(q).data() + 128);
    const auto res = search(index, distance_table(qv, books), 500);
    for (const auto& h : res.hits) {
      const RealMatrix rec = reconstruct(index.codes.code(h.item_id), books);
      const double direct = (queries.row(q) - rec.row(0)).squaredNorm();
      worst = std::max(worst, std::abs(direct - h.distance));
    }
  }
  const double t = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "10000 pairs, max |ADC - direct| %.3g (limit 1e-9), %.3f s (limit 5 s)", worst, t);
  return {worst <= 1e-9 && t < 5.0, buf};
}

// ---- 4: loss values at trivial points -----------------------------------

Outcome loss_trivial_points() {
  const RealMatrix pair = gaussian(2, 8, 401);
  const double icz = instance_contrastive(pair, 0.5);

  const RealMatrix z = gaussian(12, 8, 402);  // N_b = 6
  const double pn = part_neighbor_loss(z, 2, 2 * 6 - 2, 0.5);

  RealMatrix f = gaussian(12, 8, 403), zq = gaussian(12, 8, 404);
  for (Eigen::Index r = 0; r < 12; r += 2) {
    f.row(r + 1) = f.row(r);
    zq.row(r + 1) = zq.row(r);
  }
  const double cc = consistent_contrastive(f, zq, Fusion::concatenate, 0.2);

  CodebookSet books{2, 16, 16, RealMatrix::Zero(32, 16)};
  for (Eigen::Index m = 0; m < 2; ++m) {
    for (Eigen::Index k = 0; k < 16; ++k) books.codewords(m * 16 + k, k) = 1.0;
  }
  const double cd = codeword_diversity(RealMatrix::Ones(4, 32), books, DiversityVariant::cosine_entropy);

  const bool ok = std::abs(icz) < 1e-12 && std::abs(pn) < 1e-12 && std::abs(cc) < 1e-12 &&
                  std::abs(cd - (-2.7726)) <= 1e-4;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "L_icz %.3g, L_pn %.3g, L_cc %.3g (all 0); L_cd %.6f (target -2.7726 +- 1e-4)",
                icz, pn, cc, cd);
  return {ok, buf};
}

// ---- 5-7: training on the pinned synthetic dataset ----------------------

struct Experiment {
  Dataset data;
  ModelConfig model;
  std::vector<std::size_t> train_rows, db, queries;

  Experiment() {
    data = generate_synthetic(SyntheticConfig{});  // 10 x 200, sep/noise 4, seed 0
    model.encoder.input_dim = data.input_dim;
    model.quantizer.M = 8;
    model.quantizer.K = 16;
    model.encoder.embedding_dim = model.quantizer.M * model.quantizer.sub_dim;
    train_rows = data.indices_of({Split::train, Split::database});
    db = data.indices_of({Split::database});
    queries = data.indices_of({Split::query});
  }

  double map_of(const Model& m) const {
    const auto index = build_index(m.encoder, m.books, data, db);
    return evaluate(index, m.encoder, data, queries, 100, {}).map;
  }

  struct Run {
    double map;
    double seconds;
  };

  Run train_and_score(const LossTerms& terms, std::uint64_t seed, const std::string& out_dir = "") const {
    const auto t0 = Clock::now();
    const UnlabeledView view(data, train_rows);
    LossConfig loss;
    loss.terms = terms;
    TrainConfig cfg;
    cfg.seed = seed;
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.manifest_text = "seed = " + std::to_string(seed) + "\nterms = " + terms.label() + "\n";
    const auto result = train(view, model, loss, cfg, default_augmentation(view, seed), opts);
    const double secs = seconds_since(t0);
    return {map_of(result.model), secs};
  }

  /// Mean AP@100 of the real relevance lists under uniform shuffles.
  double permutation_chance(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    double total = 0.0;
    for (auto q : queries) {
      Relevance rel;
      for (auto d : db) rel.push_back(is_match(data.labels[q], data.labels[d]));
      double acc = 0.0;
      for (int t = 0; t < 20; ++t) {
        std::shuffle(rel.begin(), rel.end(), rng);
        acc += average_precision(rel, 100);
      }
      total += acc / 20.0;
    }
    return total / static_cast<double>(queries.size());
  }
};

const fs::path kRunA = fs::temp_directory_path() / "sscq_acceptance_run_a";
const fs::path kRunB = fs::temp_directory_path() / "sscq_acceptance_run_b";

std::optional<Experiment::Run> g_full_seed0;

Outcome learning_signal(const Experiment& ex) {
  const double untrained = ex.map_of(init_model(ex.model, 0));
  fs::remove_all(kRunA);
  g_full_seed0 = ex.train_and_score(LossTerms{}, 0, kRunA.string());
  const double trained = g_full_seed0->map;
  const double chance = std::max(0.1, ex.permutation_chance(7));
  const bool ok = trained >= untrained + 0.25 && trained >= chance + 0.3 && g_full_seed0->seconds < 600.0;
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "mAP@100 trained %.4f, untrained %.4f (gain %.4f, need 0.25), chance %.4f (margin %.4f, need 0.3), "
                "training %.1f s (limit 600 s)",
                trained, untrained, trained - untrained, chance, trained - chance, g_full_seed0->seconds);
  return {ok, buf};
}

Outcome ablation_direction(const Experiment& ex) {
  double full = 0.0, base = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double f = (seed == 0 && g_full_seed0) ? g_full_seed0->map : ex.train_and_score(LossTerms{}, seed).map;
    const double b = ex.train_and_score(LossTerms::baseline(), seed).map;
    full += f;
    base += b;
    char buf[64];
    std::snprintf(buf, sizeof(buf), " s%llu %.3f/%.3f", static_cast<unsigned long long>(seed), f, b);
    per_seed += buf;
  }
  full /= 5.0;
  base /= 5.0;
  char buf[320];
  std::snprintf(buf, sizeof(buf), "mean mAP@100 full %.4f vs {icz} %.4f over 5 seeds; full/{icz}:%s", full, base,
                per_seed.c_str());
  return {full >= base, buf};
}

Outcome determinism(const Experiment& ex) {
  if (!fs::exists(kRunA / "metrics.csv")) {
    fs::remove_all(kRunA);
    ex.train_and_score(LossTerms{}, 0, kRunA.string());
  }
  fs::remove_all(kRunB);
  ex.train_and_score(LossTerms{}, 0, kRunB.string());
  std::string mismatched;
  for (const char* name : {"encoder.bin", "codebooks.bin", "metrics.csv", "checkpoint.manifest"}) {
    if (read_file_bytes((kRunA / name).string()) != read_file_bytes((kRunB / name).string())) {
      mismatched += std::string(" ") + name;
    }
  }
  fs::remove_all(kRunA);
  fs::remove_all(kRunB);
  return {mismatched.empty(), mismatched.empty() ? "encoder.bin, codebooks.bin, metrics.csv, checkpoint.manifest identical across two runs"
                                                 : "differs:" + mismatched};
}

// ---- 8: evaluation against exhaustive search -----------------------------

Outcome evaluation_oracle() {
  // Items are codeword concatenations and the encoder is the identity, so
  // every code reconstructs its item exactly.
  CodebookSet books = init_codebooks(4, 16, 2, 801);
  for (Eigen::Index i = 0; i < books.codewords.size(); ++i) {
    books.codewords.data()[i] = static_cast<float>(books.codewords.data()[i]);
  }
  EncoderParams identity;
  identity.layers.push_back({RealMatrix::Identity(8, 8), RealMatrix::Zero(1, 8)});

  std::mt19937_64 rng(802);
  Dataset data;
  data.input_dim = 8;
  data.label_alphabet = 6;
  for (std::size_t i = 0; i < 400; ++i) {
    for (std::size_t m = 0; m < 4; ++m) {
      const auto c = books.codeword(m, rng() % 16);
      for (Eigen::Index j = 0; j < 2; ++j) data.features.push_back(static_cast<float>(c[j]));
    }
    LabelSet labels{static_cast<std::uint32_t>(rng() % 6)};
    if (rng() % 3 == 0) {
      const auto extra = static_cast<std::uint32_t>(rng() % 6);
      if (extra != labels[0]) labels.push_back(extra);
      std::sort(labels.begin(), labels.end());
    }
    data.labels.push_back(labels);
    data.splits.push_back(i % 8 == 0 ? Split::query : Split::database);
  }
  const auto db = data.indices_of({Split::database});
  const auto queries = data.indices_of({Split::query});
  const std::size_t R = 50;

  const auto index = build_index(identity, books, data, db);
  const double reported = evaluate(index, identity, data, queries, R, {}).map;

  // Exhaustive search on the raw vectors with its own AP and label logic.
  double oracle = 0.0;
  for (auto q : queries) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (auto d : db) {
      double dist = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        const double diff = double(data.features[q * 8 + j]) - double(data.features[d * 8 + j]);
        dist += diff * diff;
      }
      ranked.emplace_back(dist, d);
    }
    std::sort(ranked.begin(), ranked.end());
    double hits = 0.0, sum = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& a = data.labels[q];
      const auto& b = data.labels[ranked[r].second];
      bool shared = false;
      for (auto la : a) shared = shared || std::find(b.begin(), b.end(), la) != b.end();
      if (shared) {
        hits += 1.0;
        sum += hits / double(r + 1);
      }
    }
    oracle += hits > 0 ? sum / hits : 0.0;
  }
  oracle /= static_cast<double>(queries.size());
  const double diff = std::abs(reported - oracle);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "evaluate mAP@%zu %.15f, exhaustive oracle %.15f, |diff| %.3g (limit 1e-12)", R,
                reported, oracle, diff);
  return {diff <= 1e-12, buf};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  std::optional<Experiment> ex;
  const auto experiment = [&]() -> const Experiment& {
    if (!ex) ex.emplace();
    return *ex;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"quantization limit", quantization_limit},
      {"asymmetric distance identity", asymmetric_identity},
      {"loss trivial points", loss_trivial_points},
      {"learning signal", [&] { return learning_signal(experiment()); }},
      {"ablation direction", [&] { return ablation_direction(experiment()); }},
      {"determinism", [&] { return determinism(experiment()); }},
      {"evaluation oracle", evaluation_oracle},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!wanted(n)) continue;
    Outcome o{false, ""};
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
