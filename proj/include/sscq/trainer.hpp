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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sscq/data.hpp"
#include "sscq/encoder.hpp"
#include "sscq/error.hpp"
#include "sscq/losses.hpp"
#include "sscq/numerics.hpp"
#include "sscq/quantizer.hpp"
#include "sscq/text.hpp"

namespace sscq {

struct QuantizerConfig {
  std::size_t M = 4;
  std::size_t K = 16;
  std::size_t sub_dim = 16;
  double tau_sq = 0.2;
};

struct ModelConfig {
  EncoderConfig encoder;
  QuantizerConfig quantizer;

  /// Encoder and quantizer must agree on D = M * sub_dim.
  void validate() const {
    encoder.validate();
    const auto& q = quantizer;
    if (q.M == 0 || q.sub_dim == 0) throw ConfigError("quantizer: M and sub_dim must be > 0");
    if (!std::has_single_bit(q.K)) throw ConfigError("quantizer: K must be a power of two");
    if (!(q.tau_sq > 0.0)) throw ConfigError("quantizer: tau_sq must be > 0");
    if (encoder.embedding_dim != q.M * q.sub_dim) {
      throw DimensionError("embedding_dim " + std::to_string(encoder.embedding_dim) +
                           " != M * sub_dim = " + std::to_string(q.M * q.sub_dim));
    }
  }
};

struct Model {
  EncoderParams encoder;
  CodebookSet books;

  friend bool operator==(const Model& a, const Model& b) {
    return a.encoder == b.encoder && a.books == b.books;
  }
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
}

inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return {init_encoder(cfg.encoder, derive_seed(seed, 1)),
          init_codebooks(cfg.quantizer.M, cfg.quantizer.K, cfg.quantizer.sub_dim, derive_seed(seed, 2))};
}

/// Trainable parameter slots in a fixed order: per encoder layer weight then
/// bias, then the codewords.
struct ParameterSlot {
  std::string name;
  RealMatrix* value;
};

inline std::vector<ParameterSlot> parameter_slots(Model& model) {
  std::vector<ParameterSlot> slots;
  for (std::size_t l = 0; l < model.encoder.layers.size(); ++l) {
    const std::string prefix = "encoder.layer" + std::to_string(l);
    slots.push_back({prefix + ".weight", &model.encoder.layers[l].weight});
    slots.push_back({prefix + ".bias", &model.encoder.layers[l].bias});
  }
  slots.push_back({"codebooks", &model.books.codewords});
  return slots;
}

/// One gradient per parameter slot, same order and shapes.
using ModelGradients = std::vector<RealMatrix>;

struct ObjectiveResult {
  LossBundle losses;
  ModelGradients grads;
};

/// Full objective on a two-view input batch: encode, soft-quantize, evaluate
/// the loss terms and backpropagate into every parameter slot.
inline ObjectiveResult evaluate_objective(const Model& model, const RealMatrix& two_view_input,
                                          double tau_sq, const LossConfig& loss_cfg,
                                          bool with_grad = true) {
  const auto trace = encode_traced(model.encoder, two_view_input);
  const auto batch = make_two_view_batch(trace.output(), model.books, tau_sq);
  ObjectiveResult out{total_loss(batch, model.books, loss_cfg, with_grad), {}};
  if (!with_grad) return out;
  const auto enc = encode_backward(model.encoder, trace, out.losses.grad_f);
  for (const auto& layer : enc.layers) {
    out.grads.push_back(layer.weight);
    out.grads.push_back(layer.bias);
  }
  out.grads.push_back(out.losses.grad_codewords);
  return out;
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double base_lr = 5e-4;
  double weight_decay = 1e-5;
  std::size_t warmup_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be > 0");
    if (epochs > 0 && warmup_epochs >= epochs) {
      throw ConfigError("train: warmup_epochs must be < epochs");
    }
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
      throw ConfigError("train: invalid Adam coefficients");
    }
  }
};

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at
/// epochs * steps_per_epoch. No restarts.
inline double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const double warmup = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(cfg.epochs * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.base_lr * s / warmup;
  if (total <= warmup) return cfg.base_lr;
  const double progress = std::min(1.0, (s - warmup) / (total - warmup));
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct OptimizerState {
  std::vector<RealMatrix> first_moment;
  std::vector<RealMatrix> second_moment;
  std::uint64_t step = 0;
};

/// Adam with bias correction plus decoupled weight decay
/// (lr * weight_decay * param subtracted alongside the Adam update).
inline void adam_step(std::span<const ParameterSlot> params, std::span<const RealMatrix> grads,
                      OptimizerState& state, double lr, const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: slot count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(RealMatrix::Zero(p.value->rows(), p.value->cols()));
      state.second_moment.push_back(RealMatrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].allFinite()) {
      throw NumericError("non-finite gradient in parameter slot " + params[i].name + " at step " +
                         std::to_string(state.step));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    RealMatrix& p = *params[i].value;
    RealMatrix& m = state.first_moment[i];
    RealMatrix& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const auto update = (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
    p.array() -= lr * (update + cfg.weight_decay * p.array());
  }
}

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double icz = 0.0, icf = 0.0, pn = 0.0, cd = 0.0, cc = 0.0, total = 0.0;
};

inline constexpr char kMetricsHeader[] = "epoch,step,lr,L_icz,L_icf,L_pn,L_cd,L_cc,total";

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << format_double(r.lr) << ',' << format_double(r.icz) << ','
        << format_double(r.icf) << ',' << format_double(r.pn) << ',' << format_double(r.cd) << ','
        << format_double(r.cc) << ',' << format_double(r.total) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

struct TrainOptions {
  std::string out_dir;        // empty: keep everything in memory
  std::string manifest_text;  // written verbatim to checkpoint.manifest
  std::ostream* log = nullptr;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRow> metrics;
  std::vector<std::string> written_files;
};

namespace detail {

inline void write_checkpoint(const Model& model, const std::filesystem::path& dir,
                             std::vector<std::string>& written) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto enc = (dir / "encoder.bin").string();
  const auto books = (dir / "codebooks.bin").string();
  save_encoder(model.encoder, enc);
  save_codebooks(model.books, books);
  written.push_back(enc);
  written.push_back(books);
}

}  // namespace detail

/// Runs the training loop over a label-free view. Each epoch visits a
/// seeded permutation of the items in full batches; the last partial batch
/// is dropped. Fully deterministic for a given seed.
inline TrainResult train(const UnlabeledView& data, const ModelConfig& model_cfg,
                         const LossConfig& loss_cfg, const TrainConfig& cfg,
                         const AugmentationPolicy& augmentation, const TrainOptions& opts = {}) {
  model_cfg.validate();
  loss_cfg.validate();
  cfg.validate();
  if (data.input_dim() != model_cfg.encoder.input_dim) {
    throw DimensionError("train: data has " + std::to_string(data.input_dim()) +
                         " features, encoder expects " + std::to_string(model_cfg.encoder.input_dim));
  }

  TrainResult result{init_model(model_cfg, cfg.seed), {}, {}};
  const std::size_t steps_per_epoch = data.size() / cfg.batch_size;
  if (cfg.epochs > 0 && steps_per_epoch == 0) {
    throw ConfigError("train: fewer items (" + std::to_string(data.size()) + ") than batch_size");
  }

  const auto slots = parameter_slots(result.model);
  OptimizerState state;
  bool warned_clamp = false;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = epoch_permutation(data.size(), cfg.seed, epoch);
    MetricsRow row;
    row.epoch = epoch + 1;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::span<const std::size_t> positions(perm.data() + b * cfg.batch_size, cfg.batch_size);
      const RealMatrix x = two_view_batch(data, positions, augmentation, step);
      const auto obj = evaluate_objective(result.model, x, model_cfg.quantizer.tau_sq, loss_cfg);
      if (!std::isfinite(obj.losses.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step));
      }
      if (obj.losses.neighbors_clamped && !warned_clamp && opts.log) {
        *opts.log << "warning: neighbor count " << loss_cfg.neighbors
                  << " exceeds the negatives per anchor; clamped\n";
        warned_clamp = true;
      }
      const double lr = lr_at(step, steps_per_epoch, cfg);
      adam_step(slots, obj.grads, state, lr, cfg);
      row.lr = lr;
      row.icz += obj.losses.icz;
      row.icf += obj.losses.icf;
      row.pn += obj.losses.pn;
      row.cd += obj.losses.cd;
      row.cc += obj.losses.cc;
      row.total += obj.losses.total;
    }
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    row.icz *= inv;
    row.icf *= inv;
    row.pn *= inv;
    row.cd *= inv;
    row.cc *= inv;
    row.total *= inv;
    row.step = step;
    result.metrics.push_back(row);
    if (opts.log) {
      *opts.log << "epoch " << row.epoch << " lr " << row.lr << " total " << row.total << '\n';
    }
    if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu", epoch + 1);
      detail::write_checkpoint(result.model, std::filesystem::path(opts.out_dir) / name,
                               result.written_files);
    }
  }

  if (!opts.out_dir.empty()) {
    const std::filesystem::path dir(opts.out_dir);
    detail::write_checkpoint(result.model, dir, result.written_files);
    const auto metrics = (dir / "metrics.csv").string();
    write_metrics_csv(result.metrics, metrics);
    result.written_files.push_back(metrics);
    const auto manifest = (dir / "checkpoint.manifest").string();
    std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
    out << opts.manifest_text;
    if (!out) throw IoError("write failed: " + manifest);
    result.written_files.push_back(manifest);
  }
  return result;
}

}  // namespace sscq
