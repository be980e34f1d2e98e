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

#include "sscq/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace sscq {
namespace {

using testing::random_matrix;

TrainConfig schedule(std::size_t epochs, std::size_t warmup) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.warmup_epochs = warmup;
  return cfg;
}

TEST(LrAt, RampStartsAtZero) {
  EXPECT_EQ(lr_at(0, 7, schedule(100, 10)), 0.0);
}

TEST(LrAt, EndOfWarmupIsBaseLr) {
  const auto cfg = schedule(100, 10);
  EXPECT_EQ(lr_at(70, 7, cfg), cfg.base_lr);
}

TEST(LrAt, FinalStepIsZero) {
  const auto cfg = schedule(100, 10);
  EXPECT_NEAR(lr_at(700, 7, cfg), 0.0, 1e-12);
}

TEST(LrAt, ClosedFormMidDecay) {
  const auto cfg = schedule(20, 10);
  // Halfway through the cosine phase: base * (1 + cos(pi/2)) / 2.
  EXPECT_NEAR(lr_at(150, 10, cfg), cfg.base_lr * 0.5, 1e-15);
  EXPECT_NEAR(lr_at(5, 10, cfg), cfg.base_lr * 5.0 / 100.0, 1e-18);
}

TEST(LrAt, ContinuousAtWarmupBoundary) {
  const auto cfg = schedule(100, 10);
  const double before = lr_at(69, 7, cfg);
  const double at = lr_at(70, 7, cfg);
  const double after = lr_at(71, 7, cfg);
  EXPECT_NEAR(before, at, cfg.base_lr / 70 + 1e-15);
  EXPECT_NEAR(after, at, cfg.base_lr / 70);
  EXPECT_LT(after, at);
}

TEST(LrAt, NonIncreasingAfterWarmup) {
  const auto cfg = schedule(30, 3);
  for (std::size_t s = 15; s < 150; ++s) EXPECT_LE(lr_at(s + 1, 5, cfg), lr_at(s, 5, cfg));
}

TEST(TrainConfig, RejectsWarmupNotBelowEpochs) {
  EXPECT_THROW(schedule(10, 10).validate(), ConfigError);
  auto bad = schedule(10, 2);
  bad.base_lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainConfig, PaperDefaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.base_lr, 5e-4);
  EXPECT_EQ(cfg.weight_decay, 1e-5);
  EXPECT_EQ(cfg.warmup_epochs, 10u);
}

TEST(AdamStep, ZeroGradientZeroDecayIsFixedPoint) {
  RealMatrix p = random_matrix(3, 4, 1);
  const RealMatrix before = p;
  std::vector<ParameterSlot> slots{{"p", &p}};
  std::vector<RealMatrix> grads{RealMatrix::Zero(3, 4)};
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState state;
  for (int i = 0; i < 5; ++i) adam_step(slots, grads, state, 1e-3, cfg);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 5u);
  EXPECT_EQ(state.first_moment[0].rows(), 3);
  EXPECT_EQ(state.second_moment[0].cols(), 4);
}

TEST(AdamStep, UnitStepPropertyMatchesScalarSimulation) {
  // Independent scalar re-simulation of the Adam recurrences.
  const double g = 0.37, lr = 1e-2;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  RealMatrix p = RealMatrix::Zero(1, 1);
  std::vector<ParameterSlot> slots{{"p", &p}};
  std::vector<RealMatrix> grads{RealMatrix::Constant(1, 1, g)};
  OptimizerState state;
  double m = 0, v = 0, sim = 0;
  for (int t = 1; t <= 200; ++t) {
    const double prev = p(0, 0);
    adam_step(slots, grads, state, lr, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    sim -= lr * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(std::abs(p(0, 0) - prev), lr, 0.05 * lr);
  }
  EXPECT_NEAR(p(0, 0), sim, 1e-12);
}

TEST(AdamStep, DecoupledDecayShrinksParameters) {
  RealMatrix p = RealMatrix::Constant(2, 2, 3.0);
  std::vector<ParameterSlot> slots{{"p", &p}};
  std::vector<RealMatrix> grads{RealMatrix::Zero(2, 2)};
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  OptimizerState state;
  adam_step(slots, grads, state, 0.5, cfg);
  EXPECT_DOUBLE_EQ(p(0, 0), 3.0 - 0.5 * 0.1 * 3.0);
}

TEST(AdamStep, NonFiniteGradientNamesSlot) {
  RealMatrix a = RealMatrix::Zero(1, 2), b = RealMatrix::Zero(2, 1);
  std::vector<ParameterSlot> slots{{"encoder.layer0.weight", &a}, {"codebooks", &b}};
  std::vector<RealMatrix> grads{RealMatrix::Zero(1, 2), RealMatrix::Zero(2, 1)};
  grads[1](1, 0) = std::nan("");
  OptimizerState state;
  try {
    adam_step(slots, grads, state, 1e-3, TrainConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("codebooks"), std::string::npos);
  }
  EXPECT_EQ(a, RealMatrix::Zero(1, 2));
}

ModelConfig tiny_model(std::size_t input_dim) {
  ModelConfig cfg;
  cfg.encoder.input_dim = input_dim;
  cfg.encoder.hidden_dims = {6};
  cfg.encoder.embedding_dim = 8;
  cfg.quantizer.M = 2;
  cfg.quantizer.K = 4;
  cfg.quantizer.sub_dim = 4;
  return cfg;
}

TEST(ModelConfig, RejectsMismatchedEmbeddingDim) {
  auto cfg = tiny_model(5);
  cfg.encoder.embedding_dim = 9;
  EXPECT_THROW(cfg.validate(), DimensionError);
}

TEST(ParameterSlots, NamesAndOrder) {
  auto model = init_model(tiny_model(5), 3);
  const auto slots = parameter_slots(model);
  ASSERT_EQ(slots.size(), 5u);
  EXPECT_EQ(slots[0].name, "encoder.layer0.weight");
  EXPECT_EQ(slots[3].name, "encoder.layer1.bias");
  EXPECT_EQ(slots[4].name, "codebooks");
}

TEST(EvaluateObjective, GradientMatchesFiniteDifferencesOnEveryParameter) {
  const auto cfg = tiny_model(5);
  Model model = init_model(cfg, 11);
  for (auto& layer : model.encoder.layers) layer.bias = random_matrix(1, layer.bias.cols(), 5, 0.1);
  const RealMatrix x = random_matrix(8, 5, 12);
  LossConfig loss;
  loss.neighbors = 3;

  std::vector<double> point;
  for (const auto& s : parameter_slots(model)) {
    point.insert(point.end(), s.value->data(), s.value->data() + s.value->size());
  }
  auto fn = [&](std::span<const double> v, std::span<double> grad) {
    Model m = model;
    std::size_t off = 0;
    for (auto& s : parameter_slots(m)) {
      std::copy_n(v.begin() + off, s.value->size(), s.value->data());
      off += s.value->size();
    }
    const auto obj = evaluate_objective(m, x, cfg.quantizer.tau_sq, loss, !grad.empty());
    if (!grad.empty()) {
      off = 0;
      for (const auto& g : obj.grads) {
        std::copy_n(g.data(), g.size(), grad.begin() + off);
        off += g.size();
      }
    }
    return obj.losses.total;
  };
  const auto r = grad_check(fn, point);
  EXPECT_TRUE(r.passed) << "worst " << r.worst_index << " rel " << r.max_relative_error;
}

Dataset small_data() {
  SyntheticConfig s;
  s.num_classes = 4;
  s.per_class = 20;
  s.input_dim = 5;
  s.seed = 9;
  return generate_synthetic(s);
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.warmup_epochs = epochs > 1 ? 1 : 0;
  t.batch_size = 8;
  t.seed = 21;
  return t;
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  const auto data = small_data();
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  const auto cfg = tiny_model(5);
  auto t = short_run(0);
  const auto result = train(view, cfg, LossConfig{}, t, default_augmentation(view, 1));
  EXPECT_EQ(result.model, init_model(cfg, t.seed));
  EXPECT_TRUE(result.metrics.empty());
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto data = small_data();
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  const auto cfg = tiny_model(5);
  LossConfig loss;
  loss.neighbors = 4;
  const auto aug = default_augmentation(view, 2);
  const auto a = train(view, cfg, loss, short_run(3), aug);
  const auto b = train(view, cfg, loss, short_run(3), aug);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.metrics[i].total, b.metrics[i].total);
  EXPECT_FALSE(a.model == init_model(cfg, 21));
}

TEST(Train, DropsLastPartialBatch) {
  const auto data = small_data();  // 72 database items
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  auto t = short_run(2);
  t.batch_size = 10;
  const auto r = train(view, tiny_model(5), LossConfig{}, t, default_augmentation(view, 2));
  EXPECT_EQ(r.metrics.back().step, 2 * (view.size() / 10));
}

TEST(Train, RejectsInputDimMismatch) {
  const auto data = small_data();
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  EXPECT_THROW(train(view, tiny_model(6), LossConfig{}, short_run(1), default_augmentation(view, 2)),
               DimensionError);
}

TEST(Train, WritesCheckpointsMetricsAndManifest) {
  const auto data = small_data();
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  const auto dir = std::filesystem::temp_directory_path() / "sscq_trainer_test";
  std::filesystem::remove_all(dir);
  auto t = short_run(4);
  t.checkpoint_every = 2;
  TrainOptions opts{dir.string(), "seed = 21\n", nullptr};
  const auto r = train(view, tiny_model(5), LossConfig{}, t, default_augmentation(view, 2), opts);
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0002" / "encoder.bin"));
  EXPECT_FALSE(std::filesystem::exists(dir / "epoch_0004"));
  EXPECT_EQ(load_encoder((dir / "encoder.bin").string()), r.model.encoder);
  EXPECT_EQ(load_codebooks((dir / "codebooks.bin").string()), r.model.books);

  std::ifstream in(dir / "metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,step,lr,L_icz,L_icf,L_pn,L_cd,L_cc,total");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    ++rows;
    const auto cells = split(line, ',');
    ASSERT_EQ(cells.size(), 9u);
    EXPECT_EQ(cells[0], std::to_string(rows));
  }
  EXPECT_EQ(rows, 4u);
  std::ifstream man(dir / "checkpoint.manifest");
  std::stringstream ss;
  ss << man.rdbuf();
  EXPECT_EQ(ss.str(), "seed = 21\n");
  std::filesystem::remove_all(dir);
}

TEST(Train, BaselineOnlyReportsZeroForDisabledTerms) {
  const auto data = small_data();
  const auto view = UnlabeledView::of_splits(data, {Split::database});
  LossConfig loss;
  loss.terms = LossTerms::baseline();
  const auto r = train(view, tiny_model(5), loss, short_run(2), default_augmentation(view, 2));
  for (const auto& row : r.metrics) {
    EXPECT_EQ(row.pn, 0.0);
    EXPECT_EQ(row.cd, 0.0);
    EXPECT_EQ(row.icf, 0.0);
    EXPECT_EQ(row.cc, 0.0);
    EXPECT_EQ(row.total, row.icz);
  }
}

TEST(Train, TotalLossDecreasesOnSyntheticData) {
  // Default loss and schedule on the 10-class fixture, recorded at a pinned seed.
  const auto data = generate_synthetic(SyntheticConfig{});
  const auto view = UnlabeledView::of_splits(data, {Split::train, Split::database});
  ModelConfig cfg;
  cfg.encoder.input_dim = 32;
  TrainConfig t;
  t.epochs = 50;
  t.seed = 5;
  const auto r = train(view, cfg, LossConfig{}, t, default_augmentation(view, t.seed));
  ASSERT_EQ(r.metrics.size(), 50u);
  EXPECT_LT(r.metrics.back().total, r.metrics.front().total);
}

}  // namespace
}  // namespace sscq
