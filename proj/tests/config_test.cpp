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

#include "sscq/config.hpp"

#include <gtest/gtest.h>

namespace sscq {
namespace {

TEST(Config, DefaultsCarryPaperHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.loss.lambda_pn, 0.1);
  EXPECT_EQ(c.loss.lambda_cd, 0.2);
  EXPECT_EQ(c.loss.lambda_cc, 0.4);
  EXPECT_EQ(c.loss.tau_ic, 0.5);
  EXPECT_EQ(c.loss.tau_pn, 0.5);
  EXPECT_EQ(c.loss.tau_cc, 0.2);
  EXPECT_EQ(c.model.quantizer.tau_sq, 0.2);
  EXPECT_EQ(c.model.quantizer.K, 16u);
  EXPECT_EQ(c.model.quantizer.sub_dim, 16u);
  EXPECT_EQ(c.loss.neighbors, 20u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, SectionsAndCommentsApply) {
  RunConfig c;
  const auto seen = apply_config_text(c,
                                      "# tuned\n"
                                      "[loss]\n"
                                      "lambda_pn = 0.3   # heavier\n"
                                      "terms = \"{icz,pn}\"\n"
                                      "fusion = \"cross\"\n"
                                      "[encoder]\n"
                                      "hidden_dims = [16, 8]\n"
                                      "[train]\n"
                                      "seed = 42\n");
  EXPECT_EQ(c.loss.lambda_pn, 0.3);
  EXPECT_EQ(c.loss.terms.label(), "{icz,pn}");
  EXPECT_EQ(c.loss.fusion, Fusion::cross);
  EXPECT_EQ(c.model.encoder.hidden_dims, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_TRUE(seen.count("encoder.hidden_dims"));
}

TEST(Config, RenderRoundTripsEveryKey) {
  RunConfig c;
  c.loss.tau_cc = 0.1234567890123;
  c.loss.diversity = DiversityVariant::squared_probability;
  c.model.quantizer.M = 8;
  c.model.encoder.embedding_dim = 128;
  c.eval.k_list = {3, 7};
  c.train.seed = 0xFFFFFFFFFFull;
  RunConfig back;
  const auto seen = apply_config_text(back, render_config(c));
  EXPECT_EQ(seen.size(), config_keys().size());
  EXPECT_EQ(render_config(back), render_config(c));
  EXPECT_EQ(back.loss.tau_cc, c.loss.tau_cc);
  EXPECT_EQ(back.train.seed, c.train.seed);
}

TEST(Config, UnknownKeyNamesLine) {
  RunConfig c;
  try {
    apply_config_text(c, "[loss]\nlambda_xx = 1\n", "run.toml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.toml:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("loss.lambda_xx"), std::string::npos);
  }
}

TEST(Config, MalformedValuesRejected) {
  RunConfig c;
  EXPECT_THROW(apply_config_text(c, "train.epochs = 1.5\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "train.epochs = -3\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "encoder.hidden_dims = 64\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "[loss\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "loss.fusion = \"blend\"\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "just words\n"), ConfigError);
}

TEST(Config, DottedKeysWorkWithoutSections) {
  RunConfig c;
  set_config_value(c, "quantizer.tau_sq", "0.5");
  EXPECT_EQ(c.model.quantizer.tau_sq, 0.5);
  EXPECT_EQ(get_config_value(c, "quantizer.tau_sq"), "0.5");
}

}  // namespace
}  // namespace sscq
