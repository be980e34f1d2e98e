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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sscq/data.hpp"
#include "sscq/error.hpp"
#include "sscq/losses.hpp"
#include "sscq/text.hpp"
#include "sscq/trainer.hpp"

namespace sscq {

struct AugmentSettings {
  double noise_sigma = 0.1;
  double dropout_fraction = 0.1;
  double scale_jitter = 0.1;
};

struct EvalSettings {
  std::size_t cutoff = 100;
  std::vector<std::size_t> k_list{1, 10, 50, 100};
};

/// Every tunable value of a run, as read from a config file.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  AugmentSettings augment;
  EvalSettings eval;

  AugmentationPolicy augmentation(const UnlabeledView& view) const {
    auto p = default_augmentation(view, train.seed);
    p.noise_sigma = augment.noise_sigma;
    p.dropout_fraction = augment.dropout_fraction;
    p.scale_jitter = augment.scale_jitter;
    return p;
  }

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
    if (eval.cutoff == 0) throw ConfigError("eval.cutoff must be >= 1");
  }
};

namespace detail {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config key " + std::string(key) + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

inline std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

inline std::vector<std::size_t> parse_count_list(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError("config key " + std::string(key) + ": expected a list like [64, 512]");
  }
  std::vector<std::size_t> out;
  const auto body = trim(v.substr(1, v.size() - 2));
  if (body.empty()) return out;
  for (const auto& item : split(body, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

inline std::string render_count_list(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

/// Accessor-backed fields; `ref` returns a reference into the config.
template <typename Getter>
Field real(std::string key, Getter ref) {
  return {key, [ref](const RunConfig& c) { return format_double(ref(c)); },
          [ref, key](RunConfig& c, std::string_view v) { ref(c) = parse_number<double>(key, v); }};
}

template <typename Getter>
Field count(std::string key, Getter ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, key](RunConfig& c, std::string_view v) {
            ref(c) = parse_number<std::remove_reference_t<decltype(ref(c))>>(key, v);
          }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(count("encoder.input_dim", [](auto& c) -> auto& { return c.model.encoder.input_dim; }));
    f.push_back({"encoder.hidden_dims",
                 [](const RunConfig& c) { return render_count_list(c.model.encoder.hidden_dims); },
                 [](RunConfig& c, std::string_view v) {
                   c.model.encoder.hidden_dims = parse_count_list("encoder.hidden_dims", v);
                 }});
    f.push_back(count("encoder.embedding_dim", [](auto& c) -> auto& { return c.model.encoder.embedding_dim; }));
    f.push_back(count("quantizer.M", [](auto& c) -> auto& { return c.model.quantizer.M; }));
    f.push_back(count("quantizer.K", [](auto& c) -> auto& { return c.model.quantizer.K; }));
    f.push_back(count("quantizer.sub_dim", [](auto& c) -> auto& { return c.model.quantizer.sub_dim; }));
    f.push_back(real("quantizer.tau_sq", [](auto& c) -> auto& { return c.model.quantizer.tau_sq; }));
    f.push_back(real("loss.lambda_pn", [](auto& c) -> auto& { return c.loss.lambda_pn; }));
    f.push_back(real("loss.lambda_cd", [](auto& c) -> auto& { return c.loss.lambda_cd; }));
    f.push_back(real("loss.lambda_cc", [](auto& c) -> auto& { return c.loss.lambda_cc; }));
    f.push_back(real("loss.tau_ic", [](auto& c) -> auto& { return c.loss.tau_ic; }));
    f.push_back(real("loss.tau_pn", [](auto& c) -> auto& { return c.loss.tau_pn; }));
    f.push_back(real("loss.tau_cc", [](auto& c) -> auto& { return c.loss.tau_cc; }));
    f.push_back(count("loss.neighbors", [](auto& c) -> auto& { return c.loss.neighbors; }));
    f.push_back({"loss.fusion", [](const RunConfig& c) { return "\"" + std::string(to_string(c.loss.fusion)) + "\""; },
                 [](RunConfig& c, std::string_view v) { c.loss.fusion = parse_fusion(unquote(v)); }});
    f.push_back({"loss.diversity",
                 [](const RunConfig& c) { return "\"" + std::string(to_string(c.loss.diversity)) + "\""; },
                 [](RunConfig& c, std::string_view v) { c.loss.diversity = parse_diversity(unquote(v)); }});
    f.push_back({"loss.terms", [](const RunConfig& c) { return "\"" + c.loss.terms.label() + "\""; },
                 [](RunConfig& c, std::string_view v) { c.loss.terms = LossTerms::parse(unquote(v)); }});
    f.push_back(count("train.epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    f.push_back(count("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(real("train.base_lr", [](auto& c) -> auto& { return c.train.base_lr; }));
    f.push_back(real("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
    f.push_back(count("train.warmup_epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; }));
    f.push_back(real("train.beta1", [](auto& c) -> auto& { return c.train.beta1; }));
    f.push_back(real("train.beta2", [](auto& c) -> auto& { return c.train.beta2; }));
    f.push_back(real("train.eps", [](auto& c) -> auto& { return c.train.eps; }));
    f.push_back(count("train.seed", [](auto& c) -> auto& { return c.train.seed; }));
    f.push_back(count("train.checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(real("augment.noise_sigma", [](auto& c) -> auto& { return c.augment.noise_sigma; }));
    f.push_back(real("augment.dropout_fraction", [](auto& c) -> auto& { return c.augment.dropout_fraction; }));
    f.push_back(real("augment.scale_jitter", [](auto& c) -> auto& { return c.augment.scale_jitter; }));
    f.push_back(count("eval.cutoff", [](auto& c) -> auto& { return c.eval.cutoff; }));
    f.push_back({"eval.k_list", [](const RunConfig& c) { return render_count_list(c.eval.k_list); },
                 [](RunConfig& c, std::string_view v) { c.eval.k_list = parse_count_list("eval.k_list", v); }});
    return f;
  }();
  return all;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

/// Sets one dotted key ("loss.tau_ic") from its text form.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key: " + std::string(key));
}

inline std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) return f.get(cfg);
  }
  throw ConfigError("unknown config key: " + std::string(key));
}

/// Applies "[section]" headers and "key = value" lines on top of `cfg`.
/// '#' starts a comment outside quotes. Returns the dotted keys that were set.
inline std::set<std::string> apply_config_text(RunConfig& cfg, std::string_view text,
                                               const std::string& source = "<config>") {
  std::set<std::string> seen;
  std::string section;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    if (t.front() == '[' && t.find('=') == std::string_view::npos) {
      if (t.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + std::string(trim(t.substr(0, eq)));
    try {
      set_config_value(cfg, key, t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    seen.insert(key);
  }
  return seen;
}

inline std::set<std::string> load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config_text(cfg, ss.str(), path);
}

/// Full config in the same format the loader reads; loading the output
/// over defaults reproduces `cfg`.
inline std::string render_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& f : detail::fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace sscq
