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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sscq/binary_io.hpp"
#include "sscq/error.hpp"
#include "sscq/numerics.hpp"

namespace sscq {

enum class Split : std::uint8_t { train = 0, query = 1, database = 2 };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::database: return "database";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "database") return Split::database;
  throw ConfigError("unknown split: " + std::string(s));
}

/// Sorted, duplicate-free category ids.
using LabelSet = std::vector<std::uint32_t>;

/// Items with optional multi-labels and a split tag each. Features are
/// stored as 32-bit floats, matching the on-disk format.
struct Dataset {
  std::size_t input_dim = 0;
  std::uint32_t label_alphabet = 0;
  std::vector<float> features;
  std::vector<LabelSet> labels;
  std::vector<Split> splits;

  std::size_t size() const { return splits.size(); }

  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * input_dim, input_dim};
  }

  std::vector<std::size_t> indices_of(std::initializer_list<Split> wanted) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (std::find(wanted.begin(), wanted.end(), splits[i]) != wanted.end()) {
        out.push_back(i);
      }
    }
    return out;
  }

  RealMatrix gather(std::span<const std::size_t> ids) const {
    RealMatrix m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(input_dim));
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto src = row(ids[r]);
      for (std::size_t c = 0; c < input_dim; ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = src[c];
      }
    }
    return m;
  }

  void validate() const {
    if (features.size() != size() * input_dim || labels.size() != size()) {
      throw DimensionError("dataset: inconsistent item counts");
    }
    for (const auto& ls : labels) {
      for (std::size_t j = 0; j < ls.size(); ++j) {
        if (ls[j] >= label_alphabet) throw ConfigError("dataset: label id out of range");
        if (j > 0 && ls[j] <= ls[j - 1]) throw ConfigError("dataset: labels not sorted/unique");
      }
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Label-free view over a subset of items. This is the only data type the
/// trainer accepts, so labels cannot reach any gradient.
class UnlabeledView {
 public:
  UnlabeledView(const Dataset& data, std::vector<std::size_t> items)
      : data_(&data), items_(std::move(items)) {
    for (std::size_t id : items_) {
      if (id >= data.size()) throw DimensionError("view: item index out of range");
    }
  }

  static UnlabeledView of_splits(const Dataset& data, std::initializer_list<Split> splits) {
    return UnlabeledView(data, data.indices_of(splits));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t input_dim() const { return data_->input_dim; }
  std::span<const float> row(std::size_t pos) const { return data_->row(items_[pos]); }
  std::size_t item_id(std::size_t pos) const { return items_[pos]; }

  RealMatrix gather(std::span<const std::size_t> positions) const {
    std::vector<std::size_t> ids(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) ids[i] = items_[positions[i]];
    return data_->gather(ids);
  }

  /// Per-coordinate standard deviation over the view.
  std::vector<double> coordinate_std() const {
    const std::size_t d = input_dim();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    if (size() == 0) return var;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto r = row(i);
      for (std::size_t c = 0; c < d; ++c) mean[c] += r[c];
    }
    for (double& m : mean) m /= static_cast<double>(size());
    for (std::size_t i = 0; i < size(); ++i) {
      const auto r = row(i);
      for (std::size_t c = 0; c < d; ++c) var[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
    }
    for (double& v : var) v = std::sqrt(v / static_cast<double>(size()));
    return var;
  }

 private:
  const Dataset* data_;
  std::vector<std::size_t> items_;
};

struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t per_class = 200;
  std::size_t input_dim = 32;
  double class_sep = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  // Leading items of each class tagged as queries; 0 selects per_class / 10
  // (at least one).
  std::size_t queries_per_class = 0;
};

/// Gaussian clusters around class centres placed on a sphere of radius
/// class_sep. Single label per item; deterministic per seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (cfg.per_class < 2) throw ConfigError("synthetic: per_class must be >= 2");
  if (cfg.input_dim == 0) throw ConfigError("synthetic: input_dim must be > 0");
  if (cfg.noise < 0.0 || cfg.class_sep < 0.0) {
    throw ConfigError("synthetic: noise and class_sep must be non-negative");
  }
  const std::size_t queries =
      cfg.queries_per_class ? cfg.queries_per_class : std::max<std::size_t>(1, cfg.per_class / 10);
  if (queries >= cfg.per_class) {
    throw ConfigError("synthetic: queries_per_class must leave database items");
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> centers(cfg.num_classes, std::vector<double>(cfg.input_dim));
  for (auto& c : centers) {
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (double& v : c) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : c) v = v / norm * cfg.class_sep;
  }

  Dataset data;
  data.input_dim = cfg.input_dim;
  data.label_alphabet = static_cast<std::uint32_t>(cfg.num_classes);
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    for (std::size_t j = 0; j < cfg.per_class; ++j) {
      for (std::size_t d = 0; d < cfg.input_dim; ++d) {
        const double noise = cfg.noise > 0.0 ? cfg.noise * gauss(rng) : 0.0;
        data.features.push_back(static_cast<float>(centers[k][d] + noise));
      }
      data.labels.push_back({static_cast<std::uint32_t>(k)});
      data.splits.push_back(j < queries ? Split::query : Split::database);
    }
  }
  return data;
}

/// Feature-space augmentation: additive Gaussian noise, then zeroing of
/// floor(dropout_fraction * dim) random coordinates, then a multiplicative
/// scale drawn from [1 - scale_jitter, 1 + scale_jitter].
struct AugmentationPolicy {
  double noise_sigma = 0.1;
  std::vector<double> coord_scale;  // per-coordinate noise multiplier; empty = 1
  double dropout_fraction = 0.1;
  double scale_jitter = 0.1;
  std::uint64_t seed = 0;

  static AugmentationPolicy identity() { return {0.0, {}, 0.0, 0.0, 0}; }

  void validate(std::size_t dim) const {
    if (noise_sigma < 0.0) throw ConfigError("augmentation: noise_sigma must be >= 0");
    if (dropout_fraction < 0.0 || dropout_fraction >= 1.0) {
      throw ConfigError("augmentation: dropout_fraction must lie in [0, 1)");
    }
    if (scale_jitter < 0.0 || scale_jitter >= 1.0) {
      throw ConfigError("augmentation: scale_jitter must lie in [0, 1)");
    }
    if (!coord_scale.empty() && coord_scale.size() != dim) {
      throw DimensionError("augmentation: coord_scale length mismatch");
    }
  }
};

/// Defaults: noise at 0.1 x per-coordinate std of the training items.
inline AugmentationPolicy default_augmentation(const UnlabeledView& view, std::uint64_t seed) {
  AugmentationPolicy p;
  p.coord_scale = view.coordinate_std();
  p.seed = seed;
  return p;
}

inline void augment_into(const AugmentationPolicy& policy, std::span<const float> item,
                         std::mt19937_64& rng, std::span<double> out) {
  const std::size_t dim = item.size();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t d = 0; d < dim; ++d) {
    double v = item[d];
    if (policy.noise_sigma > 0.0) {
      const double s = policy.coord_scale.empty() ? 1.0 : policy.coord_scale[d];
      v += policy.noise_sigma * s * gauss(rng);
    }
    out[d] = v;
  }
  const auto drop = static_cast<std::size_t>(std::floor(policy.dropout_fraction * static_cast<double>(dim)));
  if (drop > 0) {
    std::vector<std::size_t> coords(dim);
    std::iota(coords.begin(), coords.end(), 0);
    for (std::size_t t = 0; t < drop; ++t) {
      std::uniform_int_distribution<std::size_t> pick(t, dim - 1);
      std::swap(coords[t], coords[pick(rng)]);
      out[coords[t]] = 0.0;
    }
  }
  if (policy.scale_jitter > 0.0) {
    std::uniform_real_distribution<double> scale(1.0 - policy.scale_jitter, 1.0 + policy.scale_jitter);
    const double factor = scale(rng);
    for (double& v : out) v *= factor;
  }
}

/// Rows 2i and 2i+1 are two independent augmentations of item positions[i].
/// Each view draws from its own generator keyed by (seed, stream, i, view).
inline RealMatrix two_view_batch(const UnlabeledView& view, std::span<const std::size_t> positions,
                                 const AugmentationPolicy& policy, std::uint64_t stream) {
  policy.validate(view.input_dim());
  const auto dim = static_cast<Eigen::Index>(view.input_dim());
  RealMatrix out(static_cast<Eigen::Index>(2 * positions.size()), dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= view.size()) throw DimensionError("two_view_batch: index out of range");
    for (std::uint32_t v = 0; v < 2; ++v) {
      std::seed_seq seq{static_cast<std::uint32_t>(policy.seed), static_cast<std::uint32_t>(policy.seed >> 32),
                        static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                        static_cast<std::uint32_t>(i), v};
      std::mt19937_64 rng(seq);
      double* dst = out.row(static_cast<Eigen::Index>(2 * i + v)).data();
      augment_into(policy, view.row(positions[i]), rng, {dst, view.input_dim()});
    }
  }
  return out;
}

/// Seed-deterministic permutation of [0, n) for a given epoch.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

inline constexpr char kDatasetMagic[] = "SSCQDAT1";

inline void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  BinaryWriter w;
  w.magic({kDatasetMagic, 8});
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.input_dim));
  w.u32(data.label_alphabet);
  for (float v : data.features) w.f32(v);
  for (const auto& ls : data.labels) {
    if (ls.size() > 0xFFFF) throw ConfigError("dataset: too many labels on one item");
    w.u16(static_cast<std::uint16_t>(ls.size()));
    for (auto id : ls) w.u32(id);
  }
  for (Split s : data.splits) w.u8(static_cast<std::uint8_t>(s));
  w.save(path);
}

inline Dataset load_dataset(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_magic({kDatasetMagic, 8});
  Dataset data;
  const std::uint32_t n = r.u32();
  data.input_dim = r.u32();
  data.label_alphabet = r.u32();
  if (data.input_dim == 0) r.fail("input_dim is zero");
  const std::uint64_t values = static_cast<std::uint64_t>(n) * data.input_dim;
  if (values * 4 > r.remaining()) r.fail("truncated file while reading features");
  data.features.resize(values);
  for (auto& v : data.features) v = r.f32();
  data.labels.resize(n);
  for (auto& ls : data.labels) {
    const std::uint16_t count = r.u16();
    ls.reserve(count);
    for (std::uint16_t j = 0; j < count; ++j) {
      const std::uint64_t at = r.offset();
      const std::uint32_t id = r.u32();
      if (id >= data.label_alphabet) {
        throw FormatError(path, at, "label id " + std::to_string(id) + " exceeds alphabet size " +
                                        std::to_string(data.label_alphabet));
      }
      ls.push_back(id);
    }
    std::sort(ls.begin(), ls.end());
    ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
  }
  data.splits.resize(n);
  for (auto& s : data.splits) {
    const std::uint64_t at = r.offset();
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw FormatError(path, at, "invalid split tag " + std::to_string(tag));
    s = static_cast<Split>(tag);
  }
  r.expect_end();
  return data;
}

struct CsvImportOptions {
  Split split = Split::database;
  // When non-zero, every query_every-th row (1-based) is tagged as a query.
  std::size_t query_every = 0;
};

/// One item per line: feature columns, then a final column of labels joined
/// by '|'. Blank lines and lines starting with '#' are skipped.
inline Dataset import_csv(const std::string& path, const CsvImportOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  Dataset data;
  std::string line;
  std::uint64_t offset = 0;
  std::size_t row = 0;
  std::uint32_t max_label = 0;
  bool any_label = false;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string_view> cols;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cols.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cols.size() < 2) throw FormatError(path, line_offset, "need feature columns and a label column");
    const std::size_t dim = cols.size() - 1;
    if (data.input_dim == 0) data.input_dim = dim;
    if (dim != data.input_dim) {
      throw FormatError(path, line_offset, "row has " + std::to_string(dim) + " features, expected " +
                                               std::to_string(data.input_dim));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      auto tok = cols[c];
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw FormatError(path, line_offset, "bad number in column " + std::to_string(c + 1));
      }
      data.features.push_back(static_cast<float>(v));
    }
    LabelSet labels;
    std::string_view lab = cols.back();
    while (!lab.empty()) {
      const auto bar = lab.find('|');
      auto tok = lab.substr(0, bar);
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      if (!tok.empty()) {
        std::uint32_t id = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), id);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
          throw FormatError(path, line_offset, "bad label id \"" + std::string(tok) + "\"");
        }
        labels.push_back(id);
        max_label = std::max(max_label, id);
        any_label = true;
      }
      if (bar == std::string_view::npos) break;
      lab.remove_prefix(bar + 1);
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    data.labels.push_back(std::move(labels));
    ++row;
    const bool is_query = opts.query_every > 0 && row % opts.query_every == 0;
    data.splits.push_back(is_query ? Split::query : opts.split);
  }
  if (data.size() == 0) throw FormatError(path, offset, "no data rows");
  data.label_alphabet = any_label ? max_label + 1 : 0;
  return data;
}

}  // namespace sscq
