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
#include <random>
#include <string>
#include <vector>

#include "sscq/binary_io.hpp"
#include "sscq/error.hpp"
#include "sscq/numerics.hpp"

namespace sscq {

/// Multi-layer perceptron mapping raw inputs to D-dimensional embeddings.
/// Hidden layers use ReLU; the output layer is linear.
struct EncoderConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64, 512};
  std::size_t embedding_dim = 64;

  void validate() const {
    if (input_dim == 0) throw ConfigError("encoder: input_dim must be > 0");
    if (hidden_dims.empty()) {
      throw ConfigError("encoder: at least one hidden layer is required");
    }
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw ConfigError("encoder: hidden width must be > 0");
    }
    if (embedding_dim == 0) {
      throw ConfigError("encoder: embedding_dim must be > 0");
    }
  }
};

struct DenseLayer {
  RealMatrix weight;  // fan_in x fan_out
  RealMatrix bias;    // 1 x fan_out
};

struct EncoderParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows());
  }
  std::size_t embedding_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.cols());
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight ||
          x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }
};

/// Glorot-uniform weights, zero biases. Deterministic per seed.
inline EncoderParams init_encoder(const EncoderConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> widths{config.input_dim};
  widths.insert(widths.end(), config.hidden_dims.begin(),
                config.hidden_dims.end());
  widths.push_back(config.embedding_dim);

  EncoderParams params;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(widths[l]);
    const auto fan_out = static_cast<Eigen::Index>(widths[l + 1]);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{RealMatrix(fan_in, fan_out), RealMatrix::Zero(1, fan_out)};
    for (Eigen::Index r = 0; r < fan_in; ++r) {
      for (Eigen::Index c = 0; c < fan_out; ++c) layer.weight(r, c) = dist(rng);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

/// Per-layer inputs retained by the forward pass. inputs[l] feeds layer l;
/// the last entry is the encoder output.
struct EncoderTrace {
  std::vector<RealMatrix> inputs;
  const RealMatrix& output() const { return inputs.back(); }
};

inline EncoderTrace encode_traced(const EncoderParams& params,
                                  const RealMatrix& batch) {
  if (params.layers.empty()) throw ConfigError("encode: empty encoder");
  if (static_cast<std::size_t>(batch.cols()) != params.input_dim()) {
    throw DimensionError("encode: batch has " + std::to_string(batch.cols()) +
                         " columns, encoder expects " +
                         std::to_string(params.input_dim()));
  }
  EncoderTrace trace;
  trace.inputs.reserve(params.layers.size() + 1);
  trace.inputs.push_back(batch);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DenseLayer& layer = params.layers[l];
    RealMatrix h = trace.inputs.back() * layer.weight;
    h.rowwise() += layer.bias.row(0);
    if (l + 1 < params.layers.size()) h = h.cwiseMax(0.0);
    trace.inputs.push_back(std::move(h));
  }
  return trace;
}

inline RealMatrix encode(const EncoderParams& params, const RealMatrix& batch) {
  return encode_traced(params, batch).inputs.back();
}

/// Gradients mirroring EncoderParams layer by layer.
struct EncoderGrads {
  std::vector<DenseLayer> layers;
  RealMatrix input;  // dL/d(batch)
};

inline EncoderGrads encode_backward(const EncoderParams& params,
                                    const EncoderTrace& trace,
                                    const RealMatrix& grad_output) {
  EncoderGrads grads;
  grads.layers.resize(params.layers.size());
  RealMatrix g = grad_output;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    if (l + 1 < params.layers.size()) {
      // ReLU mask from the post-activation output of layer l.
      g = g.cwiseProduct(
          (trace.inputs[l + 1].array() > 0.0).cast<double>().matrix());
    }
    grads.layers[l].weight = trace.inputs[l].transpose() * g;
    grads.layers[l].bias = g.colwise().sum();
    g = g * params.layers[l].weight.transpose();
  }
  grads.input = std::move(g);
  return grads;
}

inline constexpr char kEncoderMagic[] = "SSCQENC1";

inline void save_encoder(const EncoderParams& params, const std::string& path) {
  BinaryWriter w;
  w.magic({kEncoderMagic, 8});
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
  }
  for (const auto& layer : params.layers) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      w.f64(layer.weight.data()[i]);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      w.f64(layer.bias.data()[i]);
    }
  }
  w.save(path);
}

inline EncoderParams load_encoder(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_magic({kEncoderMagic, 8});
  const std::uint32_t count = r.u32();
  if (count == 0) r.fail("encoder has no layers");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0) r.fail("zero-sized layer");
    if (!shapes.empty() && shapes.back().second != rows) {
      r.fail("layer shapes do not chain");
    }
    shapes.emplace_back(rows, cols);
  }
  EncoderParams params;
  for (auto [rows, cols] : shapes) {
    DenseLayer layer{RealMatrix(rows, cols), RealMatrix(1, cols)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = r.f64();
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias.data()[i] = r.f64();
    }
    params.layers.push_back(std::move(layer));
  }
  r.expect_end();
  return params;
}

}  // namespace sscq
