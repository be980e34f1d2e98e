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

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sscq/binary_io.hpp"
#include "sscq/error.hpp"
#include "sscq/numerics.hpp"

namespace sscq {

/// M codebooks of K codewords each, every codeword of length sub_dim.
/// Codeword (m, k) is row m*K + k of `codewords`.
struct CodebookSet {
  std::size_t M = 0;
  std::size_t K = 0;
  std::size_t sub_dim = 0;
  RealMatrix codewords;

  std::size_t dim() const { return M * sub_dim; }

  auto codeword(std::size_t m, std::size_t k) const {
    return codewords.row(static_cast<Eigen::Index>(m * K + k));
  }
  auto codeword(std::size_t m, std::size_t k) {
    return codewords.row(static_cast<Eigen::Index>(m * K + k));
  }

  void validate() const {
    if (M == 0 || K == 0 || sub_dim == 0) {
      throw ConfigError("codebooks: M, K and sub_dim must be positive");
    }
    if (!std::has_single_bit(K)) {
      throw ConfigError("codebooks: K must be a power of two, got " +
                        std::to_string(K));
    }
    if (static_cast<std::size_t>(codewords.rows()) != M * K ||
        static_cast<std::size_t>(codewords.cols()) != sub_dim) {
      throw DimensionError("codebooks: codeword matrix has wrong shape");
    }
    require_finite(codewords, "codewords");
  }

  friend bool operator==(const CodebookSet& a, const CodebookSet& b) {
    return a.M == b.M && a.K == b.K && a.sub_dim == b.sub_dim &&
           a.codewords == b.codewords;
  }
};

/// Zero-mean Gaussian codewords with standard deviation 1/sqrt(sub_dim).
inline CodebookSet init_codebooks(std::size_t M, std::size_t K,
                                  std::size_t sub_dim, std::uint64_t seed) {
  CodebookSet books{M, K, sub_dim, RealMatrix(M * K, sub_dim)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(
      0.0, 1.0 / std::sqrt(static_cast<double>(sub_dim)));
  for (Eigen::Index i = 0; i < books.codewords.size(); ++i) {
    books.codewords.data()[i] = dist(rng);
  }
  books.validate();
  return books;
}

inline void check_embedding_shape(const RealMatrix& f,
                                  const CodebookSet& books) {
  if (static_cast<std::size_t>(f.cols()) != books.dim()) {
    throw DimensionError("embedding width " + std::to_string(f.cols()) +
                         " does not match M*sub_dim = " +
                         std::to_string(books.dim()));
  }
}

/// Per (sample, codebook) codeword probabilities, stored as an
/// N x (M*K) matrix; columns [m*K, (m+1)*K) hold codebook m.
struct SoftAssignment {
  RealMatrix probs;
  double tau = 0.0;
};

struct SoftQuantization {
  RealMatrix z;
  SoftAssignment assign;
};

/// Squared distances between each sub-vector and every codeword:
/// entry (i, m*K + k) = ||f_{i,m} - c_{m,k}||^2.
inline RealMatrix subspace_sq_distances(const RealMatrix& f,
                                        const CodebookSet& books) {
  check_embedding_shape(f, books);
  const auto M = static_cast<Eigen::Index>(books.M);
  const auto K = static_cast<Eigen::Index>(books.K);
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);
  RealMatrix d(f.rows(), M * K);
  for (Eigen::Index m = 0; m < M; ++m) {
    const auto cw = books.codewords.middleRows(m * K, K);
    const auto fm = f.middleCols(m * sd, sd);
    const RealVector cnorm = cw.rowwise().squaredNorm();
    const RealVector fnorm = fm.rowwise().squaredNorm();
    RealMatrix cross = fm * cw.transpose();
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      for (Eigen::Index k = 0; k < K; ++k) {
        d(i, m * K + k) =
            std::max(0.0, fnorm[i] + cnorm[k] - 2.0 * cross(i, k));
      }
    }
  }
  return d;
}

/// Differentiable quantization: z_m = sum_k softmax_k(-||f_m - c_{m,k}||^2 /
/// tau) c_{m,k}, concatenated over m.
inline SoftQuantization soft_quantize(const RealMatrix& f,
                                      const CodebookSet& books, double tau) {
  if (!(tau > 0.0)) throw ConfigError("soft_quantize: tau_sq must be > 0");
  check_embedding_shape(f, books);
  const std::size_t K = books.K;
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);

  // Direct per-codeword differences keep the small-tau limit exact.
  SoftQuantization out{RealMatrix::Zero(f.rows(), f.cols()),
                       {RealMatrix(f.rows(), books.M * K), tau}};
  std::vector<double> scores(K);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (std::size_t m = 0; m < books.M; ++m) {
      const auto fm = f.row(i).segment(static_cast<Eigen::Index>(m) * sd, sd);
      for (std::size_t k = 0; k < K; ++k) {
        scores[k] = -(fm - books.codeword(m, k)).squaredNorm();
      }
      const auto p = softmax(scores, tau);
      auto zm = out.z.row(i).segment(static_cast<Eigen::Index>(m) * sd, sd);
      for (std::size_t k = 0; k < K; ++k) {
        out.assign.probs(i, static_cast<Eigen::Index>(m * K + k)) = p[k];
        zm += p[k] * books.codeword(m, k);
      }
    }
  }
  return out;
}

/// Accumulates dL/df and dL/dcodewords given dL/dz.
inline void soft_quantize_backward(const RealMatrix& f,
                                   const CodebookSet& books,
                                   const SoftQuantization& sq,
                                   const RealMatrix& grad_z, RealMatrix& grad_f,
                                   RealMatrix& grad_codewords) {
  const std::size_t K = books.K;
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);
  const double tau = sq.assign.tau;
  std::vector<double> gp(K);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (std::size_t m = 0; m < books.M; ++m) {
      const Eigen::Index off = static_cast<Eigen::Index>(m) * sd;
      const auto fm = f.row(i).segment(off, sd);
      const auto g = grad_z.row(i).segment(off, sd);
      double inner = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double p = sq.assign.probs(i, static_cast<Eigen::Index>(m * K + k));
        gp[k] = g.dot(books.codeword(m, k));
        inner += p * gp[k];
      }
      for (std::size_t k = 0; k < K; ++k) {
        const auto row = static_cast<Eigen::Index>(m * K + k);
        const double p = sq.assign.probs(i, row);
        // Direct path through the weighted sum.
        grad_codewords.row(row) += p * g;
        // Path through the softmax scores a_k = -||f_m - c_k||^2 / tau.
        const double ga = p * (gp[k] - inner);
        if (ga == 0.0) continue;
        const auto diff = (fm - books.codeword(m, k)).eval();
        grad_f.row(i).segment(off, sd) -= (2.0 * ga / tau) * diff;
        grad_codewords.row(row) += (2.0 * ga / tau) * diff;
      }
    }
  }
}

/// Bit layout of a packed code: sub-index m occupies bits
/// [m*b, (m+1)*b) with b = log2(K), least significant bit first.
struct CodeLayout {
  std::size_t M = 0;
  std::size_t K = 0;

  CodeLayout() = default;
  CodeLayout(std::size_t m, std::size_t k) : M(m), K(k) {
    if (M == 0 || !std::has_single_bit(K)) {
      throw ConfigError("code layout: M > 0 and power-of-two K required");
    }
    if (bits_per_index() > 32) throw ConfigError("code layout: K too large");
  }

  std::size_t bits_per_index() const {
    return static_cast<std::size_t>(std::countr_zero(K));
  }
  std::size_t code_bits() const { return M * bits_per_index(); }
  std::size_t code_bytes() const { return (code_bits() + 7) / 8; }

  void pack(std::span<const std::uint32_t> indices,
            std::span<std::uint8_t> out) const {
    const std::size_t b = bits_per_index();
    std::fill(out.begin(), out.end(), std::uint8_t{0});
    for (std::size_t m = 0; m < M; ++m) {
      if (indices[m] >= K) {
        throw CorruptCodeError("sub-index " + std::to_string(indices[m]) +
                               " >= K");
      }
      for (std::size_t bit = 0; bit < b; ++bit) {
        if ((indices[m] >> bit) & 1u) {
          const std::size_t pos = m * b + bit;
          out[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
        }
      }
    }
  }

  std::uint32_t unpack(std::span<const std::uint8_t> code,
                       std::size_t m) const {
    const std::size_t b = bits_per_index();
    std::uint32_t v = 0;
    for (std::size_t bit = 0; bit < b; ++bit) {
      const std::size_t pos = m * b + bit;
      v |= static_cast<std::uint32_t>((code[pos / 8] >> (pos % 8)) & 1u) << bit;
    }
    return v;
  }

  std::vector<std::uint32_t> unpack_all(
      std::span<const std::uint8_t> code) const {
    std::vector<std::uint32_t> out(M);
    for (std::size_t m = 0; m < M; ++m) out[m] = unpack(code, m);
    return out;
  }
};

/// Contiguous packed codes for a set of items.
struct PackedCodes {
  CodeLayout layout;
  std::size_t count = 0;
  std::vector<std::uint8_t> bytes;

  std::size_t size() const { return count; }
  std::span<const std::uint8_t> code(std::size_t i) const {
    return {bytes.data() + i * layout.code_bytes(), layout.code_bytes()};
  }
  std::vector<std::uint32_t> indices(std::size_t i) const {
    return layout.unpack_all(code(i));
  }
};

/// Nearest-codeword index per sub-space; ties go to the lowest index.
inline std::vector<std::uint32_t> nearest_codewords(const RealMatrix& f,
                                                    const CodebookSet& books) {
  check_embedding_shape(f, books);
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);
  std::vector<std::uint32_t> out(static_cast<std::size_t>(f.rows()) * books.M);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (std::size_t m = 0; m < books.M; ++m) {
      const auto fm = f.row(i).segment(static_cast<Eigen::Index>(m) * sd, sd);
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t k = 0; k < books.K; ++k) {
        const double d = (fm - books.codeword(m, k)).squaredNorm();
        if (d < best) {
          best = d;
          arg = static_cast<std::uint32_t>(k);
        }
      }
      out[static_cast<std::size_t>(i) * books.M + m] = arg;
    }
  }
  return out;
}

inline PackedCodes hard_assign(const RealMatrix& f, const CodebookSet& books) {
  const auto idx = nearest_codewords(f, books);
  PackedCodes codes{CodeLayout(books.M, books.K), static_cast<std::size_t>(f.rows()), {}};
  const std::size_t n = static_cast<std::size_t>(f.rows());
  const std::size_t w = codes.layout.code_bytes();
  codes.bytes.resize(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    codes.layout.pack({idx.data() + i * books.M, books.M},
                      {codes.bytes.data() + i * w, w});
  }
  return codes;
}

inline RealMatrix reconstruct(std::span<const std::uint32_t> indices,
                              const CodebookSet& books) {
  if (indices.size() != books.M) {
    throw CorruptCodeError("code has " + std::to_string(indices.size()) +
                           " sub-indices, expected " + std::to_string(books.M));
  }
  const auto sd = static_cast<Eigen::Index>(books.sub_dim);
  RealMatrix out(1, static_cast<Eigen::Index>(books.dim()));
  for (std::size_t m = 0; m < books.M; ++m) {
    if (indices[m] >= books.K) {
      throw CorruptCodeError("sub-index " + std::to_string(indices[m]) +
                             " out of range for K = " + std::to_string(books.K));
    }
    out.row(0).segment(static_cast<Eigen::Index>(m) * sd, sd) =
        books.codeword(m, indices[m]);
  }
  return out;
}

inline RealMatrix reconstruct(std::span<const std::uint8_t> code,
                              const CodebookSet& books) {
  const CodeLayout layout(books.M, books.K);
  if (code.size() != layout.code_bytes()) {
    throw CorruptCodeError("packed code has wrong byte length");
  }
  return reconstruct(layout.unpack_all(code), books);
}

inline constexpr char kCodebookMagic[8] = {'S', 'S', 'C', 'Q', 'P', 'Q', '1', '\0'};
inline constexpr char kCodeFileMagic[] = "SSCQCOD1";

inline void save_codebooks(const CodebookSet& books, const std::string& path) {
  BinaryWriter w;
  w.magic({kCodebookMagic, 8});
  w.u32(static_cast<std::uint32_t>(books.M));
  w.u32(static_cast<std::uint32_t>(books.K));
  w.u32(static_cast<std::uint32_t>(books.sub_dim));
  for (Eigen::Index i = 0; i < books.codewords.size(); ++i) {
    w.f64(books.codewords.data()[i]);
  }
  w.save(path);
}

inline CodebookSet load_codebooks(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_magic({kCodebookMagic, 8});
  CodebookSet books;
  books.M = r.u32();
  books.K = r.u32();
  books.sub_dim = r.u32();
  if (books.M == 0 || books.K == 0 || books.sub_dim == 0 ||
      !std::has_single_bit(books.K)) {
    r.fail("invalid codebook header");
  }
  books.codewords.resize(static_cast<Eigen::Index>(books.M * books.K),
                         static_cast<Eigen::Index>(books.sub_dim));
  for (Eigen::Index i = 0; i < books.codewords.size(); ++i) {
    books.codewords.data()[i] = r.f64();
  }
  r.expect_end();
  if (!books.codewords.allFinite()) r.fail("non-finite codeword values");
  return books;
}

inline void write_codes(const PackedCodes& codes, BinaryWriter& w) {
  w.magic({kCodeFileMagic, 8});
  w.u32(static_cast<std::uint32_t>(codes.size()));
  w.u32(static_cast<std::uint32_t>(codes.layout.M));
  w.u32(static_cast<std::uint32_t>(codes.layout.K));
  w.raw(codes.bytes);
}

inline void save_codes(const PackedCodes& codes, const std::string& path) {
  BinaryWriter w;
  write_codes(codes, w);
  w.save(path);
}

inline PackedCodes load_codes(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_magic({kCodeFileMagic, 8});
  const std::uint32_t count = r.u32();
  const std::uint32_t M = r.u32();
  const std::uint32_t K = r.u32();
  if (M == 0 || K == 0 || !std::has_single_bit(K)) {
    r.fail("invalid code header");
  }
  PackedCodes codes{CodeLayout(M, K), count, {}};
  const auto block = r.raw(static_cast<std::size_t>(count) *
                           codes.layout.code_bytes());
  codes.bytes.assign(block.begin(), block.end());
  r.expect_end();
  return codes;
}

}  // namespace sscq
