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
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sscq/binary_io.hpp"
#include "sscq/data.hpp"
#include "sscq/encoder.hpp"
#include "sscq/error.hpp"
#include "sscq/quantizer.hpp"
#include "sscq/text.hpp"

namespace sscq {

/// Frozen codebooks plus one packed code per database item. `ids` are the
/// caller's stable item identifiers (dataset row numbers in the CLI).
struct PQIndex {
  CodebookSet books;
  PackedCodes codes;
  std::vector<std::uint32_t> ids;

  std::size_t size() const { return ids.size(); }

  void validate() const {
    books.validate();
    if (codes.size() != ids.size()) {
      throw DimensionError("index: " + std::to_string(codes.size()) + " codes but " +
                           std::to_string(ids.size()) + " ids");
    }
    if (codes.layout.M != books.M || codes.layout.K != books.K) {
      throw DimensionError("index: code layout does not match codebooks");
    }
    for (std::size_t i = 0; i < codes.size(); ++i) {
      for (auto k : codes.indices(i)) {
        if (k >= books.K) throw CorruptCodeError("index: code " + std::to_string(i) + " out of range");
      }
    }
  }
};

inline PQIndex build_index_from_embeddings(const RealMatrix& embeddings, const CodebookSet& books,
                                           std::vector<std::uint32_t> ids) {
  if (embeddings.rows() == 0) throw ConfigError("build_index: empty database");
  if (ids.size() != static_cast<std::size_t>(embeddings.rows())) {
    throw DimensionError("build_index: id count does not match embedding rows");
  }
  return {books, hard_assign(embeddings, books), std::move(ids)};
}

/// Encodes and hard-quantizes the given dataset rows, in chunks to bound
/// memory on large databases.
inline PQIndex build_index(const EncoderParams& encoder, const CodebookSet& books, const Dataset& data,
                           std::span<const std::size_t> rows, std::size_t chunk = 4096) {
  if (rows.empty()) throw ConfigError("build_index: empty database");
  PQIndex index{books, {CodeLayout(books.M, books.K), 0, {}}, {}};
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    const auto codes = hard_assign(encode(encoder, data.gather(part)), books);
    index.codes.bytes.insert(index.codes.bytes.end(), codes.bytes.begin(), codes.bytes.end());
    index.codes.count += codes.count;
    for (auto r : part) index.ids.push_back(static_cast<std::uint32_t>(r));
  }
  return index;
}

/// Squared distances from each query sub-vector to every codeword, M x K
/// contiguous.
struct DistanceTable {
  std::size_t M = 0;
  std::size_t K = 0;
  std::vector<double> entries;

  double at(std::size_t m, std::size_t k) const { return entries[m * K + k]; }
};

inline DistanceTable distance_table(std::span<const double> query, const CodebookSet& books) {
  if (query.size() != books.dim()) {
    throw DimensionError("distance_table: query has " + std::to_string(query.size()) +
                         " dims, codebooks expect " + std::to_string(books.dim()));
  }
  DistanceTable t{books.M, books.K, std::vector<double>(books.M * books.K)};
  for (std::size_t m = 0; m < books.M; ++m) {
    const double* q = query.data() + m * books.sub_dim;
    for (std::size_t k = 0; k < books.K; ++k) {
      const auto c = books.codeword(m, k);
      double acc = 0.0;
      for (std::size_t j = 0; j < books.sub_dim; ++j) {
        const double d = q[j] - c[static_cast<Eigen::Index>(j)];
        acc += d * d;
      }
      t.entries[m * books.K + k] = acc;
    }
  }
  return t;
}

struct Hit {
  std::uint32_t item_id = 0;
  double distance = 0.0;
};

struct RetrievalResult {
  std::vector<Hit> hits;  // ascending distance, ties by ascending id
};

/// Asymmetric distance of every indexed item: sum over m of table[m, code_m].
inline std::vector<double> asymmetric_distances(const PQIndex& index, const DistanceTable& table) {
  if (table.M != index.books.M || table.K != index.books.K) {
    throw DimensionError("search: distance table does not match index codebooks");
  }
  std::vector<double> out(index.size());
  const auto& layout = index.codes.layout;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto code = index.codes.code(i);
    double acc = 0.0;
    for (std::size_t m = 0; m < table.M; ++m) acc += table.entries[m * table.K + layout.unpack(code, m)];
    out[i] = acc;
  }
  return out;
}

inline RetrievalResult search(const PQIndex& index, const DistanceTable& table, std::size_t k) {
  if (k == 0) throw ConfigError("search: k must be >= 1");
  const auto dist = asymmetric_distances(index, table);
  std::vector<Hit> hits(index.size());
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = {index.ids[i], dist[i]};
  const auto less = [](const Hit& a, const Hit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.item_id < b.item_id);
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), less);
  hits.resize(keep);
  return {std::move(hits)};
}

/// Searches every row of `queries` (already embedded). Rows are split into
/// contiguous blocks across `threads`; results do not depend on the split.
inline std::vector<RetrievalResult> search_batch(const PQIndex& index, const RealMatrix& queries,
                                                 std::size_t k, std::size_t threads = 1) {
  std::vector<RetrievalResult> out(static_cast<std::size_t>(queries.rows()));
  const auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      const auto row = queries.row(static_cast<Eigen::Index>(q));
      out[q] = search(index, distance_table({row.data(), static_cast<std::size_t>(row.size())}, index.books), k);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, out.size()));
  if (threads == 1) {
    run(0, out.size());
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t per = (out.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        run(std::min(out.size(), t * per), std::min(out.size(), (t + 1) * per));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---- On-disk index: a directory of codebooks, codes, ids and manifest ----

inline constexpr char kIdsMagic[] = "SSCQIDS1";

inline std::uint64_t codebook_fingerprint(const CodebookSet& books) {
  std::string bytes(reinterpret_cast<const char*>(books.codewords.data()),
                    static_cast<std::size_t>(books.codewords.size()) * sizeof(double));
  bytes += std::to_string(books.M) + "/" + std::to_string(books.K) + "/" + std::to_string(books.sub_dim);
  return fnv1a64(bytes);
}

struct IndexFiles {
  std::filesystem::path dir;
  std::filesystem::path codebooks() const { return dir / "codebooks.bin"; }
  std::filesystem::path codes() const { return dir / "codes.bin"; }
  std::filesystem::path ids() const { return dir / "ids.bin"; }
  std::filesystem::path encoder() const { return dir / "encoder.bin"; }
  std::filesystem::path manifest() const { return dir / "index.manifest"; }
};

/// Writes the index and the encoder used to build it (queries are raw
/// vectors and need the same encoder). Returns the written paths.
inline std::vector<std::string> save_index(const PQIndex& index, const EncoderParams& encoder,
                                           const std::string& dir) {
  index.validate();
  const IndexFiles f{dir};
  std::error_code ec;
  std::filesystem::create_directories(f.dir, ec);
  if (ec) throw IoError("cannot create index directory " + dir + ": " + ec.message());
  save_codebooks(index.books, f.codebooks().string());
  save_codes(index.codes, f.codes().string());
  save_encoder(encoder, f.encoder().string());
  BinaryWriter w;
  w.magic(kIdsMagic);
  w.u32(static_cast<std::uint32_t>(index.ids.size()));
  for (auto id : index.ids) w.u32(id);
  w.save(f.ids().string());

  std::ofstream out(f.manifest(), std::ios::binary | std::ios::trunc);
  out << "format = 1\n"
      << "count = " << index.size() << "\n"
      << "M = " << index.books.M << "\n"
      << "K = " << index.books.K << "\n"
      << "sub_dim = " << index.books.sub_dim << "\n"
      << "code_bytes = " << index.codes.layout.code_bytes() << "\n"
      << "codebook_hash = " << codebook_fingerprint(index.books) << "\n";
  if (!out) throw IoError("write failed: " + f.manifest().string());
  return {f.codebooks().string(), f.codes().string(), f.ids().string(), f.encoder().string(),
          f.manifest().string()};
}

struct LoadedIndex {
  PQIndex index;
  EncoderParams encoder;
};

inline LoadedIndex load_index(const std::string& dir) {
  const IndexFiles f{dir};
  LoadedIndex out;
  out.index.books = load_codebooks(f.codebooks().string());
  out.index.codes = load_codes(f.codes().string());
  out.encoder = load_encoder(f.encoder().string());
  auto r = BinaryReader::from_file(f.ids().string());
  r.expect_magic(kIdsMagic);
  const std::uint32_t n = r.u32();
  out.index.ids.resize(n);
  for (auto& id : out.index.ids) id = r.u32();
  r.expect_end();

  std::ifstream in(f.manifest());
  if (!in) throw IoError("cannot open " + f.manifest().string());
  std::uint64_t hash = 0;
  std::size_t count = 0;
  bool have_hash = false, have_count = false;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = trim(std::string_view(line).substr(0, eq));
    const std::string value(trim(std::string_view(line).substr(eq + 1)));
    if (key == "codebook_hash") {
      hash = std::stoull(value);
      have_hash = true;
    } else if (key == "count") {
      count = std::stoull(value);
      have_count = true;
    }
  }
  if (!have_hash || !have_count) throw FormatError(f.manifest().string(), 0, "manifest missing count or hash");
  if (count != out.index.size() || hash != codebook_fingerprint(out.index.books)) {
    throw FormatError(f.manifest().string(), 0, "manifest does not match index files");
  }
  if (out.encoder.embedding_dim() != out.index.books.dim()) {
    throw DimensionError("index: encoder output does not match codebook dimension");
  }
  out.index.validate();
  return out;
}

}  // namespace sscq
