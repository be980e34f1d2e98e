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

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sscq/binary_io.hpp"
#include "sscq/error.hpp"

namespace sscq::cli {

inline constexpr char kToolVersion[] = "1.0.0";

inline std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one CLI invocation: settings, inputs and every produced file
/// with its SHA-256.
class RunManifest {
 public:
  explicit RunManifest(std::string command) {
    doc_["tool"] = "sscq";
    doc_["version"] = kToolVersion;
    doc_["command"] = std::move(command);
    doc_["started_at"] = utc_now();
    doc_["settings"] = nlohmann::json::object();
    doc_["inputs"] = nlohmann::json::array();
    doc_["outputs"] = nlohmann::json::array();
  }

  template <typename T>
  void set(const std::string& key, const T& value) {
    doc_["settings"][key] = value;
  }

  void config(const std::string& rendered) { doc_["config"] = rendered; }

  void input(const std::string& path) {
    doc_["inputs"].push_back({{"path", path}, {"sha256", sha256_file(path)}});
  }

  void output(const std::string& path) {
    doc_["outputs"].push_back({{"path", path}, {"sha256", sha256_file(path)}});
  }

  void outputs(const std::vector<std::string>& paths) {
    for (const auto& p : paths) output(p);
  }

  void write(const std::string& path) {
    doc_["finished_at"] = utc_now();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << doc_.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
  }

 private:
  nlohmann::json doc_;
};

}  // namespace sscq::cli
