// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary container used for checkpoints and inversion bundles.
//
// Layout (little endian):
//   8 bytes  magic "IDEDITCT"
//   u32      format version
//   u32 + n  kind string
//   u64 + n  JSON metadata block
//   u32      tensor count, then per tensor: u32 + n name, u32 rows, u32 cols,
//            rows*cols float32 in column-major order

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace idedit {

inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Eigen::MatrixXf> tensors;

  const Eigen::MatrixXf& tensor(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const Container& c);
/// The exact bytes save_container writes.
std::string container_bytes(const Container& c);
/// Throws FormatError on bad magic, unsupported version or a kind mismatch.
Container load_container(const std::filesystem::path& path, const std::string& expected_kind);

/// Lower-case hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

}  // namespace idedit
