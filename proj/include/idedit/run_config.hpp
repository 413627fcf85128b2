// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: built-in defaults, overridden by a `key = value` file,
// overridden by command line flags. Every key is known in advance.

#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace idedit {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RunConfig {
 public:
  /// All keys at their built-in defaults.
  RunConfig();

  /// Lines are `key = value`; `#` starts a comment; blank lines are skipped.
  void load_file(const std::filesystem::path& path);
  /// Throws ConfigError for an unknown key or a value that does not parse.
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;  // comma separated
  std::uint64_t seed() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Sorted `key = value` lines, re-loadable with load_file.
  std::string resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

 private:
  enum class Type { text, integer, real, boolean, real_list };
  std::map<std::string, std::string> values_;
  std::map<std::string, Type> types_;
};

}  // namespace idedit
