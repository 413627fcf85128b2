// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace idedit {

/// Non-finite value in a loss or latent; `where` is the step or timestep.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, int where)
      : std::runtime_error(what + " at " + std::to_string(where)), where_(where) {}
  int where() const { return where_; }

 private:
  int where_;
};

/// A required upstream artifact is missing or does not match its provenance chain.
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace idedit
