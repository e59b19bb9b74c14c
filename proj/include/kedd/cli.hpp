// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. `run` does everything except process setup so the
// tests can drive it in-process.

#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace kedd::cli {

/// Bad flags, missing inputs, or an invalid configuration. Exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Masking probabilities compared by `sweep-mask`.
inline const std::vector<double> kMaskGrid = {0.0, 0.05, 0.1, 0.2};

/// `args` excludes the program name. Returns 0 on success, 2 on usage errors,
/// 1 on runtime failures; failures also print one JSON error line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kedd::cli
