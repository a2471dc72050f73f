// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dld::nc {

struct SuiteEntry {
  std::string name;
  int seeds = 0;
  double max_rel_error = 0.0;
  bool ok = true;
  std::string message;  // first failure, if any
};

inline constexpr double kSuiteEps = 1e-3;
inline constexpr double kSuiteTol = 1e-4;
// Absolute agreement floor for the end-to-end recognizer case only.
inline constexpr double kSuiteRoundoffFloor = 1e-9;

// Finite-difference verification of every differentiable op and of the composed recognizer,
// selector and loss pipelines, in 64-bit, over `seeds` seeded inputs each.
std::vector<SuiteEntry> run_gradcheck_suite(int seeds = 5, std::uint64_t base_seed = 1);

}  // namespace dld::nc
