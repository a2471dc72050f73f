// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dld/synthtext/font.hpp"

namespace dld::rec {

inline std::vector<int> strip_eos(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (t == synth::kEos) break;
    out.push_back(t);
  }
  return out;
}

// 1 on exact full-sequence match after stripping EOS, else 0.
inline int sequence_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  return strip_eos(pred) == strip_eos(gt) ? 1 : 0;
}

// Mean of per-instance indicators; 0 for an empty set.
inline double aggregate_accuracy(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gts) {
  if (preds.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += sequence_accuracy(preds[i], gts.at(i));
  return hits / static_cast<double>(preds.size());
}

}  // namespace dld::rec
