// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dld/numcore/ops.hpp"

namespace dld::sel {

using nc::Tensor;

// Floor applied to mixture probabilities before the log.
inline constexpr double kMixtureFloor = 1e-30;

// Accuracy loss for one image. teacher[n] and scaled[i][n] are teacher-forced log-probability
// rows [T_n×V] for instance n (scale i); they are read as constants. h is the straight-through
// selection vector [k]. Returns the mean over (instance, step) rows of KL(teacher ‖ Σ_i h_i·y_i).
template <class T>
Tensor<T> loss_acc(const std::vector<Tensor<T>>& teacher, const std::vector<std::vector<Tensor<T>>>& scaled,
                   const Tensor<T>& h) {
  if (scaled.size() != h.numel()) {
    throw ContractViolation("loss_acc: " + std::to_string(scaled.size()) + " scale branches for " +
                            std::to_string(h.numel()) + " selection weights");
  }
  if (teacher.empty()) throw ContractViolation("loss_acc: no instances");
  std::vector<Tensor<T>> terms;
  int rows = 0;
  for (std::size_t n = 0; n < teacher.size(); ++n) {
    const Tensor<T>& lt = teacher[n];
    Tensor<T> mix;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      if (scaled[i].size() != teacher.size() || scaled[i][n].shape() != lt.shape()) {
        throw ContractViolation("loss_acc: step count mismatch for instance " + std::to_string(n) + " at scale " +
                                std::to_string(i));
      }
      Tensor<T> yi = nc::exp(nc::detach(scaled[i][n]));
      Tensor<T> term = nc::mul(nc::element(h, i), yi);
      mix = mix.defined() ? nc::add(mix, term) : term;
    }
    Tensor<T> log_t = nc::detach(lt);
    Tensor<T> y_t = nc::exp(log_t);
    Tensor<T> log_mix = nc::log(nc::clamp_min(mix, static_cast<T>(kMixtureFloor)));
    terms.push_back(nc::sum(nc::mul(y_t, nc::sub(log_t, log_mix))));
    rows += lt.dim(0);
  }
  Tensor<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = nc::add(total, terms[i]);
  return nc::scale(total, static_cast<T>(1.0 / rows));
}

// Σ_i h_i · T̂_i with T̂ the normalised cost table.
template <class T>
Tensor<T> loss_flops(const Tensor<T>& h, const std::vector<double>& normalized_cost) {
  if (normalized_cost.size() != h.numel()) throw ContractViolation("loss_flops: cost table size differs from h");
  const int k = static_cast<int>(normalized_cost.size());
  std::vector<T> c(normalized_cost.begin(), normalized_cost.end());
  return nc::sum(nc::mul(h, Tensor<T>::from({k}, std::move(c))));
}

template <class T>
Tensor<T> loss_drs(const Tensor<T>& acc, const Tensor<T>& flops, double gamma) {
  if (!(gamma >= 0.0)) throw ContractViolation("loss_drs: gamma must be >= 0");
  return nc::add(acc, nc::scale(flops, static_cast<T>(gamma)));
}

}  // namespace dld::sel
