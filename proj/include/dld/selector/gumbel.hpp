// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dld/common/random.hpp"
#include "dld/numcore/ops.hpp"

namespace dld::sel {

using nc::Tensor;

inline constexpr double kProbabilityFloor = 1e-12;

// τ(epoch) = σ^epoch · τ_init.
inline double temperature(int epoch, double tau_init = 5.0, double sigma = 0.965) {
  if (epoch < 0) throw ContractViolation("temperature: epoch must be >= 0");
  return std::pow(sigma, epoch) * tau_init;
}

struct SelectionDecision {
  std::vector<double> p;
  std::vector<double> gumbel;
  std::vector<double> h_soft;
  std::vector<double> h_hard;
  double tau = 0.0;
  int chosen = -1;
};

template <class T>
struct GumbelSample {
  Tensor<T> h_soft;  // relaxed weights, differentiable w.r.t. p
  Tensor<T> h;       // straight-through: values of the one-hot, gradient of h_soft
  SelectionDecision decision;
};

// Gumbel noise g = −log(−log u), u ~ Uniform(0, 1) with both endpoints excluded.
inline std::vector<double> draw_gumbel(std::size_t k, Pcg32& rng) {
  std::vector<double> g(k);
  for (auto& x : g) x = -std::log(-std::log(rng.uniform_open()));
  return g;
}

template <class T>
GumbelSample<T> gumbel_sample(const Tensor<T>& p, double tau, Pcg32& rng) {
  if (!(tau > 0.0)) throw ContractViolation("gumbel_sample: temperature must be > 0");
  if (p.rank() != 1) throw ShapeError("gumbel_sample: p must be a vector, got " + nc::to_string(p.shape()));
  const std::size_t k = p.numel();
  GumbelSample<T> out;
  auto& d = out.decision;
  d.tau = tau;
  d.p.assign(p.data().begin(), p.data().end());
  d.gumbel = draw_gumbel(k, rng);

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const double score = std::log(std::max(d.p[i], kProbabilityFloor)) + d.gumbel[i];
    if (score > best) {
      best = score;
      d.chosen = static_cast<int>(i);
    }
  }
  std::vector<T> g(d.gumbel.begin(), d.gumbel.end());
  Tensor<T> perturbed = nc::add(nc::log(nc::clamp_min(p, static_cast<T>(kProbabilityFloor))),
                                Tensor<T>::from({static_cast<int>(k)}, std::move(g)));
  out.h_soft = nc::softmax(nc::scale(perturbed, static_cast<T>(1.0 / tau)), 0);
  d.h_soft.assign(out.h_soft.data().begin(), out.h_soft.data().end());
  d.h_hard.assign(k, 0.0);
  d.h_hard[static_cast<std::size_t>(d.chosen)] = 1.0;
  std::vector<T> hard(d.h_hard.begin(), d.h_hard.end());
  out.h = nc::straight_through(Tensor<T>::from({static_cast<int>(k)}, std::move(hard)), out.h_soft);
  return out;
}

template <class T>
GumbelSample<T> gumbel_sample(const Tensor<T>& p, double tau, std::uint64_t seed) {
  Pcg32 rng(seed, 0x67756dULL);
  return gumbel_sample(p, tau, rng);
}

inline int argmax(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace dld::sel
