// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "dld/numcore/tensor.hpp"

namespace dld::nc {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay Adam over one parameter group.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_data();
      auto g = params_[k].mutable_grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * opts_.weight_decay * wi;
        wi -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

  const std::vector<Tensor<T>>& params() const { return params_; }
  long steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace dld::nc
