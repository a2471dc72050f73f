// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dld/numcore/layers.hpp"

namespace dld::sel {

using nc::Tensor;

// Candidate down-sampling factors, strictly increasing in (0, 1].
class ScaleSet {
 public:
  ScaleSet() : ScaleSet(std::vector<double>{0.3, 0.4, 0.5, 0.6, 0.7, 0.8}) {}
  explicit ScaleSet(std::vector<double> scales) : scales_(std::move(scales)) {
    if (scales_.empty()) throw ConfigError("scales: at least one candidate scale is required");
    for (std::size_t i = 0; i < scales_.size(); ++i) {
      if (!(scales_[i] > 0.0 && scales_[i] <= 1.0)) throw ConfigError("scales: entries must lie in (0, 1]");
      if (i > 0 && !(scales_[i] > scales_[i - 1])) throw ConfigError("scales: must be strictly increasing");
    }
  }
  std::size_t size() const { return scales_.size(); }
  double operator[](std::size_t i) const { return scales_.at(i); }
  double smallest() const { return scales_.front(); }
  const std::vector<double>& values() const { return scales_; }
  int index_of(double s) const {
    for (std::size_t i = 0; i < scales_.size(); ++i)
      if (std::abs(scales_[i] - s) < 1e-9) return static_cast<int>(i);
    return -1;
  }

 private:
  std::vector<double> scales_;
};

struct SelectorConfig {
  int channels = 8;
  int stages = 5;  // each stage: stride-2 conv then stride-1 conv with a residual add
  int num_scales = 6;
};

// Lightweight residual CNN → global average pool → FC to one logit per candidate scale.
template <class T>
struct Selector {
  SelectorConfig config;
  std::vector<nc::ConvLayer<T>> convs;  // 2 per stage
  Tensor<T> fc_w;                       // [C, k]
  Tensor<T> fc_b;                       // [k]

  static Selector init(const SelectorConfig& cfg, std::uint64_t seed) {
    Pcg32 rng(seed, 0x73656cULL);
    Selector s;
    s.config = cfg;
    int in = 1;
    for (int i = 0; i < cfg.stages; ++i) {
      s.convs.push_back(nc::ConvLayer<T>::init(in, cfg.channels, 3, 2, 1, rng));
      s.convs.push_back(nc::ConvLayer<T>::init(cfg.channels, cfg.channels, 3, 1, 1, rng));
      in = cfg.channels;
    }
    s.fc_w = nc::uniform_parameter<T>({cfg.channels, cfg.num_scales},
                                      std::sqrt(6.0 / (cfg.channels + cfg.num_scales)), rng);
    s.fc_b = Tensor<T>::zeros({cfg.num_scales}, true);
    return s;
  }

  nc::NamedTensors<T> named_parameters() const {
    nc::NamedTensors<T> out;
    for (std::size_t i = 0; i < convs.size(); ++i) nc::append_conv(out, "selector.conv." + std::to_string(i), convs[i]);
    out.emplace_back("selector.fc.weight", fc_w);
    out.emplace_back("selector.fc.bias", fc_b);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.second);
    return out;
  }

  void zero_grad() const {
    for (auto t : parameters()) t.zero_grad();
  }
};

template <class T>
Tensor<T> selector_logits(const Selector<T>& s, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("selector: expected [1,H,W], got " + nc::to_string(image.shape()));
  }
  Tensor<T> x = image;
  for (std::size_t i = 0; i + 1 < s.convs.size(); i += 2) {
    Tensor<T> y = nc::relu(s.convs[i](x));
    x = nc::relu(nc::add(y, s.convs[i + 1](y)));
  }
  Tensor<T> pooled = nc::reshape(nc::reduce(nc::ReduceKind::mean, x, {1, 2}), {1, s.config.channels});
  return nc::reshape(nc::add_bias(nc::matmul(pooled, s.fc_w), s.fc_b), {s.config.num_scales});
}

// Probability vector p over candidate scales for the (smallest-scale) image.
template <class T>
Tensor<T> drs_forward(const Selector<T>& s, const Tensor<T>& image_lo) {
  return nc::softmax(selector_logits(s, image_lo), 0);
}

}  // namespace dld::sel
