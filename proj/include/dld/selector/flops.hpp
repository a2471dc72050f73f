// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dld/recognizer/model.hpp"
#include "dld/selector/selector.hpp"
#include "dld/synthtext/sample.hpp"

namespace dld::sel {

// Layer descriptions for analytic cost counting. FLOPs = 2 per multiply-accumulate;
// nonlinearities, pooling and additions are excluded.
struct ConvSpec {
  int in, out, kernel, stride, padding;
};
struct FullyConnectedSpec {
  int in, out;
  int rows = 1;  // applied independently to this many vectors
};
struct RecurrentSpec {
  int input, hidden, gates, steps, directions;
};
// Additive attention step: state projection, per-position energy, weighted context.
struct AttentionSpec {
  int positions, context_dim, state_dim, attention_dim, steps;
};
using LayerSpec = std::variant<ConvSpec, FullyConnectedSpec, RecurrentSpec, AttentionSpec>;

struct FeatureShape {
  int channels, height, width;
};

// Convolutions are chained spatially starting from `input`; other layers carry their own sizes.
std::uint64_t count_flops(const std::vector<LayerSpec>& layers, FeatureShape input);

std::vector<LayerSpec> backbone_layers(const rec::RecognizerConfig& cfg);
// Recognition branch for one instance decoded for `decode_steps` steps.
std::vector<LayerSpec> instance_layers(const rec::RecognizerConfig& cfg, int decode_steps);
std::vector<LayerSpec> selector_layers(const SelectorConfig& cfg);

std::uint64_t backbone_flops(const rec::RecognizerConfig& cfg, int height, int width);
std::uint64_t instance_flops(const rec::RecognizerConfig& cfg, int decode_steps);
// Backbone at round(scale·H) plus every instance decoded for len+1 steps.
std::uint64_t sample_flops(const rec::RecognizerConfig& cfg, const synth::SpottingSample& s, double scale);
std::uint64_t selector_flops(const SelectorConfig& cfg, int height, int width);

struct FlopsTable {
  std::vector<double> scales;
  std::vector<double> raw;         // mean FLOPs per image
  std::vector<double> normalized;  // raw / max(raw)

  double raw_at(double scale) const;
  std::string to_json() const;
  static FlopsTable from_json(const std::string& text);
};

FlopsTable precompute_table(const rec::RecognizerConfig& cfg, const std::vector<synth::SpottingSample>& samples,
                            const std::vector<double>& scales);

}  // namespace dld::sel
