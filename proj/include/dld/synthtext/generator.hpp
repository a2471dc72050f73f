// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dld/common/random.hpp"
#include "dld/synthtext/sample.hpp"

namespace dld::synth {

struct GenConfig {
  std::uint64_t seed = 42;
  int num_samples = 2000;
  int num_eval_samples = 400;
  std::vector<double> scales{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::pair<int, int> instance_count_range{1, 4};
  std::pair<int, int> glyph_height_range{8, 32};
  double noise_amplitude = 0.1;
  int canvas_size = 192;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

inline constexpr int kPlacementAttempts = 100;
inline constexpr int kMinTextLength = 3;
inline constexpr int kMaxTextLength = 8;

int glyph_width(int glyph_height);
int glyph_spacing(int glyph_height);
int run_width(int glyph_height, int length);

// Nearest-neighbour blit of an instance's glyph run into its box (ink value 1).
void blit_text(Image& canvas, const TextInstance& inst);

// Exact area-weighted down-sampling to round(scale·H) × round(scale·W).
Image area_downsample(const Image& image, double scale);

// Deterministic scene for a per-sample seed.
SpottingSample render_sample(std::uint64_t seed, const GenConfig& config);

// JSON with keys seed, num_samples, scales, instance_count_range, glyph_height_range,
// noise_amplitude (required) and num_eval_samples, canvas_size (optional).
GenConfig parse_gen_config(const std::string& json_text);
std::string gen_config_to_json(const GenConfig& config);

std::uint64_t sample_seed(const GenConfig& config, const std::string& split, int index);
std::vector<SpottingSample> generate_split(const GenConfig& config, const std::string& split, int count);

}  // namespace dld::synth
