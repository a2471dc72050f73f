// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace dld::synth {

// Single-channel image, row-major, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// Axis-aligned box in high-resolution pixel units.
struct BoxPx {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BoxPx&) const = default;
};

struct TextInstance {
  BoxPx box;
  int glyph_height = 0;
  std::vector<int> tokens;  // alphabet ids only
  bool operator==(const TextInstance&) const = default;
};

// Glyphs shorter than this many pixels after scaling are considered illegible.
inline constexpr double kSubLegiblePixels = 4.0;

inline bool sub_legible(const TextInstance& inst, double scale) {
  return scale * inst.glyph_height < kSubLegiblePixels;
}

struct SpottingSample {
  std::uint64_t seed = 0;
  std::uint32_t sub_seed = 0;
  Image image_hi;
  std::vector<TextInstance> instances;
  // Down-sampled variants keyed by scale, in increasing scale order.
  std::vector<std::pair<double, Image>> images_lo;

  // Stored variant when present, else a fresh area down-sample (1.0 returns image_hi).
  Image image_at(double scale) const;
  const Image* find_scale(double scale) const;
  bool operator==(const SpottingSample&) const = default;
};

}  // namespace dld::synth
