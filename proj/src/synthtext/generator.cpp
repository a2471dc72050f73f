// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/synthtext/generator.hpp"

#include <algorithm>
#include <cmath>

#include "dld/common/error.hpp"
#include "dld/synthtext/font.hpp"
#include "json.hpp"

namespace dld::synth {

namespace {

struct AreaTap {
  int src;
  double weight;
};

// Source cells covering each output cell and their fractional areas (summing to 1).
std::vector<std::vector<AreaTap>> area_taps(int in, int out) {
  std::vector<std::vector<AreaTap>> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double lo = i * ratio;
    const double hi = (i + 1) * ratio;
    for (int s = static_cast<int>(std::floor(lo)); s < in && s < hi; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) taps[static_cast<std::size_t>(i)].push_back({s, overlap / ratio});
    }
  }
  return taps;
}

bool boxes_touch(const BoxPx& a, const BoxPx& b, int gap) {
  return a.x < b.x + b.w + gap && b.x < a.x + a.w + gap && a.y < b.y + b.h + gap && b.y < a.y + a.h + gap;
}

}  // namespace

void GenConfig::validate() const {
  if (num_samples < 1) throw ConfigError("num_samples: must be >= 1");
  if (num_eval_samples < 0) throw ConfigError("num_eval_samples: must be >= 0");
  if (scales.empty()) throw ConfigError("scales: must not be empty");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0 && scales[i] <= 1.0)) throw ConfigError("scales: entries must lie in (0, 1]");
    if (i > 0 && !(scales[i] > scales[i - 1])) throw ConfigError("scales: must be strictly increasing");
  }
  if (instance_count_range.first < 1 || instance_count_range.second < instance_count_range.first ||
      instance_count_range.second > 4) {
    throw ConfigError("instance_count_range: must satisfy 1 <= lo <= hi <= 4");
  }
  if (glyph_height_range.first < 8 || glyph_height_range.second < glyph_height_range.first ||
      glyph_height_range.second > 32) {
    throw ConfigError("glyph_height_range: must satisfy 8 <= lo <= hi <= 32");
  }
  if (!(noise_amplitude >= 0.0 && noise_amplitude <= 0.1)) throw ConfigError("noise_amplitude: must lie in [0, 0.1]");
  if (canvas_size < 64) throw ConfigError("canvas_size: must be >= 64");
}

GenConfig parse_gen_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const char* key :
       {"seed", "num_samples", "scales", "instance_count_range", "glyph_height_range", "noise_amplitude"}) {
    if (!j.contains(key)) throw ConfigError(std::string(key) + ": missing required key");
  }
  GenConfig c;
  auto field = [&](const char* key, auto& dst) {
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type");
    }
  };
  field("seed", c.seed);
  field("num_samples", c.num_samples);
  field("scales", c.scales);
  std::vector<int> range;
  field("instance_count_range", range);
  if (range.size() != 2) throw ConfigError("instance_count_range: expected [lo, hi]");
  c.instance_count_range = {range[0], range[1]};
  field("glyph_height_range", range);
  if (range.size() != 2) throw ConfigError("glyph_height_range: expected [lo, hi]");
  c.glyph_height_range = {range[0], range[1]};
  field("noise_amplitude", c.noise_amplitude);
  if (j.contains("num_eval_samples")) field("num_eval_samples", c.num_eval_samples);
  if (j.contains("canvas_size")) field("canvas_size", c.canvas_size);
  c.validate();
  return c;
}

std::string gen_config_to_json(const GenConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["num_samples"] = c.num_samples;
  j["num_eval_samples"] = c.num_eval_samples;
  j["scales"] = c.scales;
  j["instance_count_range"] = {c.instance_count_range.first, c.instance_count_range.second};
  j["glyph_height_range"] = {c.glyph_height_range.first, c.glyph_height_range.second};
  j["noise_amplitude"] = c.noise_amplitude;
  j["canvas_size"] = c.canvas_size;
  return j.dump(2);
}

int glyph_width(int glyph_height) {
  return std::max(1, static_cast<int>(std::lround(glyph_height * static_cast<double>(kGlyphCols) / kGlyphRows)));
}

int glyph_spacing(int glyph_height) {
  return std::max(1, static_cast<int>(std::lround(glyph_height / static_cast<double>(kGlyphRows))));
}

int run_width(int glyph_height, int length) {
  return length * glyph_width(glyph_height) + (length - 1) * glyph_spacing(glyph_height);
}

void blit_text(Image& canvas, const TextInstance& inst) {
  const auto& font = GlyphFont::instance();
  const int g = inst.glyph_height;
  const int gw = glyph_width(g);
  const int sp = glyph_spacing(g);
  for (std::size_t k = 0; k < inst.tokens.size(); ++k) {
    const int x0 = inst.box.x + static_cast<int>(k) * (gw + sp);
    for (int r = 0; r < g; ++r) {
      const int br = r * kGlyphRows / g;
      for (int c = 0; c < gw; ++c) {
        const int bc = c * kGlyphCols / gw;
        if (font.pixel(inst.tokens[k], br, bc)) canvas.at(inst.box.y + r, x0 + c) = 1.0f;
      }
    }
  }
}

Image area_downsample(const Image& image, double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("area_downsample: scale must lie in (0, 1]");
  const int oh = static_cast<int>(std::lround(scale * image.height));
  const int ow = static_cast<int>(std::lround(scale * image.width));
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("area_downsample: scale " + std::to_string(scale) + " yields an empty image");
  }
  const auto ty = area_taps(image.height, oh);
  const auto tx = area_taps(image.width, ow);
  std::vector<double> rows(static_cast<std::size_t>(oh) * image.width, 0.0);
  for (int i = 0; i < oh; ++i)
    for (const auto& t : ty[static_cast<std::size_t>(i)])
      for (int x = 0; x < image.width; ++x)
        rows[static_cast<std::size_t>(i) * image.width + x] += t.weight * image.at(t.src, x);
  Image out(oh, ow);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (const auto& t : tx[static_cast<std::size_t>(j)])
        acc += t.weight * rows[static_cast<std::size_t>(i) * image.width + t.src];
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

const Image* SpottingSample::find_scale(double scale) const {
  for (const auto& [s, img] : images_lo)
    if (std::abs(s - scale) < 1e-9) return &img;
  return nullptr;
}

Image SpottingSample::image_at(double scale) const {
  if (std::abs(scale - 1.0) < 1e-12) return image_hi;
  if (const Image* img = find_scale(scale)) return *img;
  return area_downsample(image_hi, scale);
}

SpottingSample render_sample(std::uint64_t seed, const GenConfig& config) {
  const int canvas = config.canvas_size;
  for (std::uint32_t sub = 0;; ++sub) {
    Pcg32 rng(seed, sub);
    SpottingSample s;
    s.seed = seed;
    s.sub_seed = sub;
    const int count = rng.uniform_int(config.instance_count_range.first, config.instance_count_range.second);
    bool placed_all = true;
    for (int n = 0; n < count && placed_all; ++n) {
      TextInstance inst;
      inst.glyph_height = rng.uniform_int(config.glyph_height_range.first, config.glyph_height_range.second);
      int max_len = kMaxTextLength;
      while (max_len > kMinTextLength && run_width(inst.glyph_height, max_len) > canvas) --max_len;
      const int len = rng.uniform_int(kMinTextLength, max_len);
      for (int k = 0; k < len; ++k) inst.tokens.push_back(rng.uniform_int(0, kNumSymbols - 1));
      inst.box.w = run_width(inst.glyph_height, len);
      inst.box.h = inst.glyph_height;
      bool ok = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
        inst.box.x = rng.uniform_int(0, canvas - inst.box.w);
        inst.box.y = rng.uniform_int(0, canvas - inst.box.h);
        ok = std::none_of(s.instances.begin(), s.instances.end(),
                          [&](const TextInstance& other) { return boxes_touch(inst.box, other.box, 2); });
      }
      if (ok) {
        s.instances.push_back(std::move(inst));
      } else {
        placed_all = false;
      }
    }
    if (!placed_all) continue;

    s.image_hi = Image(canvas, canvas);
    for (const auto& inst : s.instances) blit_text(s.image_hi, inst);
    if (config.noise_amplitude > 0.0) {
      for (auto& p : s.image_hi.pixels) {
        const double v = p + rng.uniform(-config.noise_amplitude, config.noise_amplitude);
        p = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    for (double scale : config.scales) s.images_lo.emplace_back(scale, area_downsample(s.image_hi, scale));
    return s;
  }
}

std::uint64_t sample_seed(const GenConfig& config, const std::string& split, int index) {
  return derive_seed(config.seed, split, static_cast<std::uint64_t>(index));
}

std::vector<SpottingSample> generate_split(const GenConfig& config, const std::string& split, int count) {
  std::vector<SpottingSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(render_sample(sample_seed(config, split, i), config));
  return out;
}

}  // namespace dld::synth
