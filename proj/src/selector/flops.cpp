// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/selector/flops.hpp"

#include <cmath>

#include "dld/common/error.hpp"
#include "dld/numcore/ops.hpp"
#include "json.hpp"

namespace dld::sel {

namespace {

std::uint64_t u64(long long v) { return static_cast<std::uint64_t>(v); }

}  // namespace

std::uint64_t count_flops(const std::vector<LayerSpec>& layers, FeatureShape input) {
  FeatureShape s = input;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      if (c->in != s.channels) {
        throw ConfigError("count_flops: layer " + std::to_string(i) + " expects " + std::to_string(c->in) +
                          " channels, input has " + std::to_string(s.channels));
      }
      if (c->stride < 1 || c->kernel > s.height + 2 * c->padding || c->kernel > s.width + 2 * c->padding) {
        throw ConfigError("count_flops: layer " + std::to_string(i) + " kernel does not fit " +
                          std::to_string(s.height) + "x" + std::to_string(s.width));
      }
      const int ho = nc::conv_out_extent(s.height, c->kernel, c->stride, c->padding);
      const int wo = nc::conv_out_extent(s.width, c->kernel, c->stride, c->padding);
      total += 2 * u64(c->kernel) * u64(c->kernel) * u64(c->in) * u64(c->out) * u64(ho) * u64(wo);
      s = {c->out, ho, wo};
    } else if (const auto* f = std::get_if<FullyConnectedSpec>(&layer)) {
      total += 2 * u64(f->in) * u64(f->out) * u64(f->rows);
    } else if (const auto* r = std::get_if<RecurrentSpec>(&layer)) {
      total += 2 * (u64(r->input) * u64(r->hidden) + u64(r->hidden) * u64(r->hidden)) * u64(r->gates) *
               u64(r->steps) * u64(r->directions);
    } else if (const auto* a = std::get_if<AttentionSpec>(&layer)) {
      const std::uint64_t per_step = 2 * u64(a->state_dim) * u64(a->attention_dim) +
                                     2 * u64(a->positions) * u64(a->attention_dim) +
                                     2 * u64(a->positions) * u64(a->context_dim);
      total += per_step * u64(a->steps);
    }
  }
  return total;
}

std::vector<LayerSpec> backbone_layers(const rec::RecognizerConfig& cfg) {
  const int strides[4] = {2, 2, 1, 1};
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i < 4; ++i)
    out.emplace_back(ConvSpec{cfg.backbone_channels[i], cfg.backbone_channels[i + 1], 3, strides[i], 1});
  return out;
}

std::vector<LayerSpec> instance_layers(const rec::RecognizerConfig& cfg, int decode_steps) {
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i < 3; ++i) out.emplace_back(ConvSpec{cfg.head_channels[i], cfg.head_channels[i + 1], 3, 1, 1});
  out.emplace_back(RecurrentSpec{cfg.head_channels[3], cfg.hidden, 4, cfg.roi_w, 2});
  const int c = cfg.context_dim();
  out.emplace_back(FullyConnectedSpec{c, cfg.attention_dim, cfg.roi_w});
  out.emplace_back(AttentionSpec{cfg.roi_w, c, cfg.decoder_hidden, cfg.attention_dim, decode_steps});
  out.emplace_back(RecurrentSpec{cfg.embed_dim + c, cfg.decoder_hidden, 4, decode_steps, 1});
  out.emplace_back(FullyConnectedSpec{cfg.decoder_hidden + c, cfg.vocab, decode_steps});
  return out;
}

std::vector<LayerSpec> selector_layers(const SelectorConfig& cfg) {
  std::vector<LayerSpec> out;
  int in = 1;
  for (int i = 0; i < cfg.stages; ++i) {
    out.emplace_back(ConvSpec{in, cfg.channels, 3, 2, 1});
    out.emplace_back(ConvSpec{cfg.channels, cfg.channels, 3, 1, 1});
    in = cfg.channels;
  }
  out.emplace_back(FullyConnectedSpec{cfg.channels, cfg.num_scales});
  return out;
}

std::uint64_t backbone_flops(const rec::RecognizerConfig& cfg, int height, int width) {
  return count_flops(backbone_layers(cfg), {1, height, width});
}

std::uint64_t instance_flops(const rec::RecognizerConfig& cfg, int decode_steps) {
  return count_flops(instance_layers(cfg, decode_steps), {cfg.head_channels[0], cfg.roi_h, cfg.roi_w});
}

std::uint64_t sample_flops(const rec::RecognizerConfig& cfg, const synth::SpottingSample& s, double scale) {
  const int h = static_cast<int>(std::lround(scale * s.image_hi.height));
  const int w = static_cast<int>(std::lround(scale * s.image_hi.width));
  std::uint64_t total = backbone_flops(cfg, h, w);
  for (const auto& inst : s.instances) total += instance_flops(cfg, static_cast<int>(inst.tokens.size()) + 1);
  return total;
}

std::uint64_t selector_flops(const SelectorConfig& cfg, int height, int width) {
  return count_flops(selector_layers(cfg), {1, height, width});
}

double FlopsTable::raw_at(double scale) const {
  for (std::size_t i = 0; i < scales.size(); ++i)
    if (std::abs(scales[i] - scale) < 1e-9) return raw[i];
  throw ConfigError("flops table: no entry for scale " + std::to_string(scale));
}

std::string FlopsTable::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < scales.size(); ++i)
    j.push_back({{"scale", scales[i]}, {"raw_flops", raw[i]}, {"normalized", normalized[i]}});
  return nlohmann::json{{"entries", j}}.dump(2);
}

FlopsTable FlopsTable::from_json(const std::string& text) {
  FlopsTable t;
  try {
    auto j = nlohmann::json::parse(text);
    for (const auto& e : j.at("entries")) {
      t.scales.push_back(e.at("scale").get<double>());
      t.raw.push_back(e.at("raw_flops").get<double>());
      t.normalized.push_back(e.at("normalized").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("flops table: ") + e.what());
  }
  return t;
}

FlopsTable precompute_table(const rec::RecognizerConfig& cfg, const std::vector<synth::SpottingSample>& samples,
                            const std::vector<double>& scales) {
  if (samples.empty()) throw ConfigError("precompute_table: empty dataset");
  FlopsTable t;
  t.scales = scales;
  for (double s : scales) {
    long double acc = 0;
    for (const auto& sample : samples) acc += static_cast<long double>(sample_flops(cfg, sample, s));
    t.raw.push_back(static_cast<double>(acc / samples.size()));
  }
  for (std::size_t i = 1; i < t.raw.size(); ++i) {
    if (!(t.raw[i] > t.raw[i - 1])) throw ConfigError("precompute_table: cost is not strictly increasing in scale");
  }
  const double top = t.raw.back();
  for (double r : t.raw) t.normalized.push_back(r / top);
  return t;
}

}  // namespace dld::sel
