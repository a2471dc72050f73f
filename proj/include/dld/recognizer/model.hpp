// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dld/numcore/layers.hpp"
#include "dld/synthtext/font.hpp"
#include "dld/synthtext/sample.hpp"

namespace dld::rec {

using nc::Tensor;

struct RecognizerConfig {
  // Backbone: 4 convs 3×3, strides 2, 2, 1, 1 (overall stride 4).
  std::array<int, 5> backbone_channels{1, 16, 32, 32, 32};
  // Recognition head: 3 convs 3×3, stride 1, on the RoI.
  std::array<int, 4> head_channels{32, 64, 64, 64};
  int hidden = 64;  // per encoder direction
  int decoder_hidden = 128;
  int attention_dim = 64;
  int embed_dim = 32;
  int vocab = synth::kVocabSize;
  int roi_h = 8;
  int roi_w = 32;
  int max_decode_len = 12;  // tokens including EOS

  int context_dim() const { return 2 * hidden; }

  // Tiny widths for finite-difference checks of the composed network.
  static RecognizerConfig downsized() {
    RecognizerConfig c;
    c.backbone_channels = {1, 2, 2, 2, 2};
    c.head_channels = {2, 3, 3, 3};
    c.hidden = 3;
    c.decoder_hidden = 4;
    c.attention_dim = 3;
    c.embed_dim = 2;
    c.roi_h = 2;
    c.roi_w = 4;
    return c;
  }
};

inline constexpr int kBackboneStride = 4;

template <class T>
struct Recognizer {
  RecognizerConfig config;
  std::vector<nc::ConvLayer<T>> backbone;
  std::vector<nc::ConvLayer<T>> head;
  nc::LstmLayer<T> encoder_fwd, encoder_bwd;
  Tensor<T> embed;       // [V, E]
  Tensor<T> att_state;   // [Hd, A]
  Tensor<T> att_ctx;     // [C, A]
  Tensor<T> att_bias;    // [A]
  Tensor<T> att_v;       // [A, 1]
  nc::LstmLayer<T> decoder;  // input E + C
  Tensor<T> out_w;       // [Hd + C, V]
  Tensor<T> out_b;       // [V]

  static Recognizer init(const RecognizerConfig& cfg, std::uint64_t seed) {
    Pcg32 rng(seed, 0x7265636f67ULL);
    Recognizer m;
    m.config = cfg;
    const auto& bc = cfg.backbone_channels;
    const int strides[4] = {2, 2, 1, 1};
    for (int i = 0; i < 4; ++i)
      m.backbone.push_back(nc::ConvLayer<T>::init(bc[static_cast<std::size_t>(i)], bc[static_cast<std::size_t>(i) + 1], 3,
                                                   strides[i], 1, rng));
    const auto& hc = cfg.head_channels;
    for (int i = 0; i < 3; ++i)
      m.head.push_back(nc::ConvLayer<T>::init(hc[static_cast<std::size_t>(i)], hc[static_cast<std::size_t>(i) + 1], 3, 1, 1, rng));
    m.encoder_fwd = nc::LstmLayer<T>::init(hc[3], cfg.hidden, rng);
    m.encoder_bwd = nc::LstmLayer<T>::init(hc[3], cfg.hidden, rng);
    const int c = cfg.context_dim();
    const int a = cfg.attention_dim;
    const int hd = cfg.decoder_hidden;
    m.embed = nc::uniform_parameter<T>({cfg.vocab, cfg.embed_dim}, 0.1, rng);
    m.att_state = nc::uniform_parameter<T>({hd, a}, std::sqrt(6.0 / (hd + a)), rng);
    m.att_ctx = nc::uniform_parameter<T>({c, a}, std::sqrt(6.0 / (c + a)), rng);
    m.att_bias = Tensor<T>::zeros({a}, true);
    m.att_v = nc::uniform_parameter<T>({a, 1}, std::sqrt(6.0 / (a + 1)), rng);
    m.decoder = nc::LstmLayer<T>::init(cfg.embed_dim + c, hd, rng);
    m.out_w = nc::uniform_parameter<T>({hd + c, cfg.vocab}, std::sqrt(6.0 / (hd + c + cfg.vocab)), rng);
    m.out_b = Tensor<T>::zeros({cfg.vocab}, true);
    return m;
  }

  nc::NamedTensors<T> named_parameters() const {
    nc::NamedTensors<T> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) nc::append_conv(out, "backbone." + std::to_string(i), backbone[i]);
    for (std::size_t i = 0; i < head.size(); ++i) nc::append_conv(out, "head." + std::to_string(i), head[i]);
    nc::append_lstm(out, "encoder.fwd", encoder_fwd);
    nc::append_lstm(out, "encoder.bwd", encoder_bwd);
    out.emplace_back("decoder.embed", embed);
    out.emplace_back("decoder.att_state", att_state);
    out.emplace_back("decoder.att_ctx", att_ctx);
    out.emplace_back("decoder.att_bias", att_bias);
    out.emplace_back("decoder.att_v", att_v);
    nc::append_lstm(out, "decoder.lstm", decoder);
    out.emplace_back("decoder.out_w", out_w);
    out.emplace_back("decoder.out_b", out_b);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.second);
    return out;
  }

  // Independent copy with fresh parameter leaves.
  Recognizer clone() const {
    Recognizer m = init(config, 0);
    nc::copy_values(m.named_parameters(), named_parameters());
    return m;
  }

  void zero_grad() const {
    for (auto t : parameters()) t.zero_grad();
  }

  void set_requires_grad(bool on) const {
    for (auto t : parameters()) t.set_requires_grad(on);
  }
};

template <class T>
Tensor<T> image_tensor(const synth::Image& img) {
  std::vector<T> v(img.pixels.begin(), img.pixels.end());
  return Tensor<T>::from({1, img.height, img.width}, std::move(v));
}

// image[1×H×W] → features[C×⌈H/4⌉×⌈W/4⌉].
template <class T>
Tensor<T> backbone_forward(const Recognizer<T>& m, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("backbone_forward: expected [1,H,W], got " + nc::to_string(image.shape()));
  }
  if (image.dim(1) < 8 || image.dim(2) < 8) {
    throw ShapeError("backbone_forward: image " + nc::to_string(image.shape()) + " smaller than 8×8");
  }
  Tensor<T> x = image;
  for (const auto& layer : m.backbone) x = nc::relu(layer(x));
  return x;
}

template <class T>
struct RoiFeature {
  Tensor<T> tensor;  // [C, roi_h, roi_w]
  bool clamped = false;
};

// Maps a high-res box into feature coordinates (factor image_scale / 4) and resamples to roi_h×roi_w.
template <class T>
RoiFeature<T> roi_crop(const Tensor<T>& features, const synth::BoxPx& box, double image_scale, int roi_h, int roi_w) {
  const double f = image_scale / kBackboneStride;
  double y0 = box.y * f, y1 = (box.y + box.h) * f;
  double x0 = box.x * f, x1 = (box.x + box.w) * f;
  RoiFeature<T> out;
  if (y1 - y0 < 1.0) {
    const double c = 0.5 * (y0 + y1);
    y0 = c - 0.5;
    y1 = c + 0.5;
    out.clamped = true;
  }
  if (x1 - x0 < 1.0) {
    const double c = 0.5 * (x0 + x1);
    x0 = c - 0.5;
    x1 = c + 0.5;
    out.clamped = true;
  }
  out.tensor = nc::roi_align(features, nc::Box{y0, x0, y1, x1}, roi_h, roi_w);
  return out;
}

// Recognition convs → mean over height → bidirectional LSTM. Returns [roi_w × 2·hidden].
template <class T>
Tensor<T> encode_context(const Recognizer<T>& m, const Tensor<T>& roi) {
  const auto& cfg = m.config;
  if (roi.rank() != 3 || roi.dim(0) != cfg.head_channels[0] || roi.dim(1) != cfg.roi_h || roi.dim(2) != cfg.roi_w) {
    throw ShapeError("encode_context: RoI feature " + nc::to_string(roi.shape()) + " does not match config");
  }
  Tensor<T> x = roi;
  for (const auto& layer : m.head) x = nc::relu(layer(x));
  Tensor<T> seq = nc::transpose(nc::reduce(nc::ReduceKind::mean, x, {1}));  // [W, C]
  return nc::concat_cols<T>({m.encoder_fwd.run(seq, false), m.encoder_bwd.run(seq, true)});
}

// Attention decoder with the context projection cached per instance.
template <class T>
class AttentionDecoder {
 public:
  struct State {
    Tensor<T> h, c;  // [1, Hd]
  };

  AttentionDecoder(const Recognizer<T>& m, Tensor<T> ctx) : m_(m), ctx_(std::move(ctx)) {
    const int expected = m.config.context_dim();
    if (ctx_.rank() != 2 || ctx_.dim(1) != expected) {
      throw ShapeError("decoder: context " + nc::to_string(ctx_.shape()) + " does not have width " +
                       std::to_string(expected));
    }
    ctx_proj_ = nc::add_bias(nc::matmul(ctx_, m.att_ctx), m.att_bias);
  }

  State initial_state() const {
    const int hd = m_.config.decoder_hidden;
    return {Tensor<T>::zeros({1, hd}), Tensor<T>::zeros({1, hd})};
  }

  // One step from the embedding of the previous token; returns the output feature [1, Hd + C].
  Tensor<T> step(const Tensor<T>& emb, State& s) const {
    Tensor<T> energy = nc::tanh(nc::add_bias(ctx_proj_, nc::matmul(s.h, m_.att_state)));
    Tensor<T> scores = nc::reshape(nc::matmul(energy, m_.att_v), {1, ctx_.dim(0)});
    Tensor<T> alpha = nc::softmax(scores, 1);
    Tensor<T> context = nc::matmul(alpha, ctx_);
    Tensor<T> x = nc::concat_cols<T>({emb, context});
    Tensor<T> gates = nc::add_bias(nc::add(nc::matmul(x, m_.decoder.w_ih), nc::matmul(s.h, m_.decoder.w_hh)),
                                   m_.decoder.bias);
    const int hd = m_.config.decoder_hidden;
    Tensor<T> hc = nc::lstm_cell(gates, s.c);
    s.h = nc::slice_cols(hc, 0, hd);
    s.c = nc::slice_cols(hc, hd, hd);
    return nc::concat_cols<T>({s.h, context});
  }

  Tensor<T> logits(const Tensor<T>& features) const { return nc::add_bias(nc::matmul(features, m_.out_w), m_.out_b); }

  // Log-probabilities of the next token after `prev`, advancing `s`.
  std::vector<double> next_log_probs(State& s, int prev) const {
    Tensor<T> feat = step(nc::gather_rows(m_.embed, {prev}), s);
    Tensor<T> lp = nc::log_softmax(logits(feat), 1);
    return std::vector<double>(lp.data().begin(), lp.data().end());
  }

  const Recognizer<T>& model() const { return m_; }

 private:
  const Recognizer<T>& m_;
  Tensor<T> ctx_;
  Tensor<T> ctx_proj_;
};

inline void check_target(const std::vector<int>& target, int max_decode_len) {
  if (static_cast<int>(target.size()) > max_decode_len - 1) {
    throw ContractViolation("decode_teacher_forced: target length " + std::to_string(target.size()) + " exceeds " +
                            std::to_string(max_decode_len - 1));
  }
  for (int t : target) {
    if (!synth::is_symbol(t)) throw ContractViolation("decode_teacher_forced: invalid token id " + std::to_string(t));
  }
}

// Step distributions conditioned on BOS + target prefix: log-probabilities [len(target)+1, V].
// The last row scores EOS.
template <class T>
Tensor<T> decode_teacher_forced(const Recognizer<T>& m, const Tensor<T>& ctx, const std::vector<int>& target) {
  check_target(target, m.config.max_decode_len);
  AttentionDecoder<T> dec(m, ctx);
  std::vector<int> inputs{synth::kBos};
  inputs.insert(inputs.end(), target.begin(), target.end());
  Tensor<T> emb = nc::gather_rows(m.embed, inputs);
  auto state = dec.initial_state();
  std::vector<Tensor<T>> feats;
  for (int t = 0; t < static_cast<int>(inputs.size()); ++t) feats.push_back(dec.step(nc::slice_rows(emb, t, 1), state));
  return nc::log_softmax(dec.logits(nc::concat_rows(feats)), 1);
}

// Targets for teacher-forced rows: the transcription followed by EOS.
inline std::vector<int> with_eos(const std::vector<int>& target) {
  std::vector<int> out(target);
  out.push_back(synth::kEos);
  return out;
}

// Σ_t −log p(target_t) including the EOS step.
template <class T>
Tensor<T> sequence_nll(const Tensor<T>& log_probs, const std::vector<int>& target) {
  return nc::scale(nc::sum(nc::pick(log_probs, with_eos(target))), T{-1});
}

// Argmax decoding; stops after EOS or max_len tokens. EOS is kept in the output when emitted.
template <class T>
std::vector<int> greedy_decode(const Recognizer<T>& m, const Tensor<T>& ctx, int max_len = 12) {
  nc::NoGradGuard<T> guard;
  AttentionDecoder<T> dec(m, ctx);
  auto state = dec.initial_state();
  std::vector<int> out;
  int prev = synth::kBos;
  while (static_cast<int>(out.size()) < max_len) {
    auto lp = dec.next_log_probs(state, prev);
    int best = -1;
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (v == synth::kBos || v == synth::kPad) continue;
      if (best < 0 || lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;
    }
    out.push_back(best);
    if (best == synth::kEos) break;
    prev = best;
  }
  return out;
}

// Outputs of one instance pass through the recognition branch.
template <class T>
struct InstanceForward {
  RoiFeature<T> roi;
  Tensor<T> context;    // [N, 2D]
  Tensor<T> log_probs;  // teacher-forced on the ground truth, [T, V]
};

template <class T>
InstanceForward<T> forward_instance(const Recognizer<T>& m, const Tensor<T>& features, const synth::TextInstance& inst,
                                    double image_scale) {
  InstanceForward<T> out;
  out.roi = roi_crop(features, inst.box, image_scale, m.config.roi_h, m.config.roi_w);
  out.context = encode_context(m, out.roi.tensor);
  out.log_probs = decode_teacher_forced(m, out.context, inst.tokens);
  return out;
}

}  // namespace dld::rec
