// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "dld/recognizer/model.hpp"

namespace dld::rec {

struct BeamHypothesis {
  std::vector<int> tokens;  // ends with EOS unless the length cap was hit
  double logprob = 0.0;     // cumulative, no length normalisation
  bool operator==(const BeamHypothesis&) const = default;
};

// A step model exposes:
//   using State = ...;
//   State initial_state();
//   std::vector<double> next_log_probs(State&, int prev_token);  // advances State
//   int bos() const; int eos() const; bool emits(int token) const;
template <class Model>
std::vector<BeamHypothesis> beam_search(Model& model, int beam_width, int max_len) {
  if (beam_width < 1) throw ContractViolation("beam_search: beam width must be >= 1");
  if (max_len < 1) throw ContractViolation("beam_search: max_len must be >= 1");
  using State = typename Model::State;

  struct Entry {
    std::vector<int> tokens;
    double logprob;
    bool finished;
    std::shared_ptr<const State> state;
  };
  auto better = [](const Entry& a, const Entry& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
  };

  std::vector<Entry> pool{{{}, 0.0, false, std::make_shared<const State>(model.initial_state())}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<Entry> candidates;
    for (const auto& e : pool) {
      if (e.finished) {
        candidates.push_back(e);
        continue;
      }
      State next = *e.state;
      const int prev = e.tokens.empty() ? model.bos() : e.tokens.back();
      const std::vector<double> lp = model.next_log_probs(next, prev);
      auto shared = std::make_shared<const State>(std::move(next));
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        if (!model.emits(v)) continue;
        Entry c{e.tokens, e.logprob + lp[static_cast<std::size_t>(v)], false, shared};
        c.tokens.push_back(v);
        c.finished = v == model.eos() || len == max_len;
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam_width), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(), better);
    candidates.resize(keep);
    pool = std::move(candidates);
    if (std::all_of(pool.begin(), pool.end(), [](const Entry& e) { return e.finished; })) break;
  }
  std::sort(pool.begin(), pool.end(), better);
  std::vector<BeamHypothesis> out;
  for (auto& e : pool) out.push_back({std::move(e.tokens), e.logprob});
  return out;
}

// Step model over a recognizer's attention decoder; BOS and PAD are never emitted.
template <class T>
class RecognizerStepModel {
 public:
  using State = typename AttentionDecoder<T>::State;

  RecognizerStepModel(const Recognizer<T>& m, const Tensor<T>& ctx) : dec_(m, ctx) {}

  State initial_state() const { return dec_.initial_state(); }
  std::vector<double> next_log_probs(State& s, int prev) const {
    nc::NoGradGuard<T> guard;
    return dec_.next_log_probs(s, prev);
  }
  int bos() const { return synth::kBos; }
  int eos() const { return synth::kEos; }
  bool emits(int token) const { return token != synth::kBos && token != synth::kPad; }

 private:
  AttentionDecoder<T> dec_;
};

template <class T>
std::vector<BeamHypothesis> beam_search(const Recognizer<T>& m, const Tensor<T>& ctx, int beam_width, int max_len = 12) {
  nc::NoGradGuard<T> guard;
  RecognizerStepModel<T> model(m, ctx);
  return beam_search(model, beam_width, max_len);
}

}  // namespace dld::rec
