// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dld/recognizer/beam_search.hpp"
#include "dld/recognizer/model.hpp"

namespace dld::kd {

using nc::Tensor;

struct KDWeights {
  double eta1 = 1.0;  // context term
  double eta2 = 1.0;  // sequence term

  void validate() const {
    if (!(eta1 >= 0.0) || !(eta2 >= 0.0)) throw ConfigError("kd weights: eta1 and eta2 must be >= 0");
  }
};

enum class FeatureLoss { mse, mae };

inline FeatureLoss parse_feature_loss(const std::string& s) {
  if (s == "mse") return FeatureLoss::mse;
  if (s == "mae") return FeatureLoss::mae;
  throw ConfigError("feature_loss: expected \"mse\" or \"mae\", got \"" + s + "\"");
}

// Mean over elements of (t − s)² (or |t − s|); the teacher side is a constant.
template <class T>
Tensor<T> feature_distance(const Tensor<T>& teacher, const Tensor<T>& student, FeatureLoss kind, const char* what) {
  if (teacher.shape() != student.shape()) {
    throw ContractViolation(std::string(what) + ": teacher " + nc::to_string(teacher.shape()) + " vs student " +
                            nc::to_string(student.shape()));
  }
  Tensor<T> d = nc::sub(student, nc::detach(teacher));
  Tensor<T> e = kind == FeatureLoss::mse ? nc::mul(d, d) : nc::abs(d);
  return nc::mean(e);
}

template <class T>
Tensor<T> loss_roi(const Tensor<T>& f_teacher, const Tensor<T>& f_student, FeatureLoss kind = FeatureLoss::mse) {
  return feature_distance(f_teacher, f_student, kind, "loss_roi");
}

template <class T>
Tensor<T> loss_con(const Tensor<T>& c_teacher, const Tensor<T>& c_student, FeatureLoss kind = FeatureLoss::mse) {
  return feature_distance(c_teacher, c_student, kind, "loss_con");
}

// log p(tokens) under teacher forcing on the hypothesis itself. A trailing EOS is scored like any token;
// a hypothesis cut at the length limit is scored without one.
template <class T>
Tensor<T> hypothesis_log_likelihood(const rec::Recognizer<T>& m, const Tensor<T>& ctx, const std::vector<int>& tokens) {
  if (tokens.empty()) throw ContractViolation("hypothesis_log_likelihood: empty hypothesis");
  rec::AttentionDecoder<T> dec(m, ctx);
  std::vector<int> inputs{synth::kBos};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  Tensor<T> emb = nc::gather_rows(m.embed, inputs);
  auto state = dec.initial_state();
  std::vector<Tensor<T>> feats;
  for (int t = 0; t < static_cast<int>(inputs.size()); ++t) feats.push_back(dec.step(nc::slice_rows(emb, t, 1), state));
  Tensor<T> lp = nc::log_softmax(dec.logits(nc::concat_rows(feats)), 1);
  return nc::sum(nc::pick(lp, tokens));
}

// K = 1: NLL of the top teacher beam. K > 1: −log Σ_k p_student(ŷ_k) over the top-K beams, unweighted.
template <class T>
Tensor<T> loss_seq(const rec::Recognizer<T>& student, const Tensor<T>& ctx_student,
                   const std::vector<rec::BeamHypothesis>& teacher_beams, int K = 1) {
  if (teacher_beams.empty()) throw ContractViolation("loss_seq: empty teacher beam list");
  if (K < 1 || K > static_cast<int>(teacher_beams.size())) {
    throw ContractViolation("loss_seq: K=" + std::to_string(K) + " with " + std::to_string(teacher_beams.size()) +
                            " teacher beams");
  }
  if (K == 1) return nc::scale(hypothesis_log_likelihood(student, ctx_student, teacher_beams[0].tokens), T{-1});
  std::vector<Tensor<T>> lls;
  for (int k = 0; k < K; ++k) {
    lls.push_back(nc::reshape(hypothesis_log_likelihood(student, ctx_student, teacher_beams[static_cast<std::size_t>(k)].tokens),
                              {1, 1}));
  }
  return nc::scale(nc::logsumexp(nc::concat_rows(lls)), T{-1});
}

// Mean over steps of KL(teacher row ‖ student row); both given as log-probabilities [T×V].
template <class T>
Tensor<T> loss_logit_kd(const Tensor<T>& log_teacher, const Tensor<T>& log_student) {
  if (log_teacher.shape() != log_student.shape() || log_teacher.rank() != 2) {
    throw ContractViolation("loss_logit_kd: step mismatch, teacher " + nc::to_string(log_teacher.shape()) +
                            " vs student " + nc::to_string(log_student.shape()));
  }
  Tensor<T> lt = nc::detach(log_teacher);
  Tensor<T> kl = nc::sum(nc::mul(nc::exp(lt), nc::sub(lt, log_student)));
  return nc::scale(kl, static_cast<T>(1.0 / log_teacher.dim(0)));
}

template <class T>
Tensor<T> loss_skd(const Tensor<T>& roi, const Tensor<T>& con, const Tensor<T>& seq, const KDWeights& w) {
  return nc::add(nc::add(roi, nc::scale(con, static_cast<T>(w.eta1))), nc::scale(seq, static_cast<T>(w.eta2)));
}

}  // namespace dld::kd
