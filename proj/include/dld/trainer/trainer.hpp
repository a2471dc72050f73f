// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dld/recognizer/beam_search.hpp"
#include "dld/selector/flops.hpp"
#include "dld/selector/gumbel.hpp"
#include "dld/trainer/config.hpp"
#include "dld/trainer/evaluate.hpp"

namespace dld::train {

using nc::Tensor;

// Frozen-teacher outputs for one instance at scale 1.0 on the clean image.
struct TeacherInstance {
  Tensor<float> roi;        // [C, roi_h, roi_w]
  Tensor<float> context;    // [N, 2D]
  Tensor<float> log_probs;  // teacher-forced on ground truth, [T, V]
  std::vector<rec::BeamHypothesis> beams;
};

struct TeacherCache {
  std::vector<TeacherInstance> instances;
};

TeacherCache teacher_outputs(const Model& teacher, const synth::SpottingSample& sample, int beam_k);

// Per-sample loss components; NaN marks a component the regime does not compute.
struct StepLosses {
  double total = 0.0;
  double rec = 0.0;
  double drs = std::nan("");
  double acc = std::nan("");
  double flops = std::nan("");
  double skd = std::nan("");
  double roi = std::nan("");
  double con = std::nan("");
  double seq = std::nan("");
  double logit = std::nan("");
  double scale = 0.0;  // scale of the recognition branch
  std::optional<sel::SelectionDecision> decision;
};

// Largest absolute gradient that crossed a routing boundary in debug mode.
struct RoutingReport {
  int checks = 0;
  double drs_to_recognizer = 0.0;
  double recognition_to_selector = 0.0;
  bool clean() const { return drs_to_recognizer == 0.0 && recognition_to_selector == 0.0; }
};

struct StepInputs {
  const TrainConfig* config = nullptr;
  const synth::SpottingSample* sample = nullptr;
  const TeacherCache* teacher = nullptr;  // required by skd_only, drs_only, dld
  Model* student = nullptr;
  SelectorNet* selector = nullptr;        // required by drs_only, dld
  const sel::FlopsTable* table = nullptr;  // required by drs_only, dld
  int epoch = 0;
  std::uint64_t step = 0;      // global sample counter, seeds the per-step streams
  double loss_weight = 1.0;    // backward is taken on loss_weight · total
};

// One sample of a student regime: forwards, losses, and a single backward of
// λ1·L_rec + λ2·L_DRS + λ3·L_SKD (terms absent from the regime are dropped).
// Gradients accumulate; the optimizer step is the caller's.
StepLosses dld_step(const StepInputs& in, RoutingReport* routing = nullptr);

// One teacher sample: random-scale augmentation and L_rec. Gradients accumulate.
StepLosses teacher_step(const TrainConfig& cfg, const synth::SpottingSample& sample, Model& model, int epoch,
                        std::uint64_t step, double loss_weight);

struct TrainLogRow {
  int epoch = 0;
  double lr = 0.0;
  double tau = std::nan("");
  double l_total = 0.0, l_rec = 0.0, l_drs = std::nan(""), l_acc = std::nan(""), l_flops = std::nan("");
  double l_skd = std::nan(""), l_roi = std::nan(""), l_con = std::nan(""), l_seq = std::nan("");
  double l_logit_ablation = std::nan("");
  double eval_accuracy_hi = std::nan(""), eval_accuracy_policy = std::nan("");
  double mean_selected_scale = 0.0;
  double mean_flops = std::nan("");
  std::vector<int> selection_histogram;  // per candidate scale, selector regimes only
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
};

using Progress = std::function<void(const TrainLogRow&)>;

struct TeacherResult {
  Model model;
  TrainLog log;
};

TeacherResult train_teacher(const TrainConfig& cfg, const std::vector<synth::SpottingSample>& train,
                            const std::vector<synth::SpottingSample>& eval, const Progress& progress = {});

struct StudentResult {
  Model student;
  std::optional<SelectorNet> selector;
  sel::FlopsTable table;
  TrainLog log;
  RoutingReport routing;
};

StudentResult train_student(const TrainConfig& cfg, const std::vector<synth::SpottingSample>& train,
                            const std::vector<synth::SpottingSample>& eval, const Model& teacher,
                            const Progress& progress = {});

// Evaluation policy implied by a regime: fixed scale for non-selector regimes, dynamic otherwise.
Policy regime_policy(const TrainConfig& cfg);

}  // namespace dld::train
