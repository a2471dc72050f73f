// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dld/distill/losses.hpp"
#include "dld/recognizer/model.hpp"
#include "dld/selector/selector.hpp"

namespace dld::train {

enum class Regime { teacher, vanilla_multiscale, skd_only, drs_only, dld };

std::string regime_name(Regime r);
Regime parse_regime(const std::string& s);

// Which distillation signal the SKD slot carries.
enum class KdMode { skd, logits };

struct TrainConfig {
  Regime regime = Regime::dld;
  int epochs = 50;
  double lr = 1e-3;
  std::vector<int> lr_drops{30, 40};
  double lr_drop_factor = 0.1;
  int batch_size = 3;
  double weight_decay = 1e-4;
  double gamma = 0.1;
  double tau_init = 5.0;
  double sigma = 0.965;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  kd::KDWeights kd;
  kd::FeatureLoss feature_loss = kd::FeatureLoss::mse;
  KdMode kd_mode = KdMode::skd;
  int beam_k = 1;
  std::uint64_t seed = 42;
  std::vector<double> scales{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  double fixed_student_scale = 0.5;
  // Random-scale augmentation range for the teacher and the vanilla regime.
  double aug_min_scale = 0.3;
  double aug_max_scale = 1.0;
  std::string model = "default";  // "default" or "downsized"
  int max_train_samples = 0;      // 0: whole split
  int log_eval_samples = 100;     // per-epoch evaluation subset; 0 disables
  bool debug_routing = false;

  rec::RecognizerConfig recognizer_config() const;
  sel::SelectorConfig selector_config() const;
  bool uses_teacher() const { return regime == Regime::skd_only || regime == Regime::drs_only || regime == Regime::dld; }
  bool uses_selector() const { return regime == Regime::drs_only || regime == Regime::dld; }
  bool uses_skd() const { return regime == Regime::skd_only || regime == Regime::dld; }

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// lr · factor^(number of drop epochs ≤ epoch).
double learning_rate(const TrainConfig& cfg, int epoch);

// Every key is optional; unknown keys are rejected.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace dld::train
