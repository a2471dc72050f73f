// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/trainer/config.hpp"

#include <set>

#include "dld/common/error.hpp"
#include "json.hpp"

namespace dld::train {

using nlohmann::json;

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::teacher: return "teacher";
    case Regime::vanilla_multiscale: return "vanilla_multiscale";
    case Regime::skd_only: return "skd_only";
    case Regime::drs_only: return "drs_only";
    case Regime::dld: return "dld";
  }
  return "unknown";
}

Regime parse_regime(const std::string& s) {
  for (Regime r : {Regime::teacher, Regime::vanilla_multiscale, Regime::skd_only, Regime::drs_only, Regime::dld})
    if (regime_name(r) == s) return r;
  if (s == "vanilla") return Regime::vanilla_multiscale;
  throw ConfigError("regime: unknown value \"" + s + "\"");
}

rec::RecognizerConfig TrainConfig::recognizer_config() const {
  return model == "downsized" ? rec::RecognizerConfig::downsized() : rec::RecognizerConfig{};
}

sel::SelectorConfig TrainConfig::selector_config() const {
  sel::SelectorConfig c;
  c.num_scales = static_cast<int>(scales.size());
  if (model == "downsized") c.channels = 2;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr: must be > 0");
  for (std::size_t i = 0; i < lr_drops.size(); ++i) {
    if (lr_drops[i] < 1 || lr_drops[i] >= epochs) throw ConfigError("lr_drops: each drop epoch must lie in [1, epochs)");
    if (i > 0 && lr_drops[i] <= lr_drops[i - 1]) throw ConfigError("lr_drops: must be strictly increasing");
  }
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ConfigError("lr_drop_factor: must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay: must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("gamma: must be >= 0");
  if (!(tau_init > 0.0)) throw ConfigError("tau_init: must be > 0");
  if (!(sigma > 0.0 && sigma <= 1.0)) throw ConfigError("sigma: must lie in (0, 1]");
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1: must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("lambda2: must be >= 0");
  if (!(lambda3 >= 0.0)) throw ConfigError("lambda3: must be >= 0");
  kd.validate();
  if (beam_k < 1) throw ConfigError("beam_k: must be >= 1");
  sel::ScaleSet check(scales);
  if (!(fixed_student_scale > 0.0 && fixed_student_scale <= 1.0)) throw ConfigError("fixed_student_scale: must lie in (0, 1]");
  if (!(aug_min_scale > 0.0 && aug_min_scale <= aug_max_scale && aug_max_scale <= 1.0)) {
    throw ConfigError("aug_min_scale/aug_max_scale: need 0 < min <= max <= 1");
  }
  if (model != "default" && model != "downsized") throw ConfigError("model: expected \"default\" or \"downsized\"");
  if (max_train_samples < 0) throw ConfigError("max_train_samples: must be >= 0");
  if (log_eval_samples < 0) throw ConfigError("log_eval_samples: must be >= 0");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.lr_drops)
    if (epoch >= d) lr *= cfg.lr_drop_factor;
  return lr;
}

namespace {

template <class V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(key) + ": wrong type");
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config: top level must be an object");
  static const std::set<std::string> known{
      "regime", "epochs", "lr", "lr_drops", "lr_drop_factor", "batch_size", "weight_decay", "gamma", "tau_init",
      "sigma", "lambda1", "lambda2", "lambda3", "eta1", "eta2", "feature_loss", "kd_mode", "beam_k", "seed",
      "scales", "fixed_student_scale", "aug_min_scale", "aug_max_scale", "model", "max_train_samples",
      "log_eval_samples", "debug_routing"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key + ": unknown key");
  }
  TrainConfig c;
  if (j.contains("regime")) {
    std::string r;
    read(j, "regime", r);
    c.regime = parse_regime(r);
  }
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  read(j, "lr_drops", c.lr_drops);
  read(j, "lr_drop_factor", c.lr_drop_factor);
  read(j, "batch_size", c.batch_size);
  read(j, "weight_decay", c.weight_decay);
  read(j, "gamma", c.gamma);
  read(j, "tau_init", c.tau_init);
  read(j, "sigma", c.sigma);
  read(j, "lambda1", c.lambda1);
  read(j, "lambda2", c.lambda2);
  read(j, "lambda3", c.lambda3);
  read(j, "eta1", c.kd.eta1);
  read(j, "eta2", c.kd.eta2);
  if (j.contains("feature_loss")) {
    std::string s;
    read(j, "feature_loss", s);
    c.feature_loss = kd::parse_feature_loss(s);
  }
  if (j.contains("kd_mode")) {
    std::string s;
    read(j, "kd_mode", s);
    if (s == "skd") c.kd_mode = KdMode::skd;
    else if (s == "logits") c.kd_mode = KdMode::logits;
    else throw ConfigError("kd_mode: expected \"skd\" or \"logits\"");
  }
  read(j, "beam_k", c.beam_k);
  read(j, "seed", c.seed);
  read(j, "scales", c.scales);
  read(j, "fixed_student_scale", c.fixed_student_scale);
  read(j, "aug_min_scale", c.aug_min_scale);
  read(j, "aug_max_scale", c.aug_max_scale);
  read(j, "model", c.model);
  read(j, "max_train_samples", c.max_train_samples);
  read(j, "log_eval_samples", c.log_eval_samples);
  read(j, "debug_routing", c.debug_routing);
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["regime"] = regime_name(c.regime);
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["lr_drops"] = c.lr_drops;
  j["lr_drop_factor"] = c.lr_drop_factor;
  j["batch_size"] = c.batch_size;
  j["weight_decay"] = c.weight_decay;
  j["gamma"] = c.gamma;
  j["tau_init"] = c.tau_init;
  j["sigma"] = c.sigma;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["lambda3"] = c.lambda3;
  j["eta1"] = c.kd.eta1;
  j["eta2"] = c.kd.eta2;
  j["feature_loss"] = c.feature_loss == kd::FeatureLoss::mse ? "mse" : "mae";
  j["kd_mode"] = c.kd_mode == KdMode::skd ? "skd" : "logits";
  j["beam_k"] = c.beam_k;
  j["seed"] = c.seed;
  j["scales"] = c.scales;
  j["fixed_student_scale"] = c.fixed_student_scale;
  j["aug_min_scale"] = c.aug_min_scale;
  j["aug_max_scale"] = c.aug_max_scale;
  j["model"] = c.model;
  j["max_train_samples"] = c.max_train_samples;
  j["log_eval_samples"] = c.log_eval_samples;
  j["debug_routing"] = c.debug_routing;
  return j.dump(2);
}

}  // namespace dld::train
