// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dld/recognizer/model.hpp"
#include "dld/selector/selector.hpp"
#include "dld/synthtext/sample.hpp"

namespace dld::train {

using Model = rec::Recognizer<float>;
using SelectorNet = sel::Selector<float>;

struct Policy {
  bool dynamic = false;
  double scale = 1.0;  // fixed policies only

  static Policy fixed(double s) { return {false, s}; }
  static Policy selected() { return {true, 0.0}; }
  // "dynamic" or "fixed:<scale>".
  static Policy parse(const std::string& s);
  std::string to_string() const;
};

struct SelectionRow {
  int sample_id = 0;
  std::vector<double> p;
  int chosen = 0;
  double scale = 0.0;
};

struct Metrics {
  std::string policy;
  double accuracy = 0.0;
  std::optional<double> accuracy_sub_legible;  // empty when no instance is sub-legible
  int num_samples = 0;
  int num_instances = 0;
  int num_sub_legible = 0;
  double mean_flops = 0.0;     // recognition network only
  double selector_flops = 0.0;  // mean per image, dynamic policy only
  double mean_scale = 0.0;
  std::vector<double> scales;   // candidate scales (dynamic policy)
  std::vector<int> histogram;   // selections per candidate scale (dynamic policy)

  std::string to_json() const;
  static Metrics from_json(const std::string& text);
};

struct EvalResult {
  Metrics metrics;
  std::vector<SelectionRow> selections;
  std::vector<std::vector<int>> predictions;  // greedy outputs per instance, sample order
};

// Greedy recognition with ground-truth boxes. Dynamic policy picks argmax p per image.
// limit > 0 evaluates only the first `limit` samples.
EvalResult evaluate(const Model& model, const SelectorNet* selector, const std::vector<double>& scales,
                    const std::vector<synth::SpottingSample>& samples, const Policy& policy, std::size_t limit = 0);

// Selector decision without Gumbel noise.
SelectionRow select_scale(const SelectorNet& selector, const std::vector<double>& scales,
                          const synth::SpottingSample& sample, int sample_id);

std::string selections_csv(const std::vector<SelectionRow>& rows);

struct FeatureDistance {
  double d_roi = 0.0;
  double d_con = 0.0;
};

// Mean over instances of the per-element mean squared difference between teacher features at
// scale 1.0 and student features at low_scale.
FeatureDistance feature_distance_report(const Model& teacher, const Model& student,
                                        const std::vector<synth::SpottingSample>& samples, double low_scale,
                                        std::size_t limit = 0);

}  // namespace dld::train
