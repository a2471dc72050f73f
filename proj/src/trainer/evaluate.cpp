// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/trainer/evaluate.hpp"

#include <cmath>
#include <cstdio>

#include "dld/common/error.hpp"
#include "dld/recognizer/metrics.hpp"
#include "dld/selector/flops.hpp"
#include "dld/selector/gumbel.hpp"
#include "json.hpp"

namespace dld::train {

using nlohmann::json;

Policy Policy::parse(const std::string& s) {
  if (s == "dynamic") return selected();
  const std::string prefix = "fixed:";
  if (s.rfind(prefix, 0) == 0) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s.substr(prefix.size()), &used);
      if (used == s.size() - prefix.size() && v > 0.0 && v <= 1.0) return fixed(v);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("policy: expected \"dynamic\" or \"fixed:<scale in (0,1]>\", got \"" + s + "\"");
}

std::string Policy::to_string() const {
  if (dynamic) return "dynamic";
  char buf[64];
  std::snprintf(buf, sizeof buf, "fixed:%g", scale);
  return buf;
}

std::string Metrics::to_json() const {
  json j;
  j["policy"] = policy;
  j["accuracy"] = accuracy;
  j["accuracy_sub_legible"] = accuracy_sub_legible ? json(*accuracy_sub_legible) : json(nullptr);
  j["num_samples"] = num_samples;
  j["num_instances"] = num_instances;
  j["num_sub_legible"] = num_sub_legible;
  j["mean_flops"] = mean_flops;
  j["mean_scale"] = mean_scale;
  if (!histogram.empty()) {
    j["selector_flops"] = selector_flops;
    json h = json::array();
    for (std::size_t i = 0; i < histogram.size(); ++i) {
      h.push_back({{"scale", scales[i]},
                   {"count", histogram[i]},
                   {"proportion", num_samples ? static_cast<double>(histogram[i]) / num_samples : 0.0}});
    }
    j["histogram"] = h;
  }
  return j.dump(2);
}

Metrics Metrics::from_json(const std::string& text) {
  Metrics m;
  try {
    json j = json::parse(text);
    m.policy = j.at("policy").get<std::string>();
    m.accuracy = j.at("accuracy").get<double>();
    if (!j.at("accuracy_sub_legible").is_null()) m.accuracy_sub_legible = j.at("accuracy_sub_legible").get<double>();
    m.num_samples = j.at("num_samples").get<int>();
    m.num_instances = j.at("num_instances").get<int>();
    m.num_sub_legible = j.at("num_sub_legible").get<int>();
    m.mean_flops = j.at("mean_flops").get<double>();
    m.mean_scale = j.at("mean_scale").get<double>();
    if (j.contains("histogram")) {
      m.selector_flops = j.at("selector_flops").get<double>();
      for (const auto& e : j.at("histogram")) {
        m.scales.push_back(e.at("scale").get<double>());
        m.histogram.push_back(e.at("count").get<int>());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("metrics.json: ") + e.what());
  }
  return m;
}

SelectionRow select_scale(const SelectorNet& selector, const std::vector<double>& scales,
                          const synth::SpottingSample& sample, int sample_id) {
  nc::NoGradGuard<float> guard;
  SelectionRow row;
  row.sample_id = sample_id;
  nc::Tensor<float> p = sel::drs_forward(selector, rec::image_tensor<float>(sample.image_at(scales.front())));
  row.p.assign(p.data().begin(), p.data().end());
  row.chosen = sel::argmax(row.p);
  row.scale = scales[static_cast<std::size_t>(row.chosen)];
  return row;
}

EvalResult evaluate(const Model& model, const SelectorNet* selector, const std::vector<double>& scales,
                    const std::vector<synth::SpottingSample>& samples, const Policy& policy, std::size_t limit) {
  if (policy.dynamic && selector == nullptr) throw ConfigError("evaluate: dynamic policy requires a selector");
  if (policy.dynamic && static_cast<int>(scales.size()) != selector->config.num_scales) {
    throw ConfigError("evaluate: selector has " + std::to_string(selector->config.num_scales) + " outputs for " +
                      std::to_string(scales.size()) + " scales");
  }
  const std::size_t n = limit ? std::min(limit, samples.size()) : samples.size();
  if (n == 0) throw ConfigError("evaluate: empty dataset");
  const std::vector<synth::SpottingSample> subset(samples.begin(), samples.begin() + static_cast<long>(n));

  nc::NoGradGuard<float> guard;
  EvalResult out;
  Metrics& m = out.metrics;
  m.policy = policy.to_string();
  m.num_samples = static_cast<int>(n);
  int hits = 0, sub_hits = 0;
  double scale_sum = 0.0;
  std::vector<double> per_sample_scale(n);
  if (policy.dynamic) {
    m.scales = scales;
    m.histogram.assign(scales.size(), 0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subset[i];
    double scale = policy.scale;
    if (policy.dynamic) {
      SelectionRow row = select_scale(*selector, scales, s, static_cast<int>(i));
      scale = row.scale;
      ++m.histogram[static_cast<std::size_t>(row.chosen)];
      out.selections.push_back(std::move(row));
    }
    per_sample_scale[i] = scale;
    scale_sum += scale;
    nc::Tensor<float> features = rec::backbone_forward(model, rec::image_tensor<float>(s.image_at(scale)));
    for (const auto& inst : s.instances) {
      auto roi = rec::roi_crop(features, inst.box, scale, model.config.roi_h, model.config.roi_w);
      auto ctx = rec::encode_context(model, roi.tensor);
      auto pred = rec::greedy_decode(model, ctx, model.config.max_decode_len);
      const int ok = rec::sequence_accuracy(pred, inst.tokens);
      hits += ok;
      ++m.num_instances;
      if (synth::sub_legible(inst, scale)) {
        ++m.num_sub_legible;
        sub_hits += ok;
      }
      out.predictions.push_back(std::move(pred));
    }
  }
  m.accuracy = m.num_instances ? static_cast<double>(hits) / m.num_instances : 0.0;
  if (m.num_sub_legible > 0) m.accuracy_sub_legible = static_cast<double>(sub_hits) / m.num_sub_legible;
  m.mean_scale = scale_sum / static_cast<double>(n);

  if (policy.dynamic) {
    const sel::FlopsTable table = sel::precompute_table(model.config, subset, scales);
    for (std::size_t k = 0; k < scales.size(); ++k)
      m.mean_flops += static_cast<double>(m.histogram[k]) / static_cast<double>(n) * table.raw[k];
    const auto& img = subset.front().image_at(scales.front());
    m.selector_flops = static_cast<double>(sel::selector_flops(selector->config, img.height, img.width));
  } else {
    long double acc = 0;
    for (const auto& s : subset) acc += static_cast<long double>(sel::sample_flops(model.config, s, policy.scale));
    m.mean_flops = static_cast<double>(acc / static_cast<long double>(n));
  }
  return out;
}

std::string selections_csv(const std::vector<SelectionRow>& rows) {
  std::string out = "sample_id";
  const std::size_t k = rows.empty() ? 0 : rows.front().p.size();
  for (std::size_t i = 0; i < k; ++i) out += ",p" + std::to_string(i);
  out += ",chosen,scale,tau\n";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.sample_id);
    for (double v : r.p) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%d,%g,0\n", r.chosen, r.scale);
    out += buf;
  }
  return out;
}

FeatureDistance feature_distance_report(const Model& teacher, const Model& student,
                                        const std::vector<synth::SpottingSample>& samples, double low_scale,
                                        std::size_t limit) {
  nc::NoGradGuard<float> guard;
  const std::size_t n = limit ? std::min(limit, samples.size()) : samples.size();
  auto msd = [](const nc::Tensor<float>& a, const nc::Tensor<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      s += d * d;
    }
    return s / static_cast<double>(a.numel());
  };
  FeatureDistance out;
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    auto ft = rec::backbone_forward(teacher, rec::image_tensor<float>(s.image_hi));
    auto fs = rec::backbone_forward(student, rec::image_tensor<float>(s.image_at(low_scale)));
    for (const auto& inst : s.instances) {
      auto rt = rec::roi_crop(ft, inst.box, 1.0, teacher.config.roi_h, teacher.config.roi_w);
      auto rs = rec::roi_crop(fs, inst.box, low_scale, student.config.roi_h, student.config.roi_w);
      out.d_roi += msd(rt.tensor, rs.tensor);
      out.d_con += msd(rec::encode_context(teacher, rt.tensor), rec::encode_context(student, rs.tensor));
      ++count;
    }
  }
  if (count > 0) {
    out.d_roi /= count;
    out.d_con /= count;
  }
  return out;
}

}  // namespace dld::train
