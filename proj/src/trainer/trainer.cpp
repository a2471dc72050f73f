// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "dld/common/error.hpp"
#include "dld/numcore/optim.hpp"
#include "dld/selector/losses.hpp"
#include "dld/synthtext/generator.hpp"

namespace dld::train {

namespace {

using Tf = Tensor<float>;

void check_finite(double v, const char* component, int epoch, std::uint64_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(component, std::string("non-finite ") + component + " at epoch " + std::to_string(epoch) +
                                      ", step " + std::to_string(step));
  }
}

Tf mean_of(const std::vector<Tf>& parts) {
  Tf total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = nc::add(total, parts[i]);
  return nc::scale(total, 1.0f / static_cast<float>(parts.size()));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Pcg32 rng(derive_seed(seed, "order", static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);
  return order;
}

using Snapshot = std::vector<std::vector<float>>;

Snapshot grads_of(const std::vector<Tf>& ps) {
  Snapshot s;
  for (const auto& p : ps) s.push_back(p.grad());
  return s;
}

void restore_grads(const std::vector<Tf>& ps, const Snapshot& s) {
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto g = Tf(ps[k]).mutable_grad();
    std::copy(s[k].begin(), s[k].end(), g.begin());
  }
}

void zero_grads(const std::vector<Tf>& ps) {
  for (auto p : ps) p.zero_grad();
}

double max_abs_grad(const std::vector<Tf>& ps) {
  double m = 0.0;
  for (const auto& p : ps)
    for (float v : p.grad()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

std::size_t train_count(const TrainConfig& cfg, const std::vector<synth::SpottingSample>& train) {
  if (train.empty()) throw ConfigError("training split is empty");
  return cfg.max_train_samples > 0 ? std::min(train.size(), static_cast<std::size_t>(cfg.max_train_samples))
                                   : train.size();
}

// Running means of the per-sample components.
struct RowAccumulator {
  double n = 0;
  double total = 0, rec = 0, drs = 0, acc = 0, flops = 0, skd = 0, roi = 0, con = 0, seq = 0, logit = 0, scale = 0;

  void add(const StepLosses& l) {
    n += 1;
    total += l.total;
    rec += l.rec;
    drs += l.drs;
    acc += l.acc;
    flops += l.flops;
    skd += l.skd;
    roi += l.roi;
    con += l.con;
    seq += l.seq;
    logit += l.logit;
    scale += l.scale;
  }

  void fill(TrainLogRow& row) const {
    row.l_total = total / n;
    row.l_rec = rec / n;
    row.l_drs = drs / n;
    row.l_acc = acc / n;
    row.l_flops = flops / n;
    row.l_skd = skd / n;
    row.l_roi = roi / n;
    row.l_con = con / n;
    row.l_seq = seq / n;
    row.l_logit_ablation = logit / n;
    row.mean_selected_scale = scale / n;
  }
};

}  // namespace

Policy regime_policy(const TrainConfig& cfg) {
  switch (cfg.regime) {
    case Regime::teacher: return Policy::fixed(1.0);
    case Regime::vanilla_multiscale:
    case Regime::skd_only: return Policy::fixed(cfg.fixed_student_scale);
    case Regime::drs_only:
    case Regime::dld: return Policy::selected();
  }
  return Policy::fixed(1.0);
}

TeacherCache teacher_outputs(const Model& teacher, const synth::SpottingSample& sample, int beam_k) {
  nc::NoGradGuard<float> guard;
  TeacherCache out;
  Tf features = rec::backbone_forward(teacher, rec::image_tensor<float>(sample.image_hi));
  for (const auto& inst : sample.instances) {
    auto f = rec::forward_instance(teacher, features, inst, 1.0);
    TeacherInstance t;
    t.roi = f.roi.tensor;
    t.context = f.context;
    t.log_probs = f.log_probs;
    t.beams = rec::beam_search(teacher, f.context, beam_k, teacher.config.max_decode_len);
    out.instances.push_back(std::move(t));
  }
  return out;
}

StepLosses dld_step(const StepInputs& in, RoutingReport* routing) {
  const TrainConfig& cfg = *in.config;
  const synth::SpottingSample& s = *in.sample;
  Model& student = *in.student;
  if (cfg.regime == Regime::teacher) throw ContractViolation("dld_step: teacher regime uses teacher_step");
  if (cfg.uses_teacher() && !in.teacher) throw ContractViolation("dld_step: regime requires teacher outputs");
  if (cfg.uses_selector() && (!in.selector || !in.table)) {
    throw ContractViolation("dld_step: regime requires a selector and a FLOPs table");
  }
  if (in.teacher && in.teacher->instances.size() != s.instances.size()) {
    throw ContractViolation("dld_step: teacher outputs do not match the sample");
  }

  StepLosses out;
  std::optional<sel::GumbelSample<float>> gumbel;
  int chosen = -1;
  if (cfg.uses_selector()) {
    Pcg32 rng(derive_seed(cfg.seed, "gumbel", in.step));
    Tf p = sel::drs_forward(*in.selector, rec::image_tensor<float>(s.image_at(cfg.scales.front())));
    gumbel = sel::gumbel_sample(p, sel::temperature(in.epoch, cfg.tau_init, cfg.sigma), rng);
    chosen = gumbel->decision.chosen;
    out.decision = gumbel->decision;
    out.scale = cfg.scales[static_cast<std::size_t>(chosen)];
  } else if (cfg.regime == Regime::vanilla_multiscale) {
    Pcg32 rng(derive_seed(cfg.seed, "scale", in.step));
    out.scale = rng.uniform(cfg.aug_min_scale, cfg.aug_max_scale);
  } else {
    out.scale = cfg.fixed_student_scale;
  }

  // Recognition branch (the only one carrying recognizer gradients).
  const synth::Image image = s.image_at(out.scale);
  Tf features = rec::backbone_forward(student, rec::image_tensor<float>(image));
  std::vector<Tf> rec_terms, skd_terms, roi_terms, con_terms, seq_terms;
  std::vector<Tf> branch_log_probs;
  double logit_monitor = 0.0;
  for (std::size_t n = 0; n < s.instances.size(); ++n) {
    const auto& inst = s.instances[n];
    auto f = rec::forward_instance(student, features, inst, out.scale);
    rec_terms.push_back(rec::sequence_nll(f.log_probs, inst.tokens));
    branch_log_probs.push_back(nc::detach(f.log_probs));
    if (in.teacher) {
      const TeacherInstance& t = in.teacher->instances[n];
      Tf logit = kd::loss_logit_kd(t.log_probs, f.log_probs);
      logit_monitor += logit.item();
      if (cfg.uses_skd()) {
        if (cfg.kd_mode == KdMode::logits) {
          skd_terms.push_back(logit);
        } else {
          Tf roi = kd::loss_roi(t.roi, f.roi.tensor, cfg.feature_loss);
          Tf con = kd::loss_con(t.context, f.context, cfg.feature_loss);
          Tf seq = kd::loss_seq(student, f.context, t.beams, std::min<int>(cfg.beam_k, static_cast<int>(t.beams.size())));
          roi_terms.push_back(roi);
          con_terms.push_back(con);
          seq_terms.push_back(seq);
          skd_terms.push_back(kd::loss_skd(roi, con, seq, cfg.kd));
        }
      }
    }
  }
  Tf l_rec = mean_of(rec_terms);
  out.rec = l_rec.item();
  check_finite(out.rec, "l_rec", in.epoch, in.step);
  if (in.teacher) out.logit = logit_monitor / static_cast<double>(s.instances.size());
  Tf total = nc::scale(l_rec, static_cast<float>(cfg.lambda1));
  Tf recognition = total;

  if (cfg.uses_skd()) {
    Tf l_skd = mean_of(skd_terms);
    out.skd = l_skd.item();
    check_finite(out.skd, "l_skd", in.epoch, in.step);
    if (!roi_terms.empty()) {
      out.roi = mean_of(roi_terms).item();
      out.con = mean_of(con_terms).item();
      out.seq = mean_of(seq_terms).item();
      check_finite(out.roi, "l_roi", in.epoch, in.step);
      check_finite(out.con, "l_con", in.epoch, in.step);
      check_finite(out.seq, "l_seq", in.epoch, in.step);
    }
    total = nc::add(total, nc::scale(l_skd, static_cast<float>(cfg.lambda3)));
    recognition = total;
  }

  Tf l_drs;
  if (cfg.uses_selector()) {
    // Step distributions of every candidate branch, as constants.
    std::vector<std::vector<Tf>> scaled(cfg.scales.size());
    {
      nc::NoGradGuard<float> guard;
      for (std::size_t k = 0; k < cfg.scales.size(); ++k) {
        if (static_cast<int>(k) == chosen) {
          scaled[k] = branch_log_probs;
          continue;
        }
        Tf fk = rec::backbone_forward(student, rec::image_tensor<float>(s.image_at(cfg.scales[k])));
        for (const auto& inst : s.instances) scaled[k].push_back(rec::forward_instance(student, fk, inst, cfg.scales[k]).log_probs);
      }
    }
    std::vector<Tf> teacher_lp;
    for (const auto& t : in.teacher->instances) teacher_lp.push_back(t.log_probs);
    Tf l_acc = sel::loss_acc(teacher_lp, scaled, gumbel->h);
    Tf l_flops = sel::loss_flops(gumbel->h, in.table->normalized);
    l_drs = sel::loss_drs(l_acc, l_flops, cfg.gamma);
    out.acc = l_acc.item();
    out.flops = l_flops.item();
    out.drs = l_drs.item();
    check_finite(out.acc, "l_acc", in.epoch, in.step);
    check_finite(out.flops, "l_flops", in.epoch, in.step);
    check_finite(out.drs, "l_drs", in.epoch, in.step);
    total = nc::add(total, nc::scale(l_drs, static_cast<float>(cfg.lambda2)));
  }
  out.total = total.item();
  check_finite(out.total, "l_total", in.epoch, in.step);

  if (cfg.uses_selector() && (routing || cfg.debug_routing)) {
    const auto rec_params = student.parameters();
    const auto sel_params = in.selector->parameters();
    const Snapshot rec_snap = grads_of(rec_params), sel_snap = grads_of(sel_params);
    zero_grads(rec_params);
    zero_grads(sel_params);
    nc::backward(l_drs, true);
    const double leak_a = max_abs_grad(rec_params);
    zero_grads(rec_params);
    zero_grads(sel_params);
    nc::backward(recognition, true);
    const double leak_b = max_abs_grad(sel_params);
    restore_grads(rec_params, rec_snap);
    restore_grads(sel_params, sel_snap);
    if (routing) {
      ++routing->checks;
      routing->drs_to_recognizer = std::max(routing->drs_to_recognizer, leak_a);
      routing->recognition_to_selector = std::max(routing->recognition_to_selector, leak_b);
    }
    if (cfg.debug_routing && (leak_a != 0.0 || leak_b != 0.0)) {
      throw ContractViolation("gradient routing violated at step " + std::to_string(in.step) +
                              ": |dL_DRS/d recognizer| = " + std::to_string(leak_a) +
                              ", |d(L_rec+L_SKD)/d selector| = " + std::to_string(leak_b));
    }
  }
  nc::backward(nc::scale(total, static_cast<float>(in.loss_weight)));
  return out;
}

StepLosses teacher_step(const TrainConfig& cfg, const synth::SpottingSample& sample, Model& model, int epoch,
                        std::uint64_t step, double loss_weight) {
  StepLosses out;
  Pcg32 rng(derive_seed(cfg.seed, "scale", step));
  out.scale = rng.uniform(cfg.aug_min_scale, cfg.aug_max_scale);
  Tf features = rec::backbone_forward(model, rec::image_tensor<float>(sample.image_at(out.scale)));
  std::vector<Tf> terms;
  for (const auto& inst : sample.instances) {
    auto f = rec::forward_instance(model, features, inst, out.scale);
    terms.push_back(rec::sequence_nll(f.log_probs, inst.tokens));
  }
  Tf loss = mean_of(terms);
  out.rec = out.total = loss.item();
  check_finite(out.rec, "l_rec", epoch, step);
  nc::backward(nc::scale(loss, static_cast<float>(loss_weight)));
  return out;
}

std::string TrainLog::to_csv() const {
  std::string out =
      "epoch,lr,tau,l_total,l_rec,l_drs,l_acc,l_flops,l_skd,l_roi,l_con,l_seq,l_logit_ablation,"
      "eval_accuracy_hi,eval_accuracy_policy,mean_selected_scale,mean_flops,selection_histogram\n";
  char buf[64];
  auto field = [&](double v) {
    out += ',';
    if (std::isfinite(v)) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out += buf;
    }
  };
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.lr, r.tau, r.l_total, r.l_rec, r.l_drs, r.l_acc, r.l_flops, r.l_skd, r.l_roi, r.l_con,
                     r.l_seq, r.l_logit_ablation, r.eval_accuracy_hi, r.eval_accuracy_policy,
                     r.mean_selected_scale, r.mean_flops})
      field(v);
    out += ',';
    for (std::size_t i = 0; i < r.selection_histogram.size(); ++i)
      out += (i ? ";" : "") + std::to_string(r.selection_histogram[i]);
    out += '\n';
  }
  return out;
}

TeacherResult train_teacher(const TrainConfig& cfg, const std::vector<synth::SpottingSample>& train,
                            const std::vector<synth::SpottingSample>& eval, const Progress& progress) {
  cfg.validate();
  const std::size_t n = train_count(cfg, train);
  TeacherResult res{Model::init(cfg.recognizer_config(), derive_seed(cfg.seed, "teacher-init")), {}};
  Model& model = res.model;
  nc::AdamW<float> opt(model.parameters(), {.weight_decay = cfg.weight_decay});
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto order = epoch_order(n, cfg.seed, epoch);
    RowAccumulator acc;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      opt.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        acc.add(teacher_step(cfg, train[order[i]], model, epoch, step++, 1.0 / static_cast<double>(end - b)));
      }
      opt.step(lr);
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    acc.fill(row);
    row.l_drs = row.l_acc = row.l_flops = row.l_skd = row.l_roi = row.l_con = row.l_seq = row.l_logit_ablation =
        std::nan("");
    if (cfg.log_eval_samples > 0 && !eval.empty()) {
      auto r = evaluate(model, nullptr, cfg.scales, eval, Policy::fixed(1.0), static_cast<std::size_t>(cfg.log_eval_samples));
      row.eval_accuracy_hi = row.eval_accuracy_policy = r.metrics.accuracy;
      row.mean_flops = r.metrics.mean_flops;
    }
    res.log.rows.push_back(row);
    if (progress) progress(row);
  }
  return res;
}

StudentResult train_student(const TrainConfig& cfg, const std::vector<synth::SpottingSample>& train,
                            const std::vector<synth::SpottingSample>& eval, const Model& teacher,
                            const Progress& progress) {
  cfg.validate();
  if (cfg.regime == Regime::teacher) throw ConfigError("regime: use train_teacher for the teacher regime");
  const std::size_t n = train_count(cfg, train);
  const std::vector<synth::SpottingSample> subset(train.begin(), train.begin() + static_cast<long>(n));

  Model frozen = teacher.clone();
  frozen.set_requires_grad(false);
  StudentResult res{teacher.clone(), std::nullopt, {}, {}, {}};
  Model& student = res.student;
  nc::AdamW<float> opt(student.parameters(), {.weight_decay = cfg.weight_decay});
  std::optional<nc::AdamW<float>> sel_opt;
  if (cfg.uses_selector()) {
    res.selector = SelectorNet::init(cfg.selector_config(), derive_seed(cfg.seed, "selector-init"));
    sel_opt.emplace(res.selector->parameters(), nc::AdamWOptions{.weight_decay = cfg.weight_decay});
    res.table = sel::precompute_table(student.config, subset, cfg.scales);
  }
  std::vector<std::optional<TeacherCache>> cache(n);

  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto order = epoch_order(n, cfg.seed, epoch);
    RowAccumulator acc;
    std::vector<int> histogram(cfg.uses_selector() ? cfg.scales.size() : 0, 0);
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      opt.zero_grad();
      if (sel_opt) sel_opt->zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const std::size_t idx = order[i];
        if (cfg.uses_teacher() && !cache[idx]) cache[idx] = teacher_outputs(frozen, subset[idx], cfg.beam_k);
        StepInputs in;
        in.config = &cfg;
        in.sample = &subset[idx];
        in.teacher = cfg.uses_teacher() ? &*cache[idx] : nullptr;
        in.student = &student;
        in.selector = res.selector ? &*res.selector : nullptr;
        in.table = cfg.uses_selector() ? &res.table : nullptr;
        in.epoch = epoch;
        in.step = step++;
        in.loss_weight = 1.0 / static_cast<double>(end - b);
        StepLosses l = dld_step(in, cfg.debug_routing ? &res.routing : nullptr);
        if (l.decision) ++histogram[static_cast<std::size_t>(l.decision->chosen)];
        acc.add(l);
      }
      opt.step(lr);
      if (sel_opt) sel_opt->step(lr);
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    if (cfg.uses_selector()) row.tau = sel::temperature(epoch, cfg.tau_init, cfg.sigma);
    acc.fill(row);
    row.selection_histogram = histogram;
    if (cfg.log_eval_samples > 0 && !eval.empty()) {
      const auto limit = static_cast<std::size_t>(cfg.log_eval_samples);
      const SelectorNet* sel = res.selector ? &*res.selector : nullptr;
      row.eval_accuracy_hi = evaluate(student, sel, cfg.scales, eval, Policy::fixed(1.0), limit).metrics.accuracy;
      auto pol = evaluate(student, sel, cfg.scales, eval, regime_policy(cfg), limit);
      row.eval_accuracy_policy = pol.metrics.accuracy;
      row.mean_flops = pol.metrics.mean_flops;
    }
    res.log.rows.push_back(row);
    if (progress) progress(row);
  }
  return res;
}

}  // namespace dld::train
