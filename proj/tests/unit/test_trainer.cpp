// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "dld/synthtext/generator.hpp"
#include "dld/trainer/config.hpp"
#include "dld/trainer/evaluate.hpp"
#include "dld/trainer/io.hpp"
#include "dld/trainer/trainer.hpp"

namespace fs = std::filesystem;
namespace nc = dld::nc;
namespace rec = dld::rec;
namespace sel = dld::sel;
namespace synth = dld::synth;
namespace train = dld::train;

namespace {

const std::vector<synth::SpottingSample>& corpus() {
  static const auto samples = [] {
    synth::GenConfig g;
    g.seed = 7;
    return synth::generate_split(g, "train", 8);
  }();
  return samples;
}

train::TrainConfig tiny(train::Regime regime) {
  train::TrainConfig c;
  c.regime = regime;
  c.model = "downsized";
  c.epochs = 2;
  c.lr_drops = {1};
  c.batch_size = 2;
  c.max_train_samples = 4;
  c.log_eval_samples = 2;
  c.seed = 11;
  return c;
}

train::Model tiny_teacher() {
  return train::Model::init(rec::RecognizerConfig::downsized(), 5);
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dld_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_parameters(const train::Model& a, const train::Model& b, double tol) {
  auto pa = a.named_parameters(), pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first) return false;
    for (std::size_t k = 0; k < pa[i].second.numel(); ++k)
      if (std::fabs(pa[i].second[k] - pb[i].second[k]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, PaperLearningRates) {
  train::TrainConfig c;
  EXPECT_DOUBLE_EQ(train::learning_rate(c, 0), 1e-3);
  EXPECT_DOUBLE_EQ(train::learning_rate(c, 29), 1e-3);
  EXPECT_NEAR(train::learning_rate(c, 30), 1e-4, 1e-18);
  EXPECT_NEAR(train::learning_rate(c, 35), 1e-4, 1e-18);
  EXPECT_NEAR(train::learning_rate(c, 40), 1e-5, 1e-19);
  EXPECT_NEAR(train::learning_rate(c, 45), 1e-5, 1e-19);
}

TEST(Schedule, PiecewiseConstantAndNonIncreasing) {
  train::TrainConfig c;
  for (int e = 1; e < c.epochs; ++e) {
    const double prev = train::learning_rate(c, e - 1), cur = train::learning_rate(c, e);
    EXPECT_LE(cur, prev);
    if (e != 30 && e != 40) EXPECT_EQ(cur, prev);
  }
}

TEST(Config, Defaults) {
  train::TrainConfig c;
  EXPECT_EQ(c.epochs, 50);
  EXPECT_EQ(c.batch_size, 3);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.tau_init, 5.0);
  EXPECT_EQ(c.sigma, 0.965);
  EXPECT_EQ(c.lambda1, 1.0);
  EXPECT_EQ(c.lambda2, 1.0);
  EXPECT_EQ(c.lambda3, 1.0);
  EXPECT_EQ(c.kd.eta1, 1.0);
  EXPECT_EQ(c.kd.eta2, 1.0);
  EXPECT_EQ(c.fixed_student_scale, 0.5);
  EXPECT_EQ(c.beam_k, 1);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  auto c = train::parse_train_config(R"({"regime": "skd_only", "epochs": 12, "lr_drops": [4, 8], "gamma": 0.25,
                                         "scales": [0.4, 0.6], "feature_loss": "mae", "kd_mode": "logits",
                                         "seed": 99, "model": "downsized"})");
  EXPECT_EQ(c.regime, train::Regime::skd_only);
  EXPECT_EQ(c.epochs, 12);
  EXPECT_EQ(c.gamma, 0.25);
  EXPECT_EQ(c.feature_loss, dld::kd::FeatureLoss::mae);
  EXPECT_EQ(c.kd_mode, train::KdMode::logits);
  auto d = train::parse_train_config(train::train_config_to_json(c));
  EXPECT_EQ(train::train_config_to_json(d), train::train_config_to_json(c));
  EXPECT_EQ(d.scales, (std::vector<double>{0.4, 0.6}));
  EXPECT_EQ(d.seed, 99u);
}

TEST(Config, RejectsBadInput) {
  auto expect_key = [](const std::string& text, const std::string& key) {
    try {
      train::parse_train_config(text);
      ADD_FAILURE() << "accepted " << text;
    } catch (const dld::ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  expect_key(R"({"epochz": 3})", "epochz");
  expect_key(R"({"epochs": "many"})", "epochs");
  expect_key(R"({"epochs": 20})", "lr_drops");
  expect_key(R"({"lambda2": -1})", "lambda2");
  expect_key(R"({"scales": [0.5, 0.4]})", "scales");
  expect_key(R"({"regime": "mystery"})", "regime");
  expect_key(R"({"eta1": -0.5})", "eta1");
  expect_key(R"([1, 2])", "top level");
  expect_key(R"({"epochs": )", "invalid JSON");
  EXPECT_EQ(train::parse_regime("vanilla"), train::Regime::vanilla_multiscale);
  for (auto r : {train::Regime::teacher, train::Regime::vanilla_multiscale, train::Regime::skd_only,
                 train::Regime::drs_only, train::Regime::dld})
    EXPECT_EQ(train::parse_regime(train::regime_name(r)), r);
}

TEST(Policy, ParseAndFormat) {
  EXPECT_TRUE(train::Policy::parse("dynamic").dynamic);
  auto f = train::Policy::parse("fixed:0.5");
  EXPECT_FALSE(f.dynamic);
  EXPECT_EQ(f.scale, 0.5);
  EXPECT_EQ(train::Policy::parse(f.to_string()).scale, 0.5);
  EXPECT_THROW(train::Policy::parse("fixed:"), dld::ConfigError);
  EXPECT_THROW(train::Policy::parse("fixed:1.5"), dld::ConfigError);
  EXPECT_THROW(train::Policy::parse("adaptive"), dld::ConfigError);
  EXPECT_TRUE(train::regime_policy(tiny(train::Regime::dld)).dynamic);
  EXPECT_EQ(train::regime_policy(tiny(train::Regime::skd_only)).scale, 0.5);
}

TEST(TeacherStep, InitialLossNearUniformEntropy) {
  // Per decoding step at random init, over a handful of samples at the full model width.
  train::Model m = train::Model::init(rec::RecognizerConfig{}, 3);
  nc::NoGradGuard<float> guard;
  double nll = 0.0;
  int steps = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = corpus()[i];
    auto feats = rec::backbone_forward(m, rec::image_tensor<float>(s.image_hi));
    for (const auto& inst : s.instances) {
      auto f = rec::forward_instance(m, feats, inst, 1.0);
      nll += rec::sequence_nll(f.log_probs, inst.tokens).item();
      steps += static_cast<int>(inst.tokens.size()) + 1;
    }
  }
  const double per_step = nll / steps;
  EXPECT_NEAR(per_step, std::log(39.0), 0.1 * std::log(39.0));
}

TEST(TeacherStep, AccumulatesGradients) {
  auto cfg = tiny(train::Regime::teacher);
  auto m = tiny_teacher();
  m.zero_grad();
  auto l = train::teacher_step(cfg, corpus()[0], m, 0, 0, 1.0);
  EXPECT_TRUE(std::isfinite(l.rec));
  EXPECT_GE(l.scale, cfg.aug_min_scale);
  EXPECT_LE(l.scale, cfg.aug_max_scale);
  double g = 0.0;
  for (float v : m.out_w.grad()) g += std::fabs(v);
  EXPECT_GT(g, 0.0);
}

TEST(DldStep, RoutingContractHolds) {
  auto cfg = tiny(train::Regime::dld);
  auto teacher = tiny_teacher();
  auto student = teacher.clone();
  auto selector = train::SelectorNet::init(cfg.selector_config(), 3);
  auto table = sel::precompute_table(student.config, corpus(), cfg.scales);
  train::RoutingReport report;
  for (std::size_t i = 0; i < 4; ++i) {
    auto cache = train::teacher_outputs(teacher, corpus()[i], cfg.beam_k);
    train::StepInputs in;
    in.config = &cfg;
    in.sample = &corpus()[i];
    in.teacher = &cache;
    in.student = &student;
    in.selector = &selector;
    in.table = &table;
    in.epoch = static_cast<int>(i);
    in.step = i;
    auto l = train::dld_step(in, &report);
    ASSERT_TRUE(l.decision.has_value());
    EXPECT_EQ(l.scale, cfg.scales[static_cast<std::size_t>(l.decision->chosen)]);
    EXPECT_TRUE(std::isfinite(l.drs));
    EXPECT_TRUE(std::isfinite(l.skd));
    EXPECT_GE(l.roi, 0.0);
    EXPECT_GE(l.con, 0.0);
    EXPECT_GE(l.seq, 0.0);
  }
  EXPECT_EQ(report.checks, 4);
  EXPECT_TRUE(report.clean()) << report.drs_to_recognizer << " " << report.recognition_to_selector;
}

TEST(DldStep, TeacherEqualBranchesGiveZeroDrsLoss) {
  auto cfg = tiny(train::Regime::drs_only);
  cfg.scales = {1.0};
  cfg.gamma = 0.0;
  auto teacher = tiny_teacher();
  auto student = teacher.clone();
  auto selector = train::SelectorNet::init(cfg.selector_config(), 3);
  auto table = sel::precompute_table(student.config, corpus(), cfg.scales);
  auto cache = train::teacher_outputs(teacher, corpus()[1], 1);
  selector.zero_grad();
  train::StepInputs in{&cfg, &corpus()[1], &cache, &student, &selector, &table, 0, 0, 1.0};
  auto l = train::dld_step(in);
  EXPECT_NEAR(l.acc, 0.0, 1e-6);
  EXPECT_NEAR(l.drs, 0.0, 1e-6);
  for (const auto& p : selector.parameters())
    for (float v : p.grad()) EXPECT_EQ(v, 0.f);
}

TEST(DldStep, SkdOnlyUsesFixedScaleAndIsZeroAtIdentity) {
  auto cfg = tiny(train::Regime::skd_only);
  cfg.fixed_student_scale = 1.0;
  auto teacher = tiny_teacher();
  auto student = teacher.clone();
  auto cache = train::teacher_outputs(teacher, corpus()[2], 1);
  train::StepInputs in{&cfg, &corpus()[2], &cache, &student, nullptr, nullptr, 0, 0, 1.0};
  auto l = train::dld_step(in);
  EXPECT_EQ(l.scale, 1.0);
  EXPECT_NEAR(l.roi, 0.0, 1e-9);
  EXPECT_NEAR(l.con, 0.0, 1e-9);
  EXPECT_NEAR(l.logit, 0.0, 1e-6);
  EXPECT_TRUE(std::isnan(l.drs));
  EXPECT_FALSE(l.decision.has_value());
}

TEST(DldStep, VanillaNeedsNoTeacherOrSelector) {
  auto cfg = tiny(train::Regime::vanilla_multiscale);
  auto student = tiny_teacher();
  train::StepInputs in{&cfg, &corpus()[0], nullptr, &student, nullptr, nullptr, 0, 3, 1.0};
  auto l = train::dld_step(in);
  EXPECT_TRUE(std::isfinite(l.rec));
  EXPECT_TRUE(std::isnan(l.skd));
  EXPECT_TRUE(std::isnan(l.drs));
  EXPECT_GE(l.scale, cfg.aug_min_scale);
  EXPECT_LE(l.scale, cfg.aug_max_scale);
}

TEST(DldStep, MissingInputsRejected) {
  auto cfg = tiny(train::Regime::dld);
  auto student = tiny_teacher();
  train::StepInputs in{&cfg, &corpus()[0], nullptr, &student, nullptr, nullptr, 0, 0, 1.0};
  EXPECT_THROW(train::dld_step(in), dld::ContractViolation);
  auto tcfg = tiny(train::Regime::teacher);
  in.config = &tcfg;
  EXPECT_THROW(train::dld_step(in), dld::ContractViolation);
}

TEST(TrainTeacher, DeterministicCheckpoint) {
  auto cfg = tiny(train::Regime::teacher);
  const auto dir = scratch("det");
  auto a = train::train_teacher(cfg, corpus(), corpus());
  auto b = train::train_teacher(cfg, corpus(), corpus());
  train::save_recognizer(dir / "a.ckpt", a.model);
  train::save_recognizer(dir / "b.ckpt", b.model);
  EXPECT_EQ(train::file_hash(dir / "a.ckpt"), train::file_hash(dir / "b.ckpt"));
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  ASSERT_EQ(a.log.rows.size(), 2u);
  EXPECT_EQ(a.log.rows[0].epoch, 0);
  EXPECT_EQ(a.log.rows[1].epoch, 1);
  EXPECT_DOUBLE_EQ(a.log.rows[1].lr, cfg.lr * 0.1);
  fs::remove_all(dir);
}

TEST(TrainStudent, DldDeterministicWithCleanRouting) {
  auto cfg = tiny(train::Regime::dld);
  cfg.debug_routing = true;
  auto teacher = tiny_teacher();
  auto a = train::train_student(cfg, corpus(), corpus(), teacher);
  auto b = train::train_student(cfg, corpus(), corpus(), teacher);
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_TRUE(same_parameters(a.student, b.student, 0.0));
  EXPECT_TRUE(a.routing.clean());
  EXPECT_GT(a.routing.checks, 0);
  ASSERT_TRUE(a.selector.has_value());
  for (const auto& row : a.log.rows) {
    ASSERT_EQ(row.selection_histogram.size(), cfg.scales.size());
    EXPECT_EQ(std::accumulate(row.selection_histogram.begin(), row.selection_histogram.end(), 0), cfg.max_train_samples);
    EXPECT_NEAR(row.tau, sel::temperature(row.epoch, cfg.tau_init, cfg.sigma), 1e-12);
  }
}

TEST(TrainStudent, StartsFromTeacherWeights) {
  auto cfg = tiny(train::Regime::skd_only);
  cfg.epochs = 1;
  cfg.lr_drops = {};
  cfg.lr = 1e-30;
  cfg.log_eval_samples = 0;
  auto teacher = tiny_teacher();
  auto r = train::train_student(cfg, corpus(), corpus(), teacher);
  EXPECT_TRUE(same_parameters(r.student, teacher, 1e-6));
  EXPECT_FALSE(r.selector.has_value());
}

TEST(TrainStudent, TeacherRegimeRejected) {
  auto teacher = tiny_teacher();
  EXPECT_THROW(train::train_student(tiny(train::Regime::teacher), corpus(), corpus(), teacher), dld::ConfigError);
  EXPECT_THROW(train::train_teacher(tiny(train::Regime::teacher), {}, corpus()), dld::ConfigError);
}

TEST(TrainLog, CsvColumnsAndBlankCells) {
  train::TrainLog log;
  train::TrainLogRow r;
  r.epoch = 0;
  r.lr = 1e-3;
  r.l_total = 2.5;
  r.l_rec = 2.5;
  r.selection_histogram = {1, 2};
  log.rows.push_back(r);
  std::istringstream in(log.to_csv());
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header,
            "epoch,lr,tau,l_total,l_rec,l_drs,l_acc,l_flops,l_skd,l_roi,l_con,l_seq,l_logit_ablation,"
            "eval_accuracy_hi,eval_accuracy_policy,mean_selected_scale,mean_flops,selection_histogram");
  EXPECT_EQ(line, "0,0.001,,2.5,2.5,,,,,,,,,,,0,,1;2");
}

TEST(Evaluate, DynamicPolicyAccounting) {
  auto cfg = tiny(train::Regime::dld);
  auto model = tiny_teacher();
  auto selector = train::SelectorNet::init(cfg.selector_config(), 9);
  auto r = train::evaluate(model, &selector, cfg.scales, corpus(), train::Policy::selected());
  const auto& m = r.metrics;
  EXPECT_EQ(std::accumulate(m.histogram.begin(), m.histogram.end(), 0), static_cast<int>(corpus().size()));
  auto table = sel::precompute_table(model.config, corpus(), cfg.scales);
  double expect = 0.0;
  for (std::size_t k = 0; k < cfg.scales.size(); ++k)
    expect += m.histogram[k] * table.raw[k] / static_cast<double>(corpus().size());
  EXPECT_NEAR(m.mean_flops, expect, 1e-9 * expect);
  EXPECT_EQ(r.selections.size(), corpus().size());
  for (const auto& row : r.selections) {
    EXPECT_NEAR(std::accumulate(row.p.begin(), row.p.end(), 0.0), 1.0, 1e-5);
    EXPECT_EQ(row.chosen, static_cast<int>(std::max_element(row.p.begin(), row.p.end()) - row.p.begin()));
  }
  EXPECT_GT(m.selector_flops, 0.0);
  EXPECT_THROW(train::evaluate(model, nullptr, cfg.scales, corpus(), train::Policy::selected()), dld::ConfigError);
}

TEST(Evaluate, MetricsJsonRoundTrip) {
  auto model = tiny_teacher();
  auto r = train::evaluate(model, nullptr, {}, corpus(), train::Policy::fixed(0.5), 3);
  EXPECT_EQ(r.metrics.num_samples, 3);
  EXPECT_GE(r.metrics.accuracy, 0.0);
  EXPECT_LE(r.metrics.accuracy, 1.0);
  auto back = train::Metrics::from_json(r.metrics.to_json());
  EXPECT_EQ(back.to_json(), r.metrics.to_json());
  EXPECT_EQ(back.policy, "fixed:0.5");
}

TEST(FeatureDistanceReport, IdentityIsZeroAndOtherwisePositive) {
  auto teacher = tiny_teacher();
  auto same = train::feature_distance_report(teacher, teacher, corpus(), 1.0, 3);
  EXPECT_EQ(same.d_roi, 0.0);
  EXPECT_EQ(same.d_con, 0.0);
  auto low = train::feature_distance_report(teacher, teacher, corpus(), 0.5, 3);
  EXPECT_GT(low.d_roi, 0.0);
  EXPECT_GT(low.d_con, 0.0);
}

TEST(Io, CheckpointRoundTrips) {
  const auto dir = scratch("io");
  auto m = tiny_teacher();
  train::save_recognizer(dir / "r.ckpt", m);
  auto back = train::load_recognizer(dir / "r.ckpt");
  EXPECT_TRUE(same_parameters(m, back, 0.0));
  EXPECT_EQ(back.config.roi_h, m.config.roi_h);
  EXPECT_EQ(back.config.hidden, m.config.hidden);

  auto cfg = tiny(train::Regime::dld);
  auto s = train::SelectorNet::init(cfg.selector_config(), 4);
  train::save_selector(dir / "s.ckpt", s, cfg.scales);
  auto ls = train::load_selector(dir / "s.ckpt");
  EXPECT_EQ(ls.scales, cfg.scales);
  auto pa = s.named_parameters(), pb = ls.net.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].second.numel(); ++k) EXPECT_EQ(pa[i].second[k], pb[i].second[k]);
  EXPECT_THROW(train::load_selector(dir / "r.ckpt"), dld::FormatError);
  fs::remove_all(dir);
}

TEST(Io, TokensJsonDescribesVocabulary) {
  const std::string j = train::tokens_json();
  EXPECT_NE(j.find("\"vocab_size\": 39"), std::string::npos);
  EXPECT_NE(j.find("\"eos\": 37"), std::string::npos);
}

TEST(Io, OutputDirRefusesNonEmptyTarget) {
  const auto root = scratch("out");
  const auto target = root / "run";
  {
    train::OutputDir out(target, false);
    train::write_text(out / "a.txt", "one");
    out.commit();
  }
  EXPECT_EQ(train::read_text(target / "a.txt"), "one");
  EXPECT_THROW(train::OutputDir(target, false), dld::ConfigError);
  {
    train::OutputDir out(target, true);
    train::write_text(out / "b.txt", "two");
    EXPECT_TRUE(fs::exists(target / "a.txt"));
    out.commit();
  }
  EXPECT_FALSE(fs::exists(target / "a.txt"));
  EXPECT_EQ(train::read_text(target / "b.txt"), "two");
  {
    train::OutputDir out(root / "abandoned", false);
    train::write_text(out / "c.txt", "three");
  }
  EXPECT_FALSE(fs::exists(root / "abandoned"));
  std::size_t leftovers = 0;
  for (const auto& e : fs::directory_iterator(root)) leftovers += e.path().filename().string().find("staging") != std::string::npos;
  EXPECT_EQ(leftovers, 0u);
  fs::remove_all(root);
}
