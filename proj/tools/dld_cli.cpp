// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// dld: data generation, training regimes, evaluation, reporting and gradient verification.
// Exit codes: 0 success, 2 configuration/validation, 3 IO/format, 4 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dld/common/error.hpp"
#include "dld/numcore/gradcheck_suite.hpp"
#include "dld/synthtext/dataset_io.hpp"
#include "dld/synthtext/generator.hpp"
#include "dld/trainer/io.hpp"
#include "dld/trainer/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dld;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string slurp(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error(p.string() + ": no such file");
  return train::read_text(p);
}

// Accepts a bare training config or a resolved_config.json written by a previous run.
train::TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return {};
  const std::string text = slurp(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("command")) return train::parse_train_config(j["config"].dump());
  return train::parse_train_config(text);
}

synth::Dataset load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = fs::exists(root / split / "manifest.json") ? root / split : root;
  if (!fs::exists(dir / "manifest.json")) throw std::runtime_error(dir.string() + ": no dataset manifest");
  return synth::read_dataset(dir);
}

void print_row(const train::TrainLogRow& r) {
  std::fprintf(stderr, "epoch %d lr %.3g l_total %.5f l_rec %.5f", r.epoch, r.lr, r.l_total, r.l_rec);
  if (std::isfinite(r.l_skd)) std::fprintf(stderr, " l_skd %.5f", r.l_skd);
  if (std::isfinite(r.l_drs)) std::fprintf(stderr, " l_drs %.5f tau %.4f", r.l_drs, r.tau);
  std::fprintf(stderr, " scale %.4f", r.mean_selected_scale);
  if (std::isfinite(r.eval_accuracy_hi)) {
    std::fprintf(stderr, " acc_hi %.4f acc_policy %.4f", r.eval_accuracy_hi, r.eval_accuracy_policy);
  }
  std::fprintf(stderr, "\n");
}

std::string resolved(const std::string& command, const train::TrainConfig& cfg, const json& extra) {
  json j = extra;
  j["command"] = command;
  j["config"] = json::parse(train::train_config_to_json(cfg));
  return j.dump(2);
}

void write_eval_outputs(train::OutputDir& out, const train::EvalResult& r) {
  train::write_text(out / "metrics.json", r.metrics.to_json());
  if (!r.selections.empty()) train::write_text(out / "selections.csv", train::selections_csv(r.selections));
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                 bool force) {
  synth::GenConfig cfg = synth::parse_gen_config(slurp(config_path));
  if (seed) cfg.seed = *seed;
  cfg.validate();
  train::OutputDir out(out_dir, force);
  const auto train_samples = synth::generate_split(cfg, "train", cfg.num_samples);
  const std::uint64_t h_train = synth::write_dataset(train_samples, cfg, "train", out / "train");
  const auto eval_samples = synth::generate_split(cfg, "eval", cfg.num_eval_samples);
  const std::uint64_t h_eval = synth::write_dataset(eval_samples, cfg, "eval", out / "eval");
  train::write_text(out / "resolved_config.json", synth::gen_config_to_json(cfg));
  out.commit();
  std::printf("train manifest %s (%d samples)\n", synth::hex64(h_train).c_str(), cfg.num_samples);
  std::printf("eval manifest %s (%d samples)\n", synth::hex64(h_eval).c_str(), cfg.num_eval_samples);
  return kExitOk;
}

int cmd_train_teacher(train::TrainConfig cfg, const std::string& data, const std::string& out_dir, bool force) {
  cfg.regime = train::Regime::teacher;
  cfg.validate();
  train::OutputDir out(out_dir, force);
  const auto tr = load_split(data, "train");
  const auto ev = load_split(data, "eval");
  auto res = train::train_teacher(cfg, tr.samples, ev.samples, print_row);
  train::save_recognizer(out / "teacher.ckpt", res.model);
  train::write_text(out / "log.csv", res.log.to_csv());
  train::write_text(out / "tokens.json", train::tokens_json());
  train::write_text(out / "resolved_config.json",
                    resolved("train-teacher", cfg, {{"data", fs::absolute(data).string()}}));
  write_eval_outputs(out, train::evaluate(res.model, nullptr, cfg.scales, ev.samples, train::Policy::fixed(1.0)));
  const std::string hash = synth::hex64(train::file_hash(out / "teacher.ckpt"));
  out.commit();
  std::printf("teacher checkpoint %s\n", hash.c_str());
  return kExitOk;
}

int cmd_train(train::TrainConfig cfg, const std::string& data, const std::string& teacher_path,
              const std::string& out_dir, bool force) {
  if (cfg.regime == train::Regime::teacher) throw ConfigError("regime: use the train-teacher subcommand");
  if (cfg.regime != train::Regime::vanilla_multiscale && teacher_path.empty()) {
    throw ConfigError("--teacher: regime " + train::regime_name(cfg.regime) + " requires a teacher checkpoint");
  }
  cfg.validate();
  train::OutputDir out(out_dir, force);
  const auto tr = load_split(data, "train");
  const auto ev = load_split(data, "eval");
  train::Model teacher = teacher_path.empty()
                             ? train::Model::init(cfg.recognizer_config(), derive_seed(cfg.seed, "student-init"))
                             : train::load_recognizer(teacher_path);
  auto res = train::train_student(cfg, tr.samples, ev.samples, teacher, print_row);
  train::save_recognizer(out / "student.ckpt", res.student);
  if (res.selector) {
    train::save_selector(out / "selector.ckpt", *res.selector, cfg.scales);
    train::write_text(out / "flops_table.json", res.table.to_json());
  }
  train::write_text(out / "log.csv", res.log.to_csv());
  train::write_text(out / "tokens.json", train::tokens_json());
  json extra{{"data", fs::absolute(data).string()}};
  if (!teacher_path.empty()) extra["teacher"] = fs::absolute(teacher_path).string();
  train::write_text(out / "resolved_config.json", resolved("train", cfg, extra));
  write_eval_outputs(out, train::evaluate(res.student, res.selector ? &*res.selector : nullptr, cfg.scales,
                                          ev.samples, train::regime_policy(cfg)));
  out.commit();
  std::printf("run %s written\n", out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& selector, const std::string& data,
             const std::string& split, const std::string& policy_text, const std::string& out_dir, bool force,
             int limit) {
  const train::Policy policy = train::Policy::parse(policy_text);
  if (policy.dynamic && selector.empty()) throw ConfigError("--selector: dynamic policy requires a selector checkpoint");
  if (!policy.dynamic && !selector.empty()) throw ConfigError("--selector: only meaningful with --policy dynamic");
  train::Model model = train::load_recognizer(checkpoint);
  std::optional<train::LoadedSelector> sel;
  if (!selector.empty()) sel = train::load_selector(selector);
  const auto ds = load_split(data, split);
  const std::vector<double> scales = sel ? sel->scales : ds.manifest.scales;
  train::OutputDir out(out_dir, force);
  auto r = train::evaluate(model, sel ? &sel->net : nullptr, scales, ds.samples, policy,
                           static_cast<std::size_t>(std::max(0, limit)));
  write_eval_outputs(out, r);
  out.commit();
  std::printf("accuracy %.4f mean_flops %.4g mean_scale %.4f\n", r.metrics.accuracy, r.metrics.mean_flops,
              r.metrics.mean_scale);
  return kExitOk;
}

struct ReportRow {
  std::string regime;
  std::optional<double> gamma;
  train::Metrics metrics;
};

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir, bool force) {
  std::vector<ReportRow> rows;
  for (const auto& run : runs) {
    const fs::path dir(run);
    if (!fs::is_directory(dir)) throw std::runtime_error(run + ": not a run directory");
    json cfg;
    try {
      cfg = json::parse(slurp(dir / "resolved_config.json")).at("config");
    } catch (const json::exception& e) {
      throw FormatError(run + "/resolved_config.json: " + e.what());
    }
    ReportRow row;
    row.regime = cfg.value("regime", "");
    if (row.regime == "drs_only" || row.regime == "dld") row.gamma = cfg.value("gamma", 0.0);
    row.metrics = train::Metrics::from_json(slurp(dir / "metrics.json"));
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.regime != b.regime) return a.regime < b.regime;
    return a.gamma.value_or(-1.0) < b.gamma.value_or(-1.0);
  });
  std::string summary = "regime,gamma,accuracy,accuracy_sub_legible,mean_flops,mean_scale\n";
  char buf[256];
  for (const auto& r : rows) {
    std::string gamma = r.gamma ? (std::snprintf(buf, sizeof buf, "%g", *r.gamma), std::string(buf)) : "";
    std::string sub = r.metrics.accuracy_sub_legible
                          ? (std::snprintf(buf, sizeof buf, "%.6f", *r.metrics.accuracy_sub_legible), std::string(buf))
                          : "";
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%s,%.6g,%.6f\n", r.regime.c_str(), gamma.c_str(), r.metrics.accuracy,
                  sub.c_str(), r.metrics.mean_flops, r.metrics.mean_scale);
    summary += buf;
  }
  auto by_flops = rows;
  std::stable_sort(by_flops.begin(), by_flops.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.metrics.mean_flops < b.metrics.mean_flops; });
  std::string curve = "# mean_flops accuracy\n";
  for (const auto& r : by_flops) {
    std::snprintf(buf, sizeof buf, "%.6g %.6f\n", r.metrics.mean_flops, r.metrics.accuracy);
    curve += buf;
  }
  train::OutputDir out(out_dir, force);
  train::write_text(out / "summary.csv", summary);
  train::write_text(out / "accuracy_vs_flops.dat", curve);
  out.commit();
  std::fputs(summary.c_str(), stdout);
  return kExitOk;
}

int cmd_gradcheck(int seeds) {
  const auto entries = nc::run_gradcheck_suite(seeds);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-36s %s  max_rel_err %.3e%s%s\n", e.name.c_str(), e.ok ? "ok  " : "FAIL", e.max_rel_error,
                e.ok ? "" : "  ", e.message.c_str());
    ok = ok && e.ok;
  }
  std::printf("%zu checks, %d seeds each: %s\n", entries.size(), seeds, ok ? "all passed" : "FAILED");
  return ok ? kExitOk : kExitNumeric;
}

int cmd_feature_distance(const std::string& teacher, const std::string& student, const std::string& data,
                         double scale, int limit) {
  const auto t = train::load_recognizer(teacher);
  const auto s = train::load_recognizer(student);
  const auto ds = load_split(data, "eval");
  auto d = train::feature_distance_report(t, s, ds.samples, scale, static_cast<std::size_t>(std::max(0, limit)));
  std::printf("{\"scale\": %g, \"d_roi\": %.9g, \"d_con\": %.9g}\n", scale, d.d_roi, d.d_con);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic low-resolution distillation: synthetic corpus, training regimes, evaluation"};
  app.require_subcommand(1);
  bool force = false;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Generate the train/eval synthetic corpus");
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "GenConfig JSON (see docs/gen_config.json)")->required();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--seed", seed, "Override the config seed");
  gen->add_flag("--force", force, "Replace an existing output directory");

  std::string config_path, data, out_dir, teacher;
  std::optional<int> epochs;
  auto* tt = app.add_subcommand("train-teacher", "Train the high-resolution teacher");
  tt->add_option("--config", config_path, "TrainConfig JSON (see docs/train_config.json)");
  tt->add_option("--data", data, "Dataset directory from gen-data")->required();
  tt->add_option("--out", out_dir, "Run directory")->required();
  tt->add_option("--seed", seed, "Override the config seed");
  tt->add_option("--epochs", epochs, "Override the number of epochs");
  tt->add_flag("--force", force, "Replace an existing run directory");

  std::string regime;
  std::optional<double> gamma, fixed_scale;
  auto* tr = app.add_subcommand("train", "Train a student regime");
  tr->add_option("--regime", regime, "vanilla_multiscale | skd_only | drs_only | dld")->required();
  tr->add_option("--config", config_path, "TrainConfig JSON");
  tr->add_option("--data", data, "Dataset directory from gen-data")->required();
  tr->add_option("--teacher", teacher, "Teacher checkpoint (required except for vanilla_multiscale)");
  tr->add_option("--out", out_dir, "Run directory")->required();
  tr->add_option("--gamma", gamma, "FLOPs weight of the selector loss");
  tr->add_option("--fixed-scale", fixed_scale, "Student scale for skd_only / vanilla evaluation");
  tr->add_option("--seed", seed, "Override the config seed");
  tr->add_option("--epochs", epochs, "Override the number of epochs");
  tr->add_flag("--force", force, "Replace an existing run directory");

  std::string checkpoint, selector, policy = "fixed:1.0", split = "eval";
  int limit = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint under a fixed or dynamic policy");
  ev->add_option("--checkpoint", checkpoint, "Recognizer checkpoint")->required();
  ev->add_option("--selector", selector, "Selector checkpoint (dynamic policy)");
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split inside the dataset directory");
  ev->add_option("--policy", policy, "dynamic | fixed:<scale>");
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_option("--limit", limit, "Evaluate only the first N samples");
  ev->add_flag("--force", force, "Replace an existing output directory");

  std::vector<std::string> runs;
  auto* rp = app.add_subcommand("report", "Summarise run directories");
  rp->add_option("runs", runs, "Run directories")->required();
  rp->add_option("--out", out_dir, "Report directory")->required();
  rp->add_flag("--force", force, "Replace an existing report directory");

  int seeds = 5;
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference verification suite");
  gc->add_option("--seeds", seeds, "Seeded inputs per check")->check(CLI::Range(1, 100));

  std::string student;
  double scale = 0.5;
  auto* fd = app.add_subcommand("feature-distance", "Teacher/student feature distances on the eval split");
  fd->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  fd->add_option("--student", student, "Student checkpoint")->required();
  fd->add_option("--data", data, "Dataset directory")->required();
  fd->add_option("--scale", scale, "Student input scale");
  fd->add_option("--limit", limit, "Use only the first N samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, seed, force);
    if (tt->parsed() || tr->parsed()) {
      train::TrainConfig cfg = load_train_config(config_path);
      if (seed) cfg.seed = *seed;
      if (epochs) {
        // Drop epochs keep their relative position in the shortened schedule.
        std::vector<int> drops;
        for (int d : cfg.lr_drops) {
          const int moved = std::max(1, static_cast<int>(std::lround(static_cast<double>(d) * *epochs / cfg.epochs)));
          if (moved < *epochs && (drops.empty() || moved > drops.back())) drops.push_back(moved);
        }
        cfg.lr_drops = drops;
        cfg.epochs = *epochs;
      }
      if (tt->parsed()) return cmd_train_teacher(cfg, data, out_dir, force);
      cfg.regime = train::parse_regime(regime);
      if (gamma) cfg.gamma = *gamma;
      if (fixed_scale) cfg.fixed_student_scale = *fixed_scale;
      return cmd_train(cfg, data, teacher, out_dir, force);
    }
    if (ev->parsed()) return cmd_eval(checkpoint, selector, data, split, policy, out_dir, force, limit);
    if (rp->parsed()) return cmd_report(runs, out_dir, force);
    if (gc->parsed()) return cmd_gradcheck(seeds);
    if (fd->parsed()) return cmd_feature_distance(teacher, student, data, scale, limit);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure in " << e.component() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid request: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::runtime_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}
