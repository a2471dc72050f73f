// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/trainer/io.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "dld/common/binary_io.hpp"
#include "dld/common/error.hpp"
#include "dld/common/random.hpp"
#include "dld/numcore/checkpoint.hpp"
#include "dld/synthtext/dataset_io.hpp"
#include "dld/synthtext/font.hpp"
#include "json.hpp"

namespace dld::train {

namespace {

const nc::CheckpointRecord& find(const std::vector<nc::CheckpointRecord>& records, const std::string& name,
                                 const fs::path& path) {
  for (const auto& r : records)
    if (r.name == name) return r;
  throw FormatError(path.string() + ": missing record '" + name + "'");
}

int dim(const nc::CheckpointRecord& r, std::size_t i, const fs::path& path) {
  if (i >= r.shape.size()) throw FormatError(path.string() + ": record '" + r.name + "' has too few dimensions");
  return static_cast<int>(r.shape[i]);
}

nc::CheckpointRecord meta(const std::string& name, const std::vector<float>& values) {
  return {name, {static_cast<std::uint32_t>(values.size())}, values};
}

}  // namespace

void save_recognizer(const fs::path& path, const Model& model) {
  auto records = nc::to_records(model.named_parameters());
  const auto& c = model.config;
  records.push_back(meta("meta.recognizer", {static_cast<float>(c.roi_h), static_cast<float>(c.roi_w),
                                             static_cast<float>(c.max_decode_len)}));
  nc::write_checkpoint(path, records);
}

Model load_recognizer(const fs::path& path) {
  const auto records = nc::read_checkpoint(path);
  rec::RecognizerConfig c;
  const auto& m = find(records, "meta.recognizer", path);
  if (m.data.size() != 3) throw FormatError(path.string() + ": malformed meta.recognizer");
  c.roi_h = static_cast<int>(m.data[0]);
  c.roi_w = static_cast<int>(m.data[1]);
  c.max_decode_len = static_cast<int>(m.data[2]);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& w = find(records, "backbone." + std::to_string(i) + ".weight", path);
    if (i == 0) c.backbone_channels[0] = dim(w, 1, path);
    c.backbone_channels[i + 1] = dim(w, 0, path);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& w = find(records, "head." + std::to_string(i) + ".weight", path);
    if (i == 0) c.head_channels[0] = dim(w, 1, path);
    c.head_channels[i + 1] = dim(w, 0, path);
  }
  c.hidden = dim(find(records, "encoder.fwd.w_hh", path), 0, path);
  c.decoder_hidden = dim(find(records, "decoder.lstm.w_hh", path), 0, path);
  c.attention_dim = dim(find(records, "decoder.att_state", path), 1, path);
  const auto& embed = find(records, "decoder.embed", path);
  c.vocab = dim(embed, 0, path);
  c.embed_dim = dim(embed, 1, path);
  if (c.vocab != synth::kVocabSize) throw FormatError(path.string() + ": vocabulary size " + std::to_string(c.vocab));
  Model model = Model::init(c, 0);
  nc::load_records(model.named_parameters(), records);
  return model;
}

void save_selector(const fs::path& path, const SelectorNet& selector, const std::vector<double>& scales) {
  auto records = nc::to_records(selector.named_parameters());
  const auto& c = selector.config;
  records.push_back(meta("meta.selector", {static_cast<float>(c.channels), static_cast<float>(c.stages),
                                           static_cast<float>(c.num_scales)}));
  records.push_back(meta("meta.scales", std::vector<float>(scales.begin(), scales.end())));
  nc::write_checkpoint(path, records);
}

LoadedSelector load_selector(const fs::path& path) {
  const auto records = nc::read_checkpoint(path);
  const auto& m = find(records, "meta.selector", path);
  if (m.data.size() != 3) throw FormatError(path.string() + ": malformed meta.selector");
  sel::SelectorConfig c;
  c.channels = static_cast<int>(m.data[0]);
  c.stages = static_cast<int>(m.data[1]);
  c.num_scales = static_cast<int>(m.data[2]);
  LoadedSelector out{SelectorNet::init(c, 0), {}};
  // Scales are stored as f32; decimal scales are recovered exactly by rounding to 1e-6.
  for (float s : find(records, "meta.scales", path).data) out.scales.push_back(std::round(s * 1e6) / 1e6);
  if (static_cast<int>(out.scales.size()) != c.num_scales) {
    throw FormatError(path.string() + ": scale list does not match selector outputs");
  }
  nc::load_records(out.net.named_parameters(), records);
  return out;
}

std::string tokens_json() {
  const auto& font = synth::GlyphFont::instance();
  nlohmann::json tokens = nlohmann::json::object();
  for (int t = 0; t < synth::kNumSymbols; ++t) tokens[std::string(1, font.char_of(t))] = t;
  nlohmann::json j{{"alphabet", std::string(font.alphabet())},
                   {"tokens", tokens},
                   {"bos", synth::kBos},
                   {"eos", synth::kEos},
                   {"pad", synth::kPad},
                   {"vocab_size", synth::kVocabSize},
                   {"alphabet_hash", synth::hex64(font.hash())}};
  return j.dump(2);
}

std::string read_text(const fs::path& path) { return io::read_file(path); }

void write_text(const fs::path& path, const std::string& text) { io::write_file(path, text); }

std::uint64_t file_hash(const fs::path& path) { return fnv1a64(io::read_file(path)); }

OutputDir::OutputDir(fs::path target, bool force) : target_(std::move(target)), force_(force) {
  if (fs::exists(target_)) {
    if (!fs::is_directory(target_)) throw ConfigError(target_.string() + ": exists and is not a directory");
    if (!fs::is_empty(target_) && !force_) {
      throw ConfigError(target_.string() + ": output directory is not empty (use --force to replace it)");
    }
  }
  const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const auto tick = static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  staging_ = parent / ("." + target_.filename().string() + ".staging-" + synth::hex64(splitmix64(tick)).substr(0, 8));
  fs::create_directories(staging_);
}

OutputDir::~OutputDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void OutputDir::commit() {
  if (fs::exists(target_)) fs::remove_all(target_);
  fs::rename(staging_, target_);
  committed_ = true;
}

}  // namespace dld::train
