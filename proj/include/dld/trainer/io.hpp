// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dld/trainer/evaluate.hpp"

namespace dld::train {

namespace fs = std::filesystem;

// Recognizer checkpoints carry a "meta.recognizer" record [roi_h, roi_w, max_decode_len]; every
// other width is recovered from parameter shapes.
void save_recognizer(const fs::path& path, const Model& model);
Model load_recognizer(const fs::path& path);

// Selector checkpoints carry "meta.selector" [channels, stages, num_scales] and "meta.scales".
void save_selector(const fs::path& path, const SelectorNet& selector, const std::vector<double>& scales);
struct LoadedSelector {
  SelectorNet net;
  std::vector<double> scales;
};
LoadedSelector load_selector(const fs::path& path);

// {"alphabet": ..., "tokens": {"a": 0, ...}, "bos": 36, "eos": 37, "pad": 38, "vocab_size": 39}
std::string tokens_json();

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
std::uint64_t file_hash(const fs::path& path);

// Output directories are assembled in a sibling staging directory and renamed into place.
// An existing non-empty target is rejected (ConfigError) unless `force`.
class OutputDir {
 public:
  OutputDir(fs::path target, bool force);
  ~OutputDir();
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  const fs::path& staging() const { return staging_; }
  fs::path operator/(const std::string& name) const { return staging_ / name; }
  void commit();

 private:
  fs::path target_;
  fs::path staging_;
  bool force_;
  bool committed_ = false;
};

}  // namespace dld::train
