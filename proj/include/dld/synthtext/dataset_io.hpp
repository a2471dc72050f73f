// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dld/synthtext/generator.hpp"
#include "dld/synthtext/sample.hpp"

namespace dld::synth {

inline constexpr char kSamplesMagic[8] = {'D', 'L', 'D', 'S', 'M', 'P', 'L', '1'};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string split;
  int num_samples = 0;
  std::vector<double> scales;
  std::uint64_t alphabet_hash = 0;
  std::vector<std::uint64_t> offsets;
  std::vector<std::uint32_t> sub_seeds;
  std::uint64_t data_hash = 0;  // FNV-1a of samples.bin
  GenConfig config;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SpottingSample> samples;
};

// Writes <dir>/manifest.json and <dir>/samples.bin. Returns the manifest hash.
std::uint64_t write_dataset(const std::vector<SpottingSample>& samples, const GenConfig& config,
                            const std::string& split, const std::filesystem::path& dir);

Dataset read_dataset(const std::filesystem::path& dir);

// FNV-1a of the manifest text as written.
std::uint64_t manifest_hash(const std::filesystem::path& dir);

std::string encode_sample(const SpottingSample& s);
SpottingSample decode_sample(std::string_view bytes, const std::string& context);

std::string hex64(std::uint64_t v);

}  // namespace dld::synth
