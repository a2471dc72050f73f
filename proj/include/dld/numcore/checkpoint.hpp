// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dld::nc {

// One named parameter array. On disk the container is:
//   "DLDCKPT1" | u32 count | count × (u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data[])
// with every integer and float little-endian.
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'D', 'C', 'K', 'P', 'T', '1'};

std::string encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

}  // namespace dld::nc
