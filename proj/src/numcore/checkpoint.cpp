// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/numcore/checkpoint.hpp"

#include "dld/common/binary_io.hpp"

namespace dld::nc {

std::string encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  io::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    std::size_t n = 1;
    for (auto d : r.shape) n *= d;
    if (n != r.data.size()) throw ShapeError("checkpoint: record '" + r.name + "' shape does not match data");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.u32(d);
    w.f32s(r.data);
  }
  return std::move(w.str());
}

std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes) {
  io::ByteReader r(bytes, "checkpoint header");
  if (r.bytes(8) != std::string_view(kCheckpointMagic, 8)) r.fail("bad magic (expected DLDCKPT1)");
  const std::uint32_t count = r.u32();
  std::vector<CheckpointRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("checkpoint record " + std::to_string(i));
    CheckpointRecord rec;
    const std::uint32_t name_len = r.u32();
    rec.name = std::string(r.bytes(name_len));
    r.set_context("checkpoint record " + std::to_string(i) + " ('" + rec.name + "')");
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.shape.push_back(r.u32());
      n *= rec.shape.back();
    }
    if (n * 4 > r.remaining()) r.fail("truncated data");
    rec.data.resize(n);
    r.f32s(rec.data);
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last record");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  io::write_file(path, encode_checkpoint(records));
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace dld::nc
