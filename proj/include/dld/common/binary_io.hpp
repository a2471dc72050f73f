// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

#include "dld/common/error.hpp"

namespace dld::io {

// Appends little-endian encodings to a byte string.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  std::size_t size() const { return out_.size(); }
  std::string& str() { return out_; }

 private:
  template <class U>
  void put(U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.append(buf, sizeof(U));
  }
  std::string out_;
};

// Bounds-checked little-endian reader; every failure names `context`.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (auto& x : out) x = f32();
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void seek(std::size_t p) {
    if (p > data_.size()) fail("offset " + std::to_string(p) + " beyond end");
    pos_ = p;
  }
  void set_context(std::string c) { context_ = std::move(c); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(context_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) {
      fail("truncated (need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
           std::to_string(data_.size() - pos_) + ")");
    }
  }
  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace dld::io
