// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/synthtext/font.hpp"

#include <stdexcept>

#include "dld/common/random.hpp"

namespace dld::synth {

namespace {

// Classic 5×7 dot-matrix shapes.
constexpr std::uint8_t kBitmaps[kNumSymbols][kGlyphRows] = {
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // a
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // b
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // c
    {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // d
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // e
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // f
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // g
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // h
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // i
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // j
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // k
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // l
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // m
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // n
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // o
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // p
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // r
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // s
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // t
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // u
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // v
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // w
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // x
    {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04},  // y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // z
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

}  // namespace

GlyphFont::GlyphFont() : alphabet_("abcdefghijklmnopqrstuvwxyz0123456789") {
  for (const auto& rows : kBitmaps) {
    std::array<std::uint8_t, kGlyphRows> a{};
    for (int r = 0; r < kGlyphRows; ++r) a[static_cast<std::size_t>(r)] = rows[r];
    bitmaps_.push_back(a);
  }
}

const GlyphFont& GlyphFont::instance() {
  static const GlyphFont font;
  return font;
}

const std::array<std::uint8_t, kGlyphRows>& GlyphFont::rows(int token) const {
  if (!is_symbol(token)) throw std::out_of_range("glyph: token " + std::to_string(token) + " has no bitmap");
  return bitmaps_[static_cast<std::size_t>(token)];
}

bool GlyphFont::pixel(int token, int row, int col) const {
  return (rows(token)[static_cast<std::size_t>(row)] >> (kGlyphCols - 1 - col)) & 1u;
}

std::uint64_t GlyphFont::hash() const {
  std::uint64_t h = fnv1a64(alphabet_);
  for (const auto& rows : bitmaps_)
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(rows.data()), rows.size()), h);
  return h;
}

int GlyphFont::token_of(char c) const {
  auto pos = alphabet_.find(c);
  return pos == std::string::npos ? -1 : static_cast<int>(pos);
}

char GlyphFont::char_of(int token) const {
  return is_symbol(token) ? alphabet_[static_cast<std::size_t>(token)] : '?';
}

std::vector<int> encode_text(std::string_view text) {
  std::vector<int> out;
  for (char c : text) {
    int t = GlyphFont::instance().token_of(c);
    if (t < 0) throw std::invalid_argument(std::string("encode_text: character '") + c + "' not in alphabet");
    out.push_back(t);
  }
  return out;
}

std::string decode_tokens(const std::vector<int>& tokens) {
  std::string s;
  for (int t : tokens) {
    if (t == kEos) break;
    s.push_back(GlyphFont::instance().char_of(t));
  }
  return s;
}

}  // namespace dld::synth
