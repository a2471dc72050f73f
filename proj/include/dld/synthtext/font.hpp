// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dld::synth {

inline constexpr int kNumSymbols = 36;  // a-z, 0-9
inline constexpr int kBos = 36;
inline constexpr int kEos = 37;
inline constexpr int kPad = 38;
inline constexpr int kVocabSize = 39;
inline constexpr int kGlyphRows = 7;
inline constexpr int kGlyphCols = 5;

// 7×5 binary glyphs for the 36-symbol alphabet. Row bits are MSB-left (bit 4 = column 0).
class GlyphFont {
 public:
  static const GlyphFont& instance();

  std::string_view alphabet() const { return alphabet_; }
  bool pixel(int token, int row, int col) const;
  const std::array<std::uint8_t, kGlyphRows>& rows(int token) const;
  // FNV-1a over the alphabet and every bitmap row.
  std::uint64_t hash() const;

  int token_of(char c) const;  // -1 when c is outside the alphabet
  char char_of(int token) const;

 private:
  GlyphFont();
  std::string alphabet_;
  std::vector<std::array<std::uint8_t, kGlyphRows>> bitmaps_;
};

inline bool is_symbol(int token) { return token >= 0 && token < kNumSymbols; }

std::vector<int> encode_text(std::string_view text);
std::string decode_tokens(const std::vector<int>& tokens);  // stops at EOS; reserved ids become '?'

}  // namespace dld::synth
