// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/synthtext/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>

#include "dld/common/binary_io.hpp"
#include "dld/common/error.hpp"
#include "dld/common/random.hpp"
#include "dld/synthtext/font.hpp"
#include "json.hpp"

namespace dld::synth {

namespace {

void write_image(io::ByteWriter& w, const Image& img) {
  w.u32(3);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u32(static_cast<std::uint32_t>(img.width));
  w.f32s(img.pixels);
}

Image read_image(io::ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank != 3) r.fail("image tensor rank " + std::to_string(rank) + " (expected 3)");
  const std::uint32_t c = r.u32(), h = r.u32(), w = r.u32();
  if (c != 1) r.fail("image tensor has " + std::to_string(c) + " channels (expected 1)");
  if (h == 0 || w == 0 || h > 4096 || w > 4096) r.fail("implausible image extents");
  Image img(static_cast<int>(h), static_cast<int>(w));
  r.f32s(img.pixels);
  return img;
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string encode_sample(const SpottingSample& s) {
  io::ByteWriter w;
  w.u64(s.seed);
  w.u32(s.sub_seed);
  w.u32(static_cast<std::uint32_t>(s.instances.size()));
  for (const auto& inst : s.instances) {
    w.i32(inst.box.x);
    w.i32(inst.box.y);
    w.i32(inst.box.w);
    w.i32(inst.box.h);
    w.u32(static_cast<std::uint32_t>(inst.glyph_height));
    w.u32(static_cast<std::uint32_t>(inst.tokens.size()));
    for (int t : inst.tokens) w.u32(static_cast<std::uint32_t>(t));
  }
  write_image(w, s.image_hi);
  w.u32(static_cast<std::uint32_t>(s.images_lo.size()));
  for (const auto& [scale, img] : s.images_lo) {
    w.u64(std::bit_cast<std::uint64_t>(scale));
    write_image(w, img);
  }
  return std::move(w.str());
}

SpottingSample decode_sample(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  SpottingSample s;
  s.seed = r.u64();
  s.sub_seed = r.u32();
  const std::uint32_t n = r.u32();
  if (n > 64) r.fail("implausible instance count " + std::to_string(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    TextInstance inst;
    inst.box = {r.i32(), r.i32(), r.i32(), r.i32()};
    inst.glyph_height = static_cast<int>(r.u32());
    const std::uint32_t len = r.u32();
    if (len > 64) r.fail("implausible text length " + std::to_string(len));
    for (std::uint32_t k = 0; k < len; ++k) {
      const auto t = static_cast<int>(r.u32());
      if (!is_symbol(t)) r.fail("token id " + std::to_string(t) + " is not an alphabet symbol");
      inst.tokens.push_back(t);
    }
    s.instances.push_back(std::move(inst));
  }
  s.image_hi = read_image(r);
  const std::uint32_t ns = r.u32();
  if (ns > 64) r.fail("implausible scale count " + std::to_string(ns));
  for (std::uint32_t i = 0; i < ns; ++i) {
    const double scale = std::bit_cast<double>(r.u64());
    s.images_lo.emplace_back(scale, read_image(r));
  }
  if (r.remaining() != 0) r.fail("trailing bytes in record");
  return s;
}

std::uint64_t write_dataset(const std::vector<SpottingSample>& samples, const GenConfig& config,
                            const std::string& split, const std::filesystem::path& dir) {
  if (samples.empty()) throw ContractViolation("write_dataset: sample list is empty");
  std::filesystem::create_directories(dir);
  io::ByteWriter bin;
  bin.bytes(std::string_view(kSamplesMagic, 8));
  std::vector<std::uint64_t> offsets;
  std::vector<std::uint32_t> sub_seeds;
  for (const auto& s : samples) {
    offsets.push_back(bin.size());
    sub_seeds.push_back(s.sub_seed);
    bin.bytes(encode_sample(s));
  }
  const std::string& data = bin.str();

  nlohmann::ordered_json m;
  m["format"] = "dld-synthtext/1";
  m["split"] = split;
  m["seed"] = config.seed;
  m["num_samples"] = samples.size();
  std::vector<double> scales;
  for (const auto& [s, img] : samples.front().images_lo) scales.push_back(s);
  m["scales"] = scales;
  m["alphabet_hash"] = hex64(GlyphFont::instance().hash());
  m["canvas_size"] = config.canvas_size;
  m["config"] = nlohmann::ordered_json::parse(gen_config_to_json(config));
  m["samples_bin_bytes"] = data.size();
  m["samples_bin_fnv1a"] = hex64(fnv1a64(data));
  m["offsets"] = offsets;
  m["sub_seeds"] = sub_seeds;
  const std::string text = m.dump(1) + "\n";
  io::write_file(dir / "samples.bin", data);
  io::write_file(dir / "manifest.json", text);
  return fnv1a64(text);
}

std::uint64_t manifest_hash(const std::filesystem::path& dir) {
  return fnv1a64(io::read_file(dir / "manifest.json"));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  nlohmann::json m;
  const std::string manifest_text = io::read_file(dir / "manifest.json");
  try {
    m = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: invalid JSON: " + std::string(e.what()));
  }
  auto& man = ds.manifest;
  try {
    man.seed = m.at("seed").get<std::uint64_t>();
    man.split = m.at("split").get<std::string>();
    man.num_samples = m.at("num_samples").get<int>();
    man.scales = m.at("scales").get<std::vector<double>>();
    man.offsets = m.at("offsets").get<std::vector<std::uint64_t>>();
    man.sub_seeds = m.at("sub_seeds").get<std::vector<std::uint32_t>>();
    man.alphabet_hash = std::stoull(m.at("alphabet_hash").get<std::string>(), nullptr, 16);
    man.data_hash = std::stoull(m.at("samples_bin_fnv1a").get<std::string>(), nullptr, 16);
    man.config = parse_gen_config(m.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw FormatError("manifest.json: config: " + std::string(e.what()));
  }
  for (std::size_t i = 1; i < man.scales.size(); ++i) {
    if (!(man.scales[i] > man.scales[i - 1])) {
      throw FormatError("manifest.json: scales not strictly increasing at index " + std::to_string(i));
    }
  }
  if (man.alphabet_hash != GlyphFont::instance().hash()) throw FormatError("manifest.json: alphabet hash mismatch");
  if (static_cast<std::size_t>(man.num_samples) != man.offsets.size()) {
    throw FormatError("manifest.json: num_samples does not match offset count");
  }

  const std::string data = io::read_file(dir / "samples.bin");
  if (data.size() < 8 || std::string_view(data).substr(0, 8) != std::string_view(kSamplesMagic, 8)) {
    throw FormatError("samples.bin: bad magic (expected DLDSMPL1)");
  }
  for (std::size_t i = 0; i < man.offsets.size(); ++i) {
    const std::uint64_t begin = man.offsets[i];
    const std::uint64_t end = i + 1 < man.offsets.size() ? man.offsets[i + 1] : data.size();
    const std::string context = "samples.bin record " + std::to_string(i);
    if (begin < 8 || end <= begin || end > data.size()) {
      throw FormatError(context + ": offsets out of order or beyond end of file");
    }
    auto s = decode_sample(std::string_view(data).substr(begin, end - begin), context);
    if (s.images_lo.size() != man.scales.size()) throw FormatError(context + ": scale count differs from manifest");
    for (std::size_t k = 0; k < man.scales.size(); ++k) {
      if (s.images_lo[k].first != man.scales[k]) {
        throw FormatError(context + ": scale " + std::to_string(k) + " differs from manifest");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dld::synth
