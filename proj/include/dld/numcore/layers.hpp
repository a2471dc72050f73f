// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dld/common/random.hpp"
#include "dld/numcore/checkpoint.hpp"
#include "dld/numcore/ops.hpp"

namespace dld::nc {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
Tensor<T> uniform_parameter(Shape shape, double bound, Pcg32& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <class T>
struct ConvLayer {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  int stride = 1;
  int padding = 1;

  static ConvLayer init(int in, int out, int kernel, int stride, int padding, Pcg32& rng) {
    ConvLayer l;
    const double fan_in = static_cast<double>(in) * kernel * kernel;
    l.weight = uniform_parameter<T>({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
    l.bias = Tensor<T>::zeros({out}, true);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add_channel_bias(conv2d(x, weight, stride, padding), bias); }
};

// Unidirectional LSTM parameters; gate order (input, forget, cell, output).
template <class T>
struct LstmLayer {
  Tensor<T> w_ih;  // [in, 4H]
  Tensor<T> w_hh;  // [H, 4H]
  Tensor<T> bias;  // [4H]

  int hidden() const { return w_hh.dim(0); }

  static LstmLayer init(int in, int hidden, Pcg32& rng) {
    LstmLayer l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    l.w_ih = uniform_parameter<T>({in, 4 * hidden}, bound, rng);
    l.w_hh = uniform_parameter<T>({hidden, 4 * hidden}, bound, rng);
    std::vector<T> b(static_cast<std::size_t>(4 * hidden), T{0});
    for (int j = 0; j < hidden; ++j) b[static_cast<std::size_t>(hidden + j)] = T{1};
    l.bias = Tensor<T>::from({4 * hidden}, std::move(b), true);
    return l;
  }

  // Runs over the rows of seq[N×in]; returns hidden states [N×H] in input order.
  Tensor<T> run(const Tensor<T>& seq, bool reverse) const {
    const int n = seq.dim(0);
    const int h = hidden();
    Tensor<T> projected = add_bias(matmul(seq, w_ih), bias);
    Tensor<T> hs = Tensor<T>::zeros({1, h});
    Tensor<T> cs = Tensor<T>::zeros({1, h});
    std::vector<Tensor<T>> outputs(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const int t = reverse ? n - 1 - k : k;
      Tensor<T> gates = add(slice_rows(projected, t, 1), matmul(hs, w_hh));
      Tensor<T> hc = lstm_cell(gates, cs);
      hs = slice_cols(hc, 0, h);
      cs = slice_cols(hc, h, h);
      outputs[static_cast<std::size_t>(t)] = hs;
    }
    return concat_rows(outputs);
  }
};

template <class T>
void append_conv(NamedTensors<T>& out, const std::string& prefix, const ConvLayer<T>& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

template <class T>
void append_lstm(NamedTensors<T>& out, const std::string& prefix, const LstmLayer<T>& l) {
  out.emplace_back(prefix + ".w_ih", l.w_ih);
  out.emplace_back(prefix + ".w_hh", l.w_hh);
  out.emplace_back(prefix + ".bias", l.bias);
}

template <class T>
std::vector<CheckpointRecord> to_records(const NamedTensors<T>& params) {
  std::vector<CheckpointRecord> out;
  for (const auto& [name, t] : params) {
    CheckpointRecord r;
    r.name = name;
    for (int d : t.shape()) r.shape.push_back(static_cast<std::uint32_t>(d));
    for (T v : t.data()) r.data.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  }
  return out;
}

// Copies record values into identically named and shaped parameters; every parameter must be present.
template <class T>
void load_records(const NamedTensors<T>& params, const std::vector<CheckpointRecord>& records) {
  for (const auto& [name, t] : params) {
    const CheckpointRecord* rec = nullptr;
    for (const auto& r : records)
      if (r.name == name) rec = &r;
    if (!rec) throw FormatError("checkpoint: missing parameter '" + name + "'");
    Shape shape(rec->shape.begin(), rec->shape.end());
    if (shape != t.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                        to_string(t.shape()));
    }
    auto dst = Tensor<T>(t).mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec->data[i]);
  }
}

// Element-wise copy between structurally identical parameter lists (optionally across scalar types).
template <class T, class U>
void copy_values(const NamedTensors<T>& dst, const NamedTensors<U>& src) {
  if (dst.size() != src.size()) throw ContractViolation("copy_values: parameter lists differ in length");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].second.shape() != src[k].second.shape()) {
      throw ContractViolation("copy_values: shape mismatch for '" + dst[k].first + "'");
    }
    auto d = Tensor<T>(dst[k].second).mutable_data();
    auto s = src[k].second.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(s[i]);
  }
}

template <class T>
std::size_t parameter_count(const NamedTensors<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.second.numel();
  return n;
}

}  // namespace dld::nc
