// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dld/numcore/gradcheck.hpp"
#include "dld/numcore/optim.hpp"
#include "dld/recognizer/beam_search.hpp"
#include "dld/recognizer/metrics.hpp"
#include "dld/recognizer/model.hpp"
#include "dld/synthtext/generator.hpp"

namespace nc = dld::nc;
namespace rec = dld::rec;
namespace synth = dld::synth;
using Tf = nc::Tensor<float>;
using Td = nc::Tensor<double>;
using Model = rec::Recognizer<float>;

namespace {

Tf random_tensor(nc::Shape shape, dld::Pcg32& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(nc::numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tf::from(std::move(shape), std::move(v));
}

Td random_double(nc::Shape shape, dld::Pcg32& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from(std::move(shape), std::move(v));
}

void zero_all(nc::LstmLayer<float>& l) {
  for (auto t : {l.w_ih, l.w_hh, l.bias}) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.f);
}

// Per-step log-probability table over a tiny vocabulary; token `eos` ends a hypothesis.
struct TableModel {
  struct State {
    int step = 0;
    std::vector<int> prefix;
  };
  std::vector<std::vector<double>> table;  // [step][token], stationary in the prefix
  bool prefix_dependent = false;
  int eos_id = 2;

  State initial_state() const { return {}; }
  std::vector<double> next_log_probs(State& s, int prev) const {
    if (prev >= 0) s.prefix.push_back(prev);
    std::vector<double> lp = table.at(static_cast<std::size_t>(s.step++));
    if (prefix_dependent) {
      std::uint64_t h = 1469598103934665603ULL;
      for (int t : s.prefix) h = dld::splitmix64(h ^ static_cast<std::uint64_t>(t + 7));
      dld::Pcg32 r(h);
      double z = 0.0;
      for (auto& v : lp) {
        v += r.uniform(-2.0, 2.0);
        z += std::exp(v);
      }
      for (auto& v : lp) v -= std::log(z);
    }
    return lp;
  }
  int bos() const { return -1; }
  int eos() const { return eos_id; }
  bool emits(int) const { return true; }
};

std::vector<std::vector<double>> random_table(dld::Pcg32& rng, int steps, int vocab) {
  std::vector<std::vector<double>> t(static_cast<std::size_t>(steps));
  for (auto& row : t) {
    double z = 0.0;
    for (int v = 0; v < vocab; ++v) {
      row.push_back(rng.uniform(-3.0, 0.0));
      z += std::exp(row.back());
    }
    for (auto& v : row) v -= std::log(z);
  }
  return t;
}

// Best score over all sequences of length ≤ max_len that end in EOS or reach the cap.
rec::BeamHypothesis exhaustive_best(TableModel& m, int max_len) {
  rec::BeamHypothesis best{{}, -std::numeric_limits<double>::infinity()};
  std::function<void(TableModel::State, std::vector<int>, double, int)> go = [&](TableModel::State s, std::vector<int> toks,
                                                                                 double lp, int prev) {
    auto dist = m.next_log_probs(s, prev);
    for (int v = 0; v < static_cast<int>(dist.size()); ++v) {
      auto t = toks;
      t.push_back(v);
      const double score = lp + dist[static_cast<std::size_t>(v)];
      if (v == m.eos() || static_cast<int>(t.size()) == max_len) {
        if (score > best.logprob || (score == best.logprob && t < best.tokens)) best = {t, score};
      } else {
        go(s, t, score, v);
      }
    }
  };
  go(m.initial_state(), {}, 0.0, m.bos());
  return best;
}

synth::TextInstance instance_for(const synth::SpottingSample& s) { return s.instances.front(); }

}  // namespace

TEST(Backbone, ZeroImageZeroBiasGivesZeroFeatures) {
  Model m = Model::init({}, 1);
  nc::NoGradGuard<float> g;
  Tf f = rec::backbone_forward(m, Tf::zeros({1, 24, 24}));
  for (float v : f.data()) EXPECT_EQ(v, 0.f);
}

TEST(Backbone, OutputShapeAndStride) {
  Model m = Model::init({}, 1);
  nc::NoGradGuard<float> g;
  EXPECT_EQ(rec::backbone_forward(m, Tf::zeros({1, 192, 192})).shape(), (nc::Shape{32, 48, 48}));
  EXPECT_EQ(rec::backbone_forward(m, Tf::zeros({1, 58, 58})).shape(), (nc::Shape{32, 15, 15}));
}

TEST(Backbone, TooSmallImageRejected) {
  Model m = Model::init({}, 1);
  EXPECT_THROW(rec::backbone_forward(m, Tf::zeros({1, 7, 12})), dld::ShapeError);
  EXPECT_THROW(rec::backbone_forward(m, Tf::zeros({2, 12, 12})), dld::ShapeError);
}

TEST(Backbone, Deterministic) {
  Model a = Model::init({}, 9), b = Model::init({}, 9);
  dld::Pcg32 rng(4);
  Tf img = random_tensor({1, 32, 32}, rng, 0, 1);
  nc::NoGradGuard<float> g;
  Tf fa = rec::backbone_forward(a, img), fb = rec::backbone_forward(b, img);
  EXPECT_TRUE(std::equal(fa.data().begin(), fa.data().end(), fb.data().begin()));
}

TEST(RoiCrop, ConstantMapGivesConstant) {
  nc::NoGradGuard<float> g;
  auto roi = rec::roi_crop(Tf::full({3, 12, 12}, 0.25f), synth::BoxPx{5, 7, 20, 9}, 1.0, 8, 32);
  EXPECT_EQ(roi.tensor.shape(), (nc::Shape{3, 8, 32}));
  for (float v : roi.tensor.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
}

TEST(RoiCrop, WholeMapEqualsResize) {
  dld::Pcg32 rng(3);
  Tf f = random_tensor({2, 6, 10}, rng);
  nc::NoGradGuard<float> g;
  // At scale 0.5 a 48×80 box maps to the full 6×10 feature map.
  auto roi = rec::roi_crop(f, synth::BoxPx{0, 0, 80, 48}, 0.5, 8, 32);
  Tf r = nc::bilinear_resize(f, 8, 32);
  for (std::size_t i = 0; i < r.numel(); ++i) EXPECT_NEAR(roi.tensor[i], r[i], 1e-6);
  EXPECT_FALSE(roi.clamped);
}

TEST(RoiCrop, ZeroExtentClampedAndFlagged) {
  nc::NoGradGuard<float> g;
  auto roi = rec::roi_crop(Tf::full({1, 10, 10}, 1.f), synth::BoxPx{8, 8, 1, 1}, 0.3, 8, 32);
  EXPECT_TRUE(roi.clamped);
  EXPECT_EQ(roi.tensor.shape(), (nc::Shape{1, 8, 32}));
}

TEST(RoiCrop, GradcheckWrtFeatures) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    dld::Pcg32 rng(seed);
    Td w = random_double({2, 8, 32}, rng);
    auto r = nc::gradcheck<double>(
        [&](const std::vector<Td>& in) {
          return nc::sum(nc::mul(rec::roi_crop(in[0], synth::BoxPx{4, 3, 21, 13}, 0.8, 8, 32).tensor, w));
        },
        {random_double({2, 6, 7}, rng)});
    EXPECT_TRUE(r.ok) << r.message;
  }
}

TEST(Pipeline, PropertyRoiShapeIndependentOfScale) {
  Model m = Model::init({}, 2);
  synth::GenConfig c;
  nc::NoGradGuard<float> g;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = synth::render_sample(seed, c);
    for (double scale : {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0}) {
      Tf f = rec::backbone_forward(m, rec::image_tensor<float>(s.image_at(scale)));
      for (const auto& inst : s.instances) {
        auto out = rec::forward_instance(m, f, inst, scale);
        EXPECT_EQ(out.roi.tensor.shape(), (nc::Shape{32, 8, 32}));
        EXPECT_EQ(out.context.shape(), (nc::Shape{32, 128}));
        EXPECT_EQ(out.log_probs.shape(), (nc::Shape{static_cast<int>(inst.tokens.size()) + 1, 39}));
      }
    }
  }
}

TEST(EncodeContext, SequenceLengthIsRoiWidth) {
  Model m = Model::init({}, 5);
  dld::Pcg32 rng(5);
  nc::NoGradGuard<float> g;
  for (int k = 0; k < 3; ++k) {
    Tf ctx = rec::encode_context(m, random_tensor({32, 8, 32}, rng, -k, k + 1));
    EXPECT_EQ(ctx.shape(), (nc::Shape{32, 128}));
    for (float v : ctx.data()) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(rec::encode_context(m, Tf::zeros({32, 8, 31})), dld::ShapeError);
}

TEST(EncodeContext, ReversingColumnsMirrorsDirections) {
  Model m = Model::init({}, 6);
  // Horizontally symmetric head kernels make the conv stack commute with column reversal.
  for (auto& layer : m.head) {
    auto w = layer.weight.mutable_data();
    const int k = layer.weight.dim(3);
    for (std::size_t base = 0; base < w.size(); base += static_cast<std::size_t>(k)) {
      for (int c = 0; c < k / 2; ++c) w[base + static_cast<std::size_t>(k - 1 - c)] = w[base + static_cast<std::size_t>(c)];
    }
  }
  dld::Pcg32 rng(6);
  Tf roi = random_tensor({32, 8, 32}, rng);
  std::vector<float> rev(roi.numel());
  for (int c = 0; c < 32 * 8; ++c)
    for (int x = 0; x < 32; ++x) rev[static_cast<std::size_t>(c * 32 + x)] = roi[static_cast<std::size_t>(c * 32 + 31 - x)];
  Tf roi_rev = Tf::from({32, 8, 32}, rev);
  nc::NoGradGuard<float> g;

  // Forward weights zeroed: the forward half ignores the input entirely.
  Model z = m.clone();
  zero_all(z.encoder_fwd);
  Tf a = rec::encode_context(z, roi), b = rec::encode_context(z, roi_rev);
  for (int t = 0; t < 32; ++t)
    for (int j = 0; j < 64; ++j) EXPECT_EQ(a[static_cast<std::size_t>(t * 128 + j)], b[static_cast<std::size_t>(t * 128 + j)]);

  // Forward weights set to the backward ones: the backward states on reversed input are the
  // forward states on the original input, read in reverse.
  Model s = m.clone();
  nc::copy_values<float, float>({{"w_ih", s.encoder_fwd.w_ih}, {"w_hh", s.encoder_fwd.w_hh}, {"b", s.encoder_fwd.bias}},
                                {{"w_ih", s.encoder_bwd.w_ih}, {"w_hh", s.encoder_bwd.w_hh}, {"b", s.encoder_bwd.bias}});
  Tf c = rec::encode_context(s, roi), d = rec::encode_context(s, roi_rev);
  for (int t = 0; t < 32; ++t)
    for (int j = 0; j < 64; ++j)
      EXPECT_NEAR(d[static_cast<std::size_t>(t * 128 + 64 + j)], c[static_cast<std::size_t>((31 - t) * 128 + j)], 1e-5);
}

TEST(EncodeContext, GradcheckDownsized) {
  const auto cfg = rec::RecognizerConfig::downsized();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto m = rec::Recognizer<double>::init(cfg, seed);
    for (auto& [name, t] : m.named_parameters())
      if (name.find("head") == 0 && name.find("bias") != std::string::npos)
        for (auto& v : nc::Tensor<double>(t).mutable_data()) v = 0.1;
    dld::Pcg32 rng(seed);
    Td w = random_double({cfg.roi_w, cfg.context_dim()}, rng);
    auto r = nc::gradcheck<double>([&](const std::vector<Td>& in) { return nc::sum(nc::mul(rec::encode_context(m, in[0]), w)); },
                                   {random_double({cfg.head_channels[0], cfg.roi_h, cfg.roi_w}, rng)});
    EXPECT_TRUE(r.ok) << r.message;
  }
}

TEST(TeacherForced, RowsAndNormalisation) {
  Model m = Model::init({}, 7);
  dld::Pcg32 rng(7);
  Tf ctx = random_tensor({32, 128}, rng);
  nc::NoGradGuard<float> g;
  std::vector<int> target{3, 14, 15, 9};
  Tf lp = rec::decode_teacher_forced(m, ctx, target);
  EXPECT_EQ(lp.shape(), (nc::Shape{5, 39}));
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int v = 0; v < 39; ++v) s += std::exp(static_cast<double>(lp[static_cast<std::size_t>(r * 39 + v)]));
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  Tf again = rec::decode_teacher_forced(m, ctx, target);
  EXPECT_TRUE(std::equal(lp.data().begin(), lp.data().end(), again.data().begin()));
}

TEST(TeacherForced, InvalidTokensRejected) {
  Model m = Model::init({}, 7);
  Tf ctx = Tf::zeros({32, 128});
  EXPECT_THROW(rec::decode_teacher_forced(m, ctx, {1, synth::kBos}), dld::ContractViolation);
  EXPECT_THROW(rec::decode_teacher_forced(m, ctx, {1, 40}), dld::ContractViolation);
  EXPECT_THROW(rec::decode_teacher_forced(m, ctx, std::vector<int>(12, 0)), dld::ContractViolation);
}

TEST(TeacherForced, FirstStepAgreesWithGreedy) {
  dld::Pcg32 rng(8);
  for (int k = 0; k < 10; ++k) {
    Model m = Model::init({}, 100 + static_cast<std::uint64_t>(k));
    Tf ctx = random_tensor({32, 128}, rng);
    nc::NoGradGuard<float> g;
    Tf lp = rec::decode_teacher_forced(m, ctx, {});
    int best = 0;
    for (int v = 0; v < 39; ++v) {
      if (v == synth::kBos || v == synth::kPad) continue;
      if (lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;
    }
    EXPECT_EQ(rec::greedy_decode(m, ctx).front(), best);
  }
}

TEST(TeacherForced, OverfitsSingleSample) {
  synth::GenConfig c;
  c.canvas_size = 64;
  c.instance_count_range = {1, 1};
  c.glyph_height_range = {12, 12};
  auto s = synth::render_sample(3, c);
  Model m = Model::init({}, 11);
  nc::AdamW<float> opt(m.parameters(), {0.9, 0.999, 1e-8, 0.0});
  Tf img = rec::image_tensor<float>(s.image_hi);
  const auto inst = instance_for(s);
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Tf f = rec::backbone_forward(m, img);
    Tf loss = rec::sequence_nll(rec::forward_instance(m, f, inst, 1.0).log_probs, inst.tokens);
    losses.push_back(loss.item());
    nc::backward(loss);
    opt.step(1e-3);
  }
  EXPECT_LT(losses.back(), 0.2 * losses.front());
  EXPECT_LT(losses.back(), losses[100]);
}

TEST(BeamSearch, WidthOneIsGreedy) {
  dld::Pcg32 rng(12);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Model m = Model::init({}, seed);
    Tf ctx = random_tensor({32, 128}, rng, -2, 2);
    auto beams = rec::beam_search(m, ctx, 1);
    ASSERT_EQ(beams.size(), 1u);
    EXPECT_EQ(beams[0].tokens, rec::greedy_decode(m, ctx)) << "seed " << seed;
  }
}

TEST(BeamSearch, ExhaustiveOracleOnStationaryTable) {
  TableModel m;
  m.table = {{std::log(0.45), std::log(0.15), std::log(0.4)},
             {std::log(0.34), std::log(0.33), std::log(0.33)},
             {std::log(0.2), std::log(0.7), std::log(0.1)}};
  auto beams = rec::beam_search(m, 9, 3);
  auto best = exhaustive_best(m, 3);
  EXPECT_EQ(beams[0].tokens, best.tokens);
  EXPECT_DOUBLE_EQ(beams[0].logprob, best.logprob);
  // Greedy commits to 0, 0, 1 (0.45·0.34·0.7); emitting EOS at once scores 0.4.
  EXPECT_EQ(best.tokens, (std::vector<int>{2}));
  EXPECT_NEAR(best.logprob, std::log(0.4), 1e-12);
  auto greedy = rec::beam_search(m, 1, 3);
  EXPECT_EQ(greedy[0].tokens, (std::vector<int>{0, 0, 1}));
  EXPECT_NEAR(greedy[0].logprob, std::log(0.45 * 0.34 * 0.7), 1e-12);
}

TEST(BeamSearch, ExhaustiveOracleRandomTables) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    dld::Pcg32 rng(seed);
    TableModel m;
    m.table = random_table(rng, 3, 3);
    m.prefix_dependent = seed % 2 == 1;
    auto beams = rec::beam_search(m, 9, 3);
    auto best = exhaustive_best(m, 3);
    EXPECT_EQ(beams[0].tokens, best.tokens) << "seed " << seed;
    EXPECT_NEAR(beams[0].logprob, best.logprob, 1e-12);
  }
}

TEST(BeamSearch, TopScoreNonDecreasingInWidth) {
  dld::Pcg32 rng(13);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Model m = Model::init({}, 500 + seed);
    Tf ctx = random_tensor({32, 128}, rng, -2, 2);
    double prev = -std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 4; ++k) {
      const double top = rec::beam_search(m, ctx, k)[0].logprob;
      EXPECT_GE(top, prev - 1e-9) << "seed " << seed << " K " << k;
      prev = top;
    }
  }
}

TEST(BeamSearch, PropertySortedDistinctValid) {
  dld::Pcg32 rng(14);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m = Model::init({}, 900 + seed);
    Tf ctx = random_tensor({32, 128}, rng, -2, 2);
    auto beams = rec::beam_search(m, ctx, 5);
    ASSERT_EQ(beams.size(), 5u);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      EXPECT_LE(beams[i].logprob, 0.0);
      if (i > 0) EXPECT_GT(beams[i - 1].logprob, beams[i].logprob);
      EXPECT_TRUE(seen.insert(beams[i].tokens).second);
      EXPECT_LE(beams[i].tokens.size(), 12u);
      EXPECT_TRUE(beams[i].tokens.back() == synth::kEos || beams[i].tokens.size() == 12u);
      for (int t : beams[i].tokens) {
        EXPECT_NE(t, synth::kBos);
        EXPECT_NE(t, synth::kPad);
      }
    }
  }
}

TEST(BeamSearch, RejectsBadWidth) {
  TableModel m;
  m.table = {{0.0, -1.0, -2.0}};
  EXPECT_THROW(rec::beam_search(m, 0, 1), dld::ContractViolation);
}

TEST(Metrics, SequenceAccuracy) {
  EXPECT_EQ(rec::sequence_accuracy({1, 2, 3, synth::kEos}, {1, 2, 3}), 1);
  EXPECT_EQ(rec::sequence_accuracy({1, 2, 4, synth::kEos}, {1, 2, 3}), 0);
  EXPECT_EQ(rec::sequence_accuracy({1, 2}, {1, 2, 3}), 0);
  std::vector<std::vector<int>> preds{{1}, {2}, {3}, {4}}, gts{{1}, {2}, {0}, {4}};
  EXPECT_DOUBLE_EQ(rec::aggregate_accuracy(preds, gts), 0.75);
}

TEST(Recognizer, ParameterNamesStableAndCloneIndependent) {
  Model m = Model::init({}, 1);
  auto names = m.named_parameters();
  EXPECT_EQ(names.front().first, "backbone.0.weight");
  EXPECT_EQ(names.back().first, "decoder.out_b");
  Model c = m.clone();
  c.out_b.mutable_data()[0] = 5.f;
  EXPECT_EQ(m.out_b[0], 0.f);
  EXPECT_EQ(c.named_parameters().size(), names.size());
}
