// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "dld/numcore/gradcheck_suite.hpp"

#include <functional>

#include "dld/common/random.hpp"
#include "dld/distill/losses.hpp"
#include "dld/numcore/gradcheck.hpp"
#include "dld/recognizer/model.hpp"
#include "dld/selector/gumbel.hpp"
#include "dld/selector/losses.hpp"
#include "dld/selector/selector.hpp"

namespace dld::nc {

namespace {

using Td = Tensor<double>;
using Inputs = std::vector<Td>;

Td uniform(Shape shape, Pcg32& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from(std::move(shape), std::move(v));
}

// Magnitudes in [0.1, 1] with random sign: keeps kinks (relu, abs, clamp) out of the stencil.
Td away_from_zero(Shape shape, Pcg32& rng) {
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Td::from(std::move(shape), std::move(v));
}

// Distinct values at least 0.09 apart so no max is contested inside the stencil.
Td separated(Shape shape, Pcg32& rng) {
  const std::size_t n = nc::numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.1 * static_cast<double>(i) + rng.uniform(0.0, 0.01);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(static_cast<std::uint32_t>(i))]);
  return Td::from(std::move(shape), std::move(v));
}

// Non-zero biases: with zero biases a dead upstream relu puts pre-activations exactly on the kink.
template <class Named>
void randomize_biases(const Named& params, Pcg32& rng) {
  for (const auto& [name, t] : params) {
    if (name.size() < 5 || name.compare(name.size() - 5, 5, ".bias") != 0) continue;
    for (auto& v : Td(t).mutable_data()) v = rng.uniform(-0.2, 0.2);
  }
}

struct Case {
  std::string name;
  std::function<GradcheckReport(Pcg32&)> run;
};

template <class F>
GradcheckReport check(F&& f, Inputs inputs, double atol = 0.0) {
  return gradcheck<double>(std::forward<F>(f), std::move(inputs), kSuiteEps, kSuiteTol, atol);
}

// f(x) projected with weights drawn once.
template <class Op>
GradcheckReport unary_case(Op op, Td x, Pcg32& rng) {
  Td w = uniform(x.shape(), rng);
  return check([&](const Inputs& in) { return sum(mul(op(in[0]), w)); }, {x});
}

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto binary_case = [](ElementwiseKind kind) {
    return [kind](Pcg32& rng) {
      Td a = uniform({3, 4}, rng), b = uniform({3, 4}, rng), w = uniform({3, 4}, rng);
      return check([&](const Inputs& in) { return sum(mul(binary(kind, in[0], in[1]), w)); }, {a, b});
    };
  };
  cases.push_back({"elementwise.add", binary_case(ElementwiseKind::add)});
  cases.push_back({"elementwise.sub", binary_case(ElementwiseKind::sub)});
  cases.push_back({"elementwise.mul", binary_case(ElementwiseKind::mul)});
  cases.push_back({"elementwise.mul_scalar_broadcast", [](Pcg32& rng) {
                     Td a = uniform({1}, rng), b = uniform({2, 3}, rng), w = uniform({2, 3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(mul(in[0], in[1]), w)); }, {a, b});
                   }});
  cases.push_back({"elementwise.relu", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return relu(x); }, away_from_zero({2, 5}, rng), rng);
                   }});
  cases.push_back({"elementwise.tanh", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return tanh(x); }, uniform({2, 5}, rng, -2, 2), rng);
                   }});
  cases.push_back({"elementwise.sigmoid", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return sigmoid(x); }, uniform({2, 5}, rng, -3, 3), rng);
                   }});
  cases.push_back({"elementwise.exp", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return exp(x); }, uniform({2, 5}, rng, -2, 2), rng);
                   }});
  cases.push_back({"elementwise.log", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return log(x); }, uniform({2, 5}, rng, 0.2, 3.0), rng);
                   }});
  cases.push_back({"elementwise.abs", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return abs(x); }, away_from_zero({2, 5}, rng), rng);
                   }});
  cases.push_back({"elementwise.scale", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return scale(x, -1.7); }, uniform({7}, rng), rng);
                   }});
  cases.push_back({"elementwise.add_scalar", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return add_scalar(x, 0.3); }, uniform({7}, rng), rng);
                   }});
  cases.push_back({"elementwise.clamp_min", [](Pcg32& rng) {
                     return unary_case([](const Td& x) { return clamp_min(x, 0.0); }, away_from_zero({9}, rng), rng);
                   }});
  // Hard values equal to the soft ones keep the forward smooth, so the stencil sees the soft path.
  cases.push_back({"straight_through.soft_path", [](Pcg32& rng) {
                     Td soft = uniform({3}, rng), w = uniform({3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(straight_through(detach(in[0]), in[0]), w)); },
                                  {soft});
                   }});
  cases.push_back({"matmul", [](Pcg32& rng) {
                     Td a = uniform({3, 4}, rng), b = uniform({4, 2}, rng), w = uniform({3, 2}, rng);
                     return check([&](const Inputs& in) { return sum(mul(matmul(in[0], in[1]), w)); }, {a, b});
                   }});
  cases.push_back({"add_bias", [](Pcg32& rng) {
                     Td x = uniform({3, 4}, rng), b = uniform({4}, rng), w = uniform({3, 4}, rng);
                     return check([&](const Inputs& in) { return sum(mul(add_bias(in[0], in[1]), w)); }, {x, b});
                   }});
  cases.push_back({"add_channel_bias", [](Pcg32& rng) {
                     Td x = uniform({2, 3, 4}, rng), b = uniform({2}, rng), w = uniform({2, 3, 4}, rng);
                     return check([&](const Inputs& in) { return sum(mul(add_channel_bias(in[0], in[1]), w)); }, {x, b});
                   }});
  cases.push_back({"conv2d.stride1_pad0", [](Pcg32& rng) {
                     Td x = uniform({2, 5, 5}, rng), k = uniform({3, 2, 3, 3}, rng), w = uniform({3, 3, 3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(conv2d(in[0], in[1], 1, 0), w)); }, {x, k});
                   }});
  cases.push_back({"conv2d.stride2_pad1", [](Pcg32& rng) {
                     Td x = uniform({2, 6, 7}, rng), k = uniform({3, 2, 3, 3}, rng), w = uniform({3, 3, 4}, rng);
                     return check([&](const Inputs& in) { return sum(mul(conv2d(in[0], in[1], 2, 1), w)); }, {x, k});
                   }});
  cases.push_back({"conv_relu_mean", [](Pcg32& rng) {
                     Td x = uniform({2, 5, 5}, rng), k = uniform({3, 2, 3, 3}, rng);
                     return check([&](const Inputs& in) { return mean(relu(conv2d(in[0], in[1], 1, 1))); }, {x, k});
                   }});
  for (auto kind : {ReduceKind::sum, ReduceKind::mean, ReduceKind::max}) {
    const char* label = kind == ReduceKind::sum ? "reduce.sum" : kind == ReduceKind::mean ? "reduce.mean" : "reduce.max";
    cases.push_back({label, [kind](Pcg32& rng) {
                       Td x = separated({3, 4, 5}, rng), w = uniform({3, 5}, rng);
                       return check([&](const Inputs& in) { return sum(mul(reduce(kind, in[0], {1}), w)); }, {x});
                     }});
  }
  cases.push_back({"softmax", [](Pcg32& rng) {
                     Td x = uniform({3, 5}, rng, -2, 2), w = uniform({3, 5}, rng);
                     return check([&](const Inputs& in) { return sum(mul(softmax(in[0], 1), w)); }, {x});
                   }});
  cases.push_back({"softmax.mean", [](Pcg32& rng) {
                     Td x = uniform({5}, rng, -2, 2), w = uniform({5}, rng);
                     return check([&](const Inputs& in) { return mean(mul(softmax(in[0], 0), w)); }, {x});
                   }});
  cases.push_back({"log_softmax", [](Pcg32& rng) {
                     Td x = uniform({7}, rng, -2, 2), w = uniform({7}, rng);
                     return check([&](const Inputs& in) { return sum(mul(log_softmax(in[0], 0), w)); }, {x});
                   }});
  cases.push_back({"log_softmax.axis0", [](Pcg32& rng) {
                     Td x = uniform({4, 3}, rng, -2, 2), w = uniform({4, 3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(log_softmax(in[0], 0), w)); }, {x});
                   }});
  cases.push_back({"logsumexp", [](Pcg32& rng) {
                     Td x = uniform({2, 3}, rng, -2, 2);
                     return check([&](const Inputs& in) { return logsumexp(in[0]); }, {x});
                   }});
  cases.push_back({"bilinear_resize", [](Pcg32& rng) {
                     Td x = uniform({1, 4, 4}, rng), w = uniform({1, 2, 3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(bilinear_resize(in[0], 2, 3), w)); }, {x});
                   }});
  cases.push_back({"bilinear_resize.upsample", [](Pcg32& rng) {
                     Td x = uniform({2, 3, 4}, rng), w = uniform({2, 5, 7}, rng);
                     return check([&](const Inputs& in) { return sum(mul(bilinear_resize(in[0], 5, 7), w)); }, {x});
                   }});
  cases.push_back({"roi_align", [](Pcg32& rng) {
                     Td x = uniform({2, 6, 8}, rng), w = uniform({2, 3, 5}, rng);
                     Box box{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(3.0, 6.0), rng.uniform(4.0, 8.0)};
                     return check([&](const Inputs& in) { return sum(mul(roi_align(in[0], box, 3, 5), w)); }, {x});
                   }});
  cases.push_back({"reshape_transpose", [](Pcg32& rng) {
                     Td x = uniform({2, 6}, rng), w = uniform({4, 3}, rng);
                     return check([&](const Inputs& in) { return sum(mul(transpose(reshape(in[0], {3, 4})), w)); }, {x});
                   }});
  cases.push_back({"slice_and_concat", [](Pcg32& rng) {
                     Td a = uniform({4, 5}, rng), b = uniform({4, 2}, rng), w = uniform({2, 5}, rng);
                     return check(
                         [&](const Inputs& in) {
                           Td cols = concat_cols<double>({slice_cols(in[0], 1, 3), in[1]});
                           Td rows = concat_rows<double>({slice_rows(cols, 0, 1), slice_rows(cols, 3, 1)});
                           return sum(mul(rows, w));
                         },
                         {a, b});
                   }});
  cases.push_back({"gather_pick_element", [](Pcg32& rng) {
                     Td table = uniform({5, 3}, rng), w = uniform({4}, rng);
                     return check(
                         [&](const Inputs& in) {
                           Td rows = gather_rows(in[0], {4, 0, 4, 2});
                           return add(sum(mul(pick(rows, {0, 2, 1, 1}), w)), element(in[0], 7));
                         },
                         {table});
                   }});
  cases.push_back({"lstm_cell", [](Pcg32& rng) {
                     Td gates = uniform({2, 12}, rng, -2, 2), c = uniform({2, 3}, rng), w = uniform({2, 6}, rng);
                     return check([&](const Inputs& in) { return sum(mul(lstm_cell(in[0], in[1]), w)); }, {gates, c});
                   }});
  return cases;
}

using Rec = rec::Recognizer<double>;

synth::TextInstance random_instance(Pcg32& rng, int canvas, int length) {
  synth::TextInstance inst;
  inst.glyph_height = 8;
  inst.box = {rng.uniform_int(0, 3), rng.uniform_int(0, 3), rng.uniform_int(6, canvas - 4), rng.uniform_int(4, canvas - 4)};
  for (int i = 0; i < length; ++i) inst.tokens.push_back(rng.uniform_int(0, synth::kNumSymbols - 1));
  return inst;
}

Inputs with(Inputs params, const Td& extra) {
  params.push_back(extra);
  return params;
}

std::vector<Case> pipeline_cases() {
  std::vector<Case> cases;
  const auto small = rec::RecognizerConfig::downsized();
  cases.push_back({"pipeline.backbone", [small](Pcg32& rng) {
                     Rec m = Rec::init(small, rng.next_u32());
                     randomize_biases(m.named_parameters(), rng);
                     Td image = uniform({1, 16, 16}, rng, 0, 1), w = uniform({2, 4, 4}, rng);
                     return check([&](const Inputs&) { return sum(mul(rec::backbone_forward(m, image), w)); },
                                  with(m.parameters(), image));
                   }});
  cases.push_back({"pipeline.roi_crop", [small](Pcg32& rng) {
                     Td features = uniform({2, 6, 6}, rng), w = uniform({2, small.roi_h, small.roi_w}, rng);
                     synth::BoxPx box{rng.uniform_int(0, 6), rng.uniform_int(0, 6), rng.uniform_int(6, 14), rng.uniform_int(4, 12)};
                     return check(
                         [&](const Inputs& in) {
                           return sum(mul(rec::roi_crop(in[0], box, 1.0, small.roi_h, small.roi_w).tensor, w));
                         },
                         {features});
                   }});
  cases.push_back({"pipeline.encode_context", [small](Pcg32& rng) {
                     Rec m = Rec::init(small, rng.next_u32());
                     randomize_biases(m.named_parameters(), rng);
                     Td roi = uniform({2, small.roi_h, small.roi_w}, rng), w = uniform({small.roi_w, 2 * small.hidden}, rng);
                     return check([&](const Inputs&) { return sum(mul(rec::encode_context(m, roi), w)); },
                                  with(m.parameters(), roi));
                   }});
  cases.push_back({"pipeline.decoder_teacher_forced", [small](Pcg32& rng) {
                     Rec m = Rec::init(small, rng.next_u32());
                     Td ctx = uniform({small.roi_w, 2 * small.hidden}, rng);
                     std::vector<int> target{rng.uniform_int(0, 35), rng.uniform_int(0, 35), rng.uniform_int(0, 35)};
                     return check([&](const Inputs&) { return rec::sequence_nll(rec::decode_teacher_forced(m, ctx, target), target); },
                                  with(m.parameters(), ctx));
                   }});
  cases.push_back({"pipeline.recognizer", [small](Pcg32& rng) {
                     Rec m = Rec::init(small, rng.next_u32());
                     randomize_biases(m.named_parameters(), rng);
                     Td image = uniform({1, 16, 16}, rng, 0, 1);
                     auto inst = random_instance(rng, 16, 3);
                     inst.box = {0, 0, 16, 16};
                     Td w;
                     return check(
                         [&](const Inputs&) {
                           Td f = rec::backbone_forward(m, image);
                           Td lp = rec::forward_instance(m, f, inst, 1.0).log_probs;
                           if (!w.defined()) w = uniform(lp.shape(), rng);
                           return sum(mul(lp, w));
                         },
                         {image}, kSuiteRoundoffFloor);
                   }});
  cases.push_back({"pipeline.selector", [](Pcg32& rng) {
                     auto s = sel::Selector<double>::init({}, rng.next_u32());
                     randomize_biases(s.named_parameters(), rng);
                     Td image = uniform({1, 8, 8}, rng, 0, 1), w = uniform({6}, rng);
                     return check([&](const Inputs&) { return sum(mul(sel::drs_forward(s, image), w)); },
                                  with(s.parameters(), image));
                   }});
  cases.push_back({"loss.acc_through_gumbel", [](Pcg32& rng) {
                     Td logits = uniform({3}, rng);
                     std::vector<Td> teacher{log_softmax(uniform({2, 4}, rng, -2, 2), 1)};
                     std::vector<std::vector<Td>> scaled;
                     for (int k = 0; k < 3; ++k) scaled.push_back({log_softmax(uniform({2, 4}, rng, -2, 2), 1)});
                     const std::uint64_t noise_seed = rng.next_u32();
                     return check(
                         [&](const Inputs& in) {
                           auto g = sel::gumbel_sample(softmax(in[0], 0), 2.0, noise_seed);
                           return sel::loss_acc(teacher, scaled, g.h_soft);
                         },
                         {logits});
                   }});
  cases.push_back({"loss.flops", [](Pcg32& rng) {
                     Td h = uniform({4}, rng, 0, 1);
                     const std::vector<double> cost{0.25, 0.5, 0.75, 1.0};
                     return check([&](const Inputs& in) { return sel::loss_flops(in[0], cost); }, {h});
                   }});
  cases.push_back({"loss.roi_mse", [](Pcg32& rng) {
                     Td t = uniform({2, 3, 4}, rng), s = uniform({2, 3, 4}, rng);
                     return check([&](const Inputs& in) { return kd::loss_roi(t, in[0]); }, {s});
                   }});
  cases.push_back({"loss.con_mae", [](Pcg32& rng) {
                     Td t = uniform({4, 6}, rng), s = add(t, away_from_zero({4, 6}, rng));
                     return check([&](const Inputs& in) { return kd::loss_con(t, in[0], kd::FeatureLoss::mae); }, {s});
                   }});
  cases.push_back({"loss.seq_k2", [small](Pcg32& rng) {
                     Rec m = Rec::init(small, rng.next_u32());
                     Td ctx = uniform({small.roi_w, 2 * small.hidden}, rng);
                     std::vector<rec::BeamHypothesis> beams{{{3, 7, synth::kEos}, -1.0}, {{3, 8, synth::kEos}, -2.0}};
                     return check([&](const Inputs&) { return kd::loss_seq(m, ctx, beams, 2); }, with(m.parameters(), ctx));
                   }});
  cases.push_back({"loss.logit_kd", [](Pcg32& rng) {
                     Td t = log_softmax(uniform({3, 5}, rng, -2, 2), 1), s = uniform({3, 5}, rng, -2, 2);
                     return check([&](const Inputs& in) { return kd::loss_logit_kd(t, log_softmax(in[0], 1)); }, {s});
                   }});
  return cases;
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(int seeds, std::uint64_t base_seed) {
  std::vector<Case> cases = op_cases();
  for (auto& c : pipeline_cases()) cases.push_back(std::move(c));
  std::vector<SuiteEntry> out;
  for (const auto& c : cases) {
    SuiteEntry e;
    e.name = c.name;
    e.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      Pcg32 rng(derive_seed(base_seed, c.name, static_cast<std::uint64_t>(s)));
      GradcheckReport r = c.run(rng);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      if (!r.ok && e.ok) {
        e.ok = false;
        e.message = "seed " + std::to_string(s) + ": " + r.message;
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace dld::nc
