// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "pqs/nn.hpp"
#include "pqs/train.hpp"
#include "support/synth.hpp"

using namespace pqs;

namespace {

// Hand-built single-linear model over `in` features, calibrated for inputs
// in [in_min, in_max].
Model tiny_linear(int in, int out, int b_w, int b_x, const AccumConfig& accum,
                  const std::vector<float>& weights, float in_min, float in_max) {
  Model m;
  m.input_ch = 1;
  m.input_h = 1;
  m.input_w = in;
  m.classes = out;
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.name = "fc";
  s.in_features = in;
  s.out_features = out;
  s.weight_bits = b_w;
  s.act_bits = b_x;
  s.accum = accum;
  m.specs = {s};
  finalize_shapes(m);
  m.states[0].weight.values = weights;
  m.states[0].w_params = weight_params(m.states[0].weight, b_w);
  m.states[0].in_params = compute_params(in_min, in_max, b_x, false);
  m.states[0].calibrated = true;
  return m;
}

double quant_error_bound(const Model& m, float max_abs_x) {
  const auto& st = m.states[0];
  const double k = static_cast<double>(m.specs[0].in_features);
  double max_w = 0.0;
  for (float w : st.weight.values) max_w = std::max(max_w, std::fabs(static_cast<double>(w)));
  return k * (max_w * st.in_params.scale * 0.5 +
              (max_abs_x + st.in_params.scale * 0.5) * st.w_params.scale * 0.5) +
         1e-4;
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("forward_model: identity-like 1x1 layer requantizes the input") {
  AccumConfig accum;
  accum.acc_bits = 32;
  Model m = tiny_linear(1, 1, 8, 8, accum, {1.0f}, 0.0f, 2.0f);
  RealTensor batch({4, 1}, {0.0f, 0.5f, 1.0f, 2.0f});
  const ForwardResult r = forward_model(m, batch, EvalOptions{accum});
  for (int i = 0; i < 4; ++i) {
    const float x = batch.values[static_cast<std::size_t>(i)];
    CHECK(r.logits.values[static_cast<std::size_t>(i)] ==
          doctest::Approx(x).epsilon(0.02));
  }
  CHECK(r.layers.size() == 1);
  CHECK(r.layers[0].dots == 4);
  CHECK(r.layers[0].persistent == 0);
}

TEST_CASE("forward_model: an all-pruned row emits exactly zero") {
  AccumConfig accum;
  accum.acc_bits = 32;
  Model m = tiny_linear(4, 2, 8, 8, accum, {0.5f, -0.2f, 0.1f, 0.9f,  //
                                            0.3f, 0.3f, 0.3f, 0.3f},
                        0.0f, 1.0f);
  // prune the whole second row
  for (int c = 0; c < 4; ++c) m.states[0].mask.keep[4 + c] = 0;
  RealTensor batch({1, 4}, {1.0f, 1.0f, 1.0f, 1.0f});
  const ForwardResult r = forward_model(m, batch, EvalOptions{accum});
  CHECK(r.logits.values[1] == 0.0f);
  CHECK(r.logits.values[0] != 0.0f);
}

TEST_CASE("forward_model: random 16-length dot stays within the quantization error bound") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<float> wd(-0.7f, 0.7f);
  std::uniform_real_distribution<float> xd(0.0f, 1.0f);
  AccumConfig accum;
  accum.acc_bits = 32;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> w(16 * 3);
    for (auto& v : w) v = wd(rng);
    Model m = tiny_linear(16, 3, 8, 8, accum, w, 0.0f, 1.0f);
    RealTensor batch({1, 16});
    for (auto& v : batch.values) v = xd(rng);
    const ForwardResult r = forward_model(m, batch, EvalOptions{accum});
    const double bound = quant_error_bound(m, 1.0f);
    for (int o = 0; o < 3; ++o) {
      double real = 0.0;
      for (int i = 0; i < 16; ++i)
        real += static_cast<double>(w[static_cast<std::size_t>(o * 16 + i)]) *
                static_cast<double>(batch.values[static_cast<std::size_t>(i)]);
      CHECK(std::fabs(r.logits.values[static_cast<std::size_t>(o)] - real) <= bound);
    }
  }
}

TEST_CASE("forward_model: zero input on a bias-free model yields equal logits") {
  AccumConfig accum;
  accum.acc_bits = 32;
  std::mt19937_64 rng(97);
  std::uniform_real_distribution<float> wd(-0.5f, 0.5f);
  std::vector<float> w(4 * 3);
  for (auto& v : w) v = wd(rng);
  Model m = tiny_linear(4, 3, 8, 8, accum, w, 0.0f, 1.0f);
  RealTensor zero({1, 4}, {0.0f, 0.0f, 0.0f, 0.0f});
  const ForwardResult r = forward_model(m, zero, EvalOptions{accum});
  CHECK(r.logits.values[0] == r.logits.values[1]);
  CHECK(r.logits.values[1] == r.logits.values[2]);
}

TEST_CASE("forward_model rejects uncalibrated models and bad shapes") {
  AccumConfig accum;
  Model m = tiny_linear(4, 2, 8, 8, accum, std::vector<float>(8, 0.1f), 0.0f, 1.0f);
  m.states[0].calibrated = false;
  RealTensor batch({1, 4}, {0.1f, 0.2f, 0.3f, 0.4f});
  CHECK_THROWS_AS(forward_model(m, batch, EvalOptions{accum}), PreconditionError);
  m.states[0].calibrated = true;
  RealTensor bad({1, 3}, {0.1f, 0.2f, 0.3f});
  CHECK_THROWS_AS(forward_model(m, bad, EvalOptions{accum}), PreconditionError);
}

TEST_CASE("engine dot consistency with the accumulate module") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::int64_t> products(1 + rng() % 64);
    std::uniform_int_distribution<std::int64_t> d(-127, 127);
    for (auto& v : products) v = d(rng) * d(rng);
    EvalOptions opts;
    opts.accum.acc_bits = 8 + static_cast<int>(rng() % 16);
    for (Policy policy : {Policy::Exact, Policy::Saturate, Policy::Wrap,
                          Policy::Sorted, Policy::SortedTiled}) {
      opts.accum.policy = policy;
      opts.accum.tile = 16;
      const detail::EngineOut out = detail::run_dot(products, opts);
      switch (policy) {
        case Policy::Exact:
        case Policy::Saturate:
        case Policy::Wrap: {
          AccumConfig cfg = opts.accum;
          const AccumResult ref = accumulate_natural(products, cfg);
          CHECK(out.value == ref.value);
          CHECK(out.events == static_cast<std::int64_t>(ref.events.size()));
          break;
        }
        case Policy::Sorted: {
          const SortedDotResult ref = sorted_dot(products, opts.accum);
          CHECK(out.value == clamp_signed(ref.value, opts.accum.acc_bits));
          CHECK(out.events == static_cast<std::int64_t>(ref.events.size()));
          break;
        }
        case Policy::SortedTiled: {
          const TiledDotResult ref = sorted_dot_tiled(products, opts.accum);
          CHECK(out.value == clamp_signed(ref.value, opts.accum.acc_bits));
          CHECK(out.events == static_cast<std::int64_t>(ref.events.size()));
          break;
        }
      }
      // classification cross-check
      DotTrace t;
      t.products = products;
      t.exact_sum = std::accumulate(products.begin(), products.end(), std::int64_t{0});
      std::int64_t racc = 0;
      t.running.clear();
      for (std::int64_t v : products) t.running.push_back(racc += v);
      const OverflowClass want = classify_natural(t, opts.accum.acc_bits);
      CHECK(out.persistent == (want == OverflowClass::Persistent));
      CHECK(out.transient == (want == OverflowClass::Transient));
    }
  }
}

TEST_CASE("conv with 1x1 kernel equals a linear layer of the same matrix") {
  std::mt19937_64 rng(79);
  std::uniform_real_distribution<float> wd(-0.5f, 0.5f);
  // conv: 3 channels on a 1x4 image, 1x1 kernel -> per-pixel linear 3->2
  Model mc;
  mc.input_ch = 3;
  mc.input_h = 1;
  mc.input_w = 4;
  mc.classes = 8;
  LayerSpec conv;
  conv.kind = LayerKind::Conv2d;
  conv.name = "pw";
  conv.in_ch = 3;
  conv.out_ch = 2;
  conv.kh = conv.kw = 1;
  conv.stride = 1;
  conv.pad = 0;
  conv.accum.acc_bits = 32;
  LayerSpec flat;
  flat.kind = LayerKind::Flatten;
  flat.name = "flatten";
  LayerSpec head;
  head.kind = LayerKind::Linear;
  head.name = "head";
  head.in_features = 8;
  head.out_features = 8;
  head.accum.acc_bits = 32;
  mc.specs = {conv, flat, head};
  finalize_shapes(mc);
  std::vector<float> wconv(6);
  for (auto& v : wconv) v = wd(rng);
  mc.states[0].weight.values = wconv;
  // identity-ish head so logits expose the conv output
  for (int i = 0; i < 8; ++i) mc.states[2].weight.values[static_cast<std::size_t>(i * 8 + i)] = 1.0f;
  for (auto* st : {&mc.states[0], &mc.states[2]}) {
    st->w_params = weight_params(st->weight, 8);
    st->calibrated = true;
  }
  mc.states[0].in_params = compute_params(0.0f, 1.0f, 8, false);
  mc.states[2].in_params = compute_params(-2.0f, 2.0f, 8, false);

  RealTensor image({1, 3, 1, 4});
  std::uniform_real_distribution<float> xd(0.0f, 1.0f);
  for (auto& v : image.values) v = xd(rng);

  EvalOptions opts;
  opts.accum.acc_bits = 32;
  const ForwardResult rc = forward_model(mc, image, opts);

  // reference: real linear per pixel then the same requant/head chain is
  // approximated; compare against real conv within quantization error
  for (int px = 0; px < 4; ++px) {
    for (int oc = 0; oc < 2; ++oc) {
      double real = 0.0;
      for (int c = 0; c < 3; ++c)
        real += static_cast<double>(wconv[static_cast<std::size_t>(oc * 3 + c)]) *
                static_cast<double>(image.values[static_cast<std::size_t>(c * 4 + px)]);
      const float got = rc.logits.values[static_cast<std::size_t>(oc * 4 + px)];
      CHECK(std::fabs(got - real) < 0.05);
    }
  }
}

TEST_CASE("delta-kernel conv is a spatial identity up to requantization") {
  Model m;
  m.input_ch = 1;
  m.input_h = 4;
  m.input_w = 4;
  m.classes = 16;
  LayerSpec conv;
  conv.kind = LayerKind::Conv2d;
  conv.name = "delta";
  conv.in_ch = 1;
  conv.out_ch = 1;
  conv.kh = conv.kw = 3;
  conv.stride = 1;
  conv.pad = 1;
  conv.accum.acc_bits = 32;
  LayerSpec flat;
  flat.kind = LayerKind::Flatten;
  LayerSpec head;
  head.kind = LayerKind::Linear;
  head.name = "head";
  head.in_features = 16;
  head.out_features = 16;
  head.accum.acc_bits = 32;
  m.specs = {conv, flat, head};
  finalize_shapes(m);
  // kernel = 1 at center, everything else pruned away
  m.states[0].weight.values[4] = 1.0f;
  for (int i = 0; i < 9; ++i)
    if (i != 4) m.states[0].mask.keep[static_cast<std::size_t>(i)] = 0;
  for (int i = 0; i < 16; ++i)
    m.states[2].weight.values[static_cast<std::size_t>(i * 16 + i)] = 1.0f;
  m.states[0].in_params = compute_params(0.0f, 1.0f, 8, false);
  m.states[0].w_params = weight_params(m.states[0].weight, 8);
  m.states[0].calibrated = true;
  m.states[2].in_params = compute_params(0.0f, 1.0f, 8, false);
  m.states[2].w_params = weight_params(m.states[2].weight, 8);
  m.states[2].calibrated = true;

  std::mt19937_64 rng(83);
  RealTensor image({1, 1, 4, 4});
  std::uniform_real_distribution<float> xd(0.0f, 1.0f);
  for (auto& v : image.values) v = xd(rng);

  EvalOptions opts;
  opts.accum.acc_bits = 32;
  const ForwardResult r = forward_model(m, image, opts);
  for (int i = 0; i < 16; ++i)
    CHECK(r.logits.values[static_cast<std::size_t>(i)] ==
          doctest::Approx(image.values[static_cast<std::size_t>(i)]).epsilon(0.03));
}

TEST_CASE("conv against a direct-convolution real oracle") {
  std::mt19937_64 rng(89);
  std::uniform_real_distribution<float> wd(-0.4f, 0.4f);
  std::uniform_real_distribution<float> xd(0.0f, 1.0f);
  Model m;
  m.input_ch = 2;
  m.input_h = 5;
  m.input_w = 5;
  m.classes = 2 * 3 * 3;
  LayerSpec conv;
  conv.kind = LayerKind::Conv2d;
  conv.name = "c";
  conv.in_ch = 2;
  conv.out_ch = 2;
  conv.kh = conv.kw = 3;
  conv.stride = 2;
  conv.pad = 1;
  conv.accum.acc_bits = 32;
  LayerSpec flat;
  flat.kind = LayerKind::Flatten;
  LayerSpec head;
  head.kind = LayerKind::Linear;
  head.name = "head";
  head.in_features = 18;
  head.out_features = 18;
  head.accum.acc_bits = 32;
  m.specs = {conv, flat, head};
  finalize_shapes(m);
  REQUIRE(m.specs[0].out_h == 3);
  for (auto& v : m.states[0].weight.values) v = wd(rng);
  for (int i = 0; i < 18; ++i)
    m.states[2].weight.values[static_cast<std::size_t>(i * 18 + i)] = 1.0f;
  m.states[0].in_params = compute_params(0.0f, 1.0f, 8, false);
  m.states[0].w_params = weight_params(m.states[0].weight, 8);
  m.states[0].calibrated = true;
  m.states[2].in_params = compute_params(-3.0f, 3.0f, 8, false);
  m.states[2].w_params = weight_params(m.states[2].weight, 8);
  m.states[2].calibrated = true;

  RealTensor image({1, 2, 5, 5});
  for (auto& v : image.values) v = xd(rng);
  EvalOptions opts;
  opts.accum.acc_bits = 32;
  const ForwardResult r = forward_model(m, image, opts);

  const auto& w = m.states[0].weight.values;
  for (int oc = 0; oc < 2; ++oc) {
    for (int oy = 0; oy < 3; ++oy) {
      for (int ox = 0; ox < 3; ++ox) {
        double real = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 1;
              const int ix = ox * 2 + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              real += static_cast<double>(
                          w[static_cast<std::size_t>(((oc * 2 + c) * 3 + ky) * 3 + kx)]) *
                      image.values[static_cast<std::size_t>((c * 5 + iy) * 5 + ix)];
            }
        const float got =
            r.logits.values[static_cast<std::size_t>((oc * 3 + oy) * 3 + ox)];
        CHECK(std::fabs(got - real) < 0.12); // two requant hops at 8 bits
      }
    }
  }
}

TEST_CASE("policy equivalence: Exact and Sorted logits match without persistent overflows") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 64, 99);
  AccumConfig accum;
  accum.acc_bits = 32;
  Model m = make_model("mlp1", 8, 8, accum);
  TrainConfig cfg;
  cfg.schedule = TrainConfig::Schedule::QtoP;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 5;
  cfg.learning_rate = 0.05;
  train(m, ds, cfg);

  int checked = 0;
  for (int p = 18; p <= 32; p += 2) {
    EvalOptions exact;
    exact.accum.acc_bits = p;
    exact.accum.policy = Policy::Exact;
    EvalOptions sorted_opts;
    sorted_opts.accum.acc_bits = p;
    sorted_opts.accum.policy = Policy::Sorted;
    const ForwardResult a = forward_model(m, ds.images, exact);
    const ForwardResult b = forward_model(m, ds.images, sorted_opts);
    std::int64_t persistent = 0;
    for (const auto& l : a.layers) persistent += l.persistent;
    if (persistent != 0) continue;
    ++checked;
    for (std::size_t i = 0; i < a.logits.values.size(); ++i)
      CHECK(a.logits.values[i] == b.logits.values[i]);
  }
  CHECK(checked >= 1); // wide accumulators always qualify
}

TEST_CASE("evaluate: deterministic across thread counts and rejects empty sets") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 60, 7);
  AccumConfig accum;
  accum.acc_bits = 24;
  Model m = make_model("mlp1", 8, 8, accum);
  TrainConfig cfg;
  cfg.schedule = TrainConfig::Schedule::QtoP;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  train(m, ds, cfg);

  EvalOptions one;
  one.accum = accum;
  one.threads = 1;
  EvalOptions four;
  four.accum = accum;
  four.threads = 4;
  const EvalResult a = evaluate(m, ds, one);
  const EvalResult b = evaluate(m, ds, four);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.totals().events == b.totals().events);
  CHECK(a.totals().dots == b.totals().dots);

  pqs::Dataset empty;
  CHECK_THROWS_AS(evaluate(m, empty, one), PreconditionError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("train");

TEST_CASE("training is bit-deterministic under a fixed seed") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 80, 21);
  AccumConfig accum;
  accum.acc_bits = 32;
  TrainConfig cfg;
  cfg.schedule = TrainConfig::Schedule::QtoP;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 11;
  cfg.threads = 2;

  Model a = make_model("mlp1", 8, 8, accum);
  Model b = make_model("mlp1", 8, 8, accum);
  const TrainLog la = train(a, ds, cfg);
  const TrainLog lb = train(b, ds, cfg);
  CHECK(a.states[2].weight.values == b.states[2].weight.values);
  CHECK(a.states[2].w_params == b.states[2].w_params);
  CHECK(a.states[2].in_params == b.states[2].in_params);
  REQUIRE(la.epochs.size() == lb.epochs.size());
  for (std::size_t i = 0; i < la.epochs.size(); ++i)
    CHECK(la.epochs[i].loss == lb.epochs[i].loss);
}

TEST_CASE("gradients never resurrect pruned weights") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 120, 31);
  AccumConfig accum;
  accum.acc_bits = 32;
  Model m = make_model("mlp2", 8, 8, accum);
  TrainConfig cfg;
  cfg.schedule = TrainConfig::Schedule::PtoQ;
  cfg.epochs = 5;
  cfg.qat_epochs = 1;
  cfg.batch_size = 32;
  cfg.seed = 17;
  cfg.prune_enabled = true;
  cfg.prune.target = 0.5;
  cfg.prune.interval = 1;
  cfg.prune.increment = 0.25;
  cfg.prune.m = 16;
  const TrainLog log = train(m, ds, cfg);

  const auto& st = m.states[1];
  CHECK(sparsity_of(st.mask) == doctest::Approx(0.5));
  const RealTensor masked = apply_mask(m.states[1].weight, st.mask);
  CHECK(masked.values == m.states[1].weight.values); // apply_mask is a no-op
  CHECK(log.epochs.back().sparsity == doctest::Approx(0.5));
  // sparsity climbed monotonically
  for (std::size_t i = 1; i < log.epochs.size(); ++i)
    CHECK(log.epochs[i].sparsity >= log.epochs[i - 1].sparsity);
}

TEST_CASE("sparsity target zero reduces to plain training") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 60, 41);
  AccumConfig accum;
  accum.acc_bits = 32;
  TrainConfig base;
  base.schedule = TrainConfig::Schedule::QtoP;
  base.epochs = 2;
  base.batch_size = 16;
  base.seed = 13;
  TrainConfig pruned = base;
  pruned.prune_enabled = true;
  pruned.prune.target = 0.0;
  pruned.prune.increment = 0.0;
  pruned.prune.m = 16;
  Model a = make_model("mlp1", 8, 8, accum);
  Model b = make_model("mlp1", 8, 8, accum);
  train(a, ds, base);
  train(b, ds, pruned);
  CHECK(a.states[2].weight.values == b.states[2].weight.values);
}

TEST_CASE("high-bitwidth QAT matches plain SGD trajectories (STE round trip)") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 100, 51);
  AccumConfig accum;
  accum.acc_bits = 64;
  TrainConfig fp;
  fp.schedule = TrainConfig::Schedule::PtoQ;
  fp.epochs = 3;
  fp.qat_epochs = 0; // pure real-valued run
  fp.batch_size = 20;
  fp.seed = 29;
  TrainConfig qat = fp;
  qat.schedule = TrainConfig::Schedule::QtoP; // QAT from epoch 1
  Model a = make_model("mlp1", 16, 16, accum);
  Model b = make_model("mlp1", 16, 16, accum);
  const TrainLog la = train(a, ds, fp);
  const TrainLog lb = train(b, ds, qat);
  REQUIRE(la.epochs.size() == lb.epochs.size());
  for (std::size_t i = 0; i < la.epochs.size(); ++i)
    CHECK(la.epochs[i].loss ==
          doctest::Approx(lb.epochs[i].loss).epsilon(0.02));
}

TEST_CASE("identical seeds give identical initializations across schedules") {
  synth::Spec spec;
  pqs::Dataset ds = synth::make_dataset(spec, 40, 61);
  AccumConfig accum;
  accum.acc_bits = 32;
  TrainConfig p2q;
  p2q.schedule = TrainConfig::Schedule::PtoQ;
  p2q.epochs = 1;
  p2q.qat_epochs = 1;
  p2q.batch_size = 40;
  p2q.seed = 77;
  p2q.learning_rate = 1e-9; // steps are negligible; weights stay at init
  TrainConfig q2p = p2q;
  q2p.schedule = TrainConfig::Schedule::QtoP;
  Model a = make_model("mlp2", 8, 8, accum);
  Model b = make_model("mlp2", 8, 8, accum);
  train(a, ds, p2q);
  train(b, ds, q2p);
  for (std::size_t i = 0; i < a.states[1].weight.values.size(); ++i)
    CHECK(a.states[1].weight.values[i] ==
          doctest::Approx(b.states[1].weight.values[i]).epsilon(1e-5));
}

TEST_SUITE_END();
