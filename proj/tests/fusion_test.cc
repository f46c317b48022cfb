// Copyright 2026 The Evoengine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "evo/bf16.h"
#include "evo/errors.h"
#include "evo/fusion.h"
#include "test_util.h"

namespace evo {
namespace {

std::vector<Var> random_params(const std::vector<Shape>& shapes, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Var> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    out.emplace_back(testing::random_tensor(shapes[i], rng, 0.5f), true, "p" + std::to_string(i));
  }
  return out;
}

std::vector<Var> clone_vars(const std::vector<Var>& vs) {
  std::vector<Var> out;
  for (const Var& v : vs) out.emplace_back(Tensor(v.value()), true, v.name());
  return out;
}

std::vector<Tensor> random_grads(const std::vector<Var>& vs, SplitMix64& rng, float a) {
  std::vector<Tensor> g;
  for (const Var& v : vs) g.push_back(testing::random_tensor(v.value().shape(), rng, a));
  return g;
}

const std::vector<Shape> kShapes = {{3, 5}, {7}, {4, 4, 2}, {1}, {65}, {2, 3}};

// ---- layout ----

TEST(LayoutTest, PaddedOffsets) {
  FusedLayout l = FusedLayout::build({{"a", {100}}, {"b", {100}}, {"c", {100}}});
  ASSERT_EQ(l.entries().size(), 3u);
  EXPECT_EQ(l.entries()[0].offset, 0);
  EXPECT_EQ(l.entries()[1].offset, 512);
  EXPECT_EQ(l.entries()[2].offset, 1024);
  EXPECT_EQ(l.entries()[2].padded_bytes, 512);
  ASSERT_EQ(l.regions().size(), 1u);
  EXPECT_EQ(l.regions()[0].bytes, 1536);

  FusedLayout one = FusedLayout::build({{"w", {64}}});
  EXPECT_EQ(one.entries()[0].offset, 0);
  EXPECT_EQ(one.entries()[0].padded_bytes, 256);
  EXPECT_EQ(one.regions()[0].bytes, 256);
}

TEST(LayoutTest, AlignmentLawAndRegions) {
  SplitMix64 rng(7);
  std::vector<InventoryEntry> inv;
  for (int i = 0; i < 40; ++i) {
    inv.push_back({"t" + std::to_string(i), {1 + static_cast<std::int64_t>(rng.next() % 97)},
                   i % 5 == 0 ? DType::kBF16 : DType::kF32});
  }
  for (std::int64_t a : {64, 128, 256}) {
    FusedLayout l = FusedLayout::build(inv, a);
    ASSERT_EQ(l.regions().size(), 2u);
    EXPECT_EQ(l.regions()[0].dtype, DType::kF32);
    EXPECT_EQ(l.regions()[1].dtype, DType::kBF16);
    std::vector<std::int64_t> last(2, -1), covered(2, 0);
    for (const LayoutEntry& e : l.entries()) {
      EXPECT_EQ(e.offset % a, 0) << e.name;
      EXPECT_GT(e.offset, last[static_cast<std::size_t>(e.region)]);
      EXPECT_EQ(e.padded_bytes, (e.bytes + a - 1) / a * a);
      EXPECT_EQ(e.offset, covered[static_cast<std::size_t>(e.region)]);
      last[static_cast<std::size_t>(e.region)] = e.offset;
      covered[static_cast<std::size_t>(e.region)] += e.padded_bytes;
    }
    EXPECT_EQ(covered[0], l.regions()[0].bytes);
    EXPECT_EQ(covered[1], l.regions()[1].bytes);
  }
}

TEST(LayoutTest, Errors) {
  EXPECT_THROW(FusedLayout::build({{"a", {2}}, {"a", {3}}}), LayoutError);
  EXPECT_THROW(FusedLayout::build({{"a", {2}}}, 96), LayoutError);
  EXPECT_THROW(FusedLayout::build({{"a", {2}}}, 2), LayoutError);
}

TEST(LayoutTest, Csv) {
  FusedLayout l = FusedLayout::build({{"w", {2, 3}}, {"b", {3}}});
  EXPECT_EQ(l.csv(), "name,shape,region,offset,padded_bytes\nw,2x3,0,0,256\nb,3,0,256,256\n");
}

// ---- views ----

TEST(ParamStoreTest, ManyParametersRoundTripThroughViews) {
  SplitMix64 rng(11);
  std::vector<Shape> shapes;
  for (int i = 0; i < 4630; ++i) shapes.push_back({1 + static_cast<std::int64_t>(rng.next() % 9)});
  std::vector<Var> ps = random_params(shapes, 12);
  ParamStore store(ps, true);
  ASSERT_EQ(store.layout().entries().size(), 4630u);
  Tensor& region = store.param_region(0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const LayoutEntry& e = store.layout().entries()[i];
    ASSERT_EQ(ps[i].value().buffer(), region.buffer());
    // View write, region read.
    ps[i].mutable_value().data()[0] = static_cast<float>(i);
    ASSERT_EQ(region.data()[static_cast<std::size_t>(e.element_offset())], static_cast<float>(i));
    // Region write, view read.
    region.data()[static_cast<std::size_t>(e.element_offset() + e.numel() - 1)] = -1.0f;
    ASSERT_EQ(ps[i].value().data()[static_cast<std::size_t>(e.numel() - 1)], -1.0f);
  }
}

TEST(ParamStoreTest, ModelReadsFusedMemory) {
  ModelConfig cfg;
  cfg.n_blocks = 1;
  ModelParams a = ModelParams::init(cfg, 3);
  ModelParams b = a.clone();
  Features f = Features::synthesize(cfg, 4);
  ExecContext ctx;
  ctx.features = &f;
  ParamStore store(b.vars(), true);
  Reps ra = model_forward(a, ctx, 1), rb = model_forward(b, ctx, 1);
  ASSERT_EQ(std::vector<float>(ra.pair.value().data().begin(), ra.pair.value().data().end()),
            std::vector<float>(rb.pair.value().data().begin(), rb.pair.value().data().end()));
  // Zeroing the region zeroes the model: the output is the embedding bias.
  for (float& x : store.param_region(0).data()) x = 0.0f;
  Reps rz = model_forward(b, ctx, 1);
  for (float x : rz.pair.value().data()) ASSERT_EQ(x, 0.0f);
}

// ---- launch law ----

LaunchCounter one_step(ParamStore& s, Comm& comm) {
  s.launches().reset();
  SplitMix64 rng(5);
  std::vector<Tensor> g;
  for (std::size_t i = 0; i < s.size(); ++i) g.push_back(testing::random_tensor(s.param(i).value().shape(), rng));
  s.load_grads(g);
  s.grad_sync(comm, {});
  s.clip(0.1f);
  s.adam({}, 1);
  s.ema(0.999);
  return s.launches();
}

TEST(LaunchTest, FusedAndUnfusedCounts) {
  for (std::size_t n : {1u, 6u, 4630u}) {
    std::vector<Shape> shapes(n, Shape{3});
    run_workers({1, 1, 1}, [&](Comm& comm) {
      const auto N = static_cast<std::int64_t>(n);
      ParamStore fused(random_params(shapes, 1), true), plain(random_params(shapes, 1), false);
      EXPECT_EQ(one_step(fused, comm), (LaunchCounter{1, 2, 1, 1}));
      EXPECT_EQ(one_step(plain, comm), (LaunchCounter{N, 2 * N, N, N}));
    });
  }
}

// ---- stages vs per-tensor oracles ----

TEST(GradSyncTest, MatchesPerTensorAverageBitwise) {
  std::vector<std::vector<float>> got(2), want(2);
  CommTrace t = run_workers({2, 1, 1}, [&](Comm& comm) {
    std::vector<Var> ps = random_params(kShapes, 1);
    ParamStore store(ps, true);
    SplitMix64 rng(40 + static_cast<std::uint64_t>(comm.rank()));
    store.load_grads(random_grads(ps, rng, 1.0f));
    store.grad_sync(comm, {});
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (float x : store.grad(i).data()) got[static_cast<std::size_t>(comm.rank())].push_back(x);
  });
  // Oracle: regenerate both ranks' gradients, sum rank 0 then rank 1 in
  // float, divide by two.
  std::vector<Var> ps = random_params(kShapes, 1);
  SplitMix64 r0(40), r1(41);
  auto g0 = random_grads(ps, r0, 1.0f), g1 = random_grads(ps, r1, 1.0f);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t k = 0; k < g0[i].data().size(); ++k) {
      float s = 0.0f;
      s += g0[i].data()[k];
      s += g1[i].data()[k];
      want[0].push_back(s / 2.0f);
    }
  EXPECT_EQ(got[0], want[0]);
  EXPECT_EQ(got[1], want[0]);
  EXPECT_EQ(t.count(Primitive::kAllReduce, Phase::kGradSync), 1u);
}

TEST(GradSyncTest, UnfusedIssuesOnePerTensor) {
  CommTrace t = run_workers({2, 1, 1}, [&](Comm& comm) {
    std::vector<Var> ps = random_params(kShapes, 1);
    ParamStore store(ps, false);
    store.grad_sync(comm, {});
    EXPECT_EQ(store.launches().grad_sync, static_cast<std::int64_t>(kShapes.size()));
  });
  EXPECT_EQ(t.count(Primitive::kAllReduce, Phase::kGradSync), kShapes.size());
}

double oracle_norm(const std::vector<Tensor>& g) {
  double s = 0.0;
  for (const Tensor& t : g)
    for (float x : t.data()) s += double(x) * x;
  return std::sqrt(s);
}

TEST(ClipTest, SmallNormIsUnchanged) {
  std::vector<Var> ps = random_params(kShapes, 2);
  SplitMix64 rng(3);
  auto g = random_grads(ps, rng, 1e-3f);
  ASSERT_LT(oracle_norm(g), 0.1);
  ParamStore store(ps, true);
  store.load_grads(g);
  EXPECT_EQ(store.clip(0.1f), 1.0f);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t k = 0; k < g[i].data().size(); ++k) EXPECT_EQ(store.grad(i).data()[k], g[i].data()[k]);
}

TEST(ClipTest, MatchesPerTensorOracle) {
  for (bool fused : {true, false}) {
    std::vector<Var> ps = random_params(kShapes, 2);
    SplitMix64 rng(3);
    auto g = random_grads(ps, rng, 1.0f);
    const double scale = 0.1 / oracle_norm(g);
    ParamStore store(ps, fused);
    store.load_grads(g);
    EXPECT_NEAR(store.clip(0.1f), scale, 1e-7);
    double worst = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t k = 0; k < g[i].data().size(); ++k) {
        worst = std::max(worst, std::abs(store.grad(i).data()[k] - g[i].data()[k] * scale));
        sq += double(store.grad(i).data()[k]) * store.grad(i).data()[k];
      }
    EXPECT_LE(worst, 1e-7);
    EXPECT_NEAR(std::sqrt(sq), 0.1, 1e-6);
  }
}

TEST(ClipTest, NonFiniteNormNamesTheParameter) {
  std::vector<Var> ps = random_params(kShapes, 2);
  SplitMix64 rng(3);
  auto g = random_grads(ps, rng, 1.0f);
  g[4].data()[10] = std::numeric_limits<float>::quiet_NaN();
  for (bool fused : {true, false}) {
    ParamStore store(clone_vars(ps), fused);
    store.load_grads(g);
    try {
      store.clip(0.1f);
      FAIL();
    } catch (const NumericError& e) {
      EXPECT_NE(std::string(e.what()).find("p4"), std::string::npos) << e.what();
    }
  }
}

TEST(AdamTest, ZeroGradientsLeaveEverythingUnchanged) {
  std::vector<Var> ps = random_params(kShapes, 2);
  std::vector<Var> ref = clone_vars(ps);
  ParamStore store(ps, true);
  store.load_grads(std::vector<Tensor>(ps.size()));
  store.adam({}, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t k = 0; k < ref[i].value().data().size(); ++k) {
      EXPECT_EQ(ps[i].value().data()[k], ref[i].value().data()[k]);
      EXPECT_EQ(store.m(i).data()[k], 0.0f);
      EXPECT_EQ(store.v(i).data()[k], 0.0f);
    }
  }
}

TEST(AdamTest, TenStepsMatchPerTensorOracle) {
  const AdamConfig cfg;
  std::vector<Var> ps = random_params(kShapes, 2);
  std::vector<Var> ref = clone_vars(ps);
  std::vector<std::vector<double>> p(ps.size()), m(ps.size()), v(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (float x : ref[i].value().data()) p[i].push_back(x);
    m[i].assign(p[i].size(), 0.0);
    v[i].assign(p[i].size(), 0.0);
  }
  ParamStore store(ps, true);
  SplitMix64 rng(9);
  for (int step = 1; step <= 10; ++step) {
    auto g = random_grads(ps, rng, 1.0f);
    store.load_grads(g);
    store.adam(cfg, step);
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t k = 0; k < p[i].size(); ++k) {
        const double gk = g[i].data()[k];
        m[i][k] = 0.9 * m[i][k] + 0.1 * gk;
        v[i][k] = 0.999 * v[i][k] + 0.001 * gk * gk;
        const double mh = m[i][k] / (1 - std::pow(0.9, step));
        const double vh = v[i][k] / (1 - std::pow(0.999, step));
        p[i][k] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t k = 0; k < p[i].size(); ++k) worst = std::max(worst, std::abs(ps[i].value().data()[k] - p[i][k]));
  EXPECT_LE(worst, 1e-7);
}

TEST(EmaTest, OneStepFromZeroAndHundredStepOracle) {
  std::vector<Var> ps = random_params(kShapes, 2);
  ParamStore store(ps, true);
  store.ema(0.9);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t k = 0; k < ps[i].value().data().size(); ++k)
      EXPECT_NEAR(store.shadow(i).data()[k], 0.1 * ps[i].value().data()[k], 1e-8);

  ParamStore walk(clone_vars(ps), false);
  std::vector<std::vector<double>> s(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) s[i].assign(ps[i].value().data().size(), 0.0);
  SplitMix64 rng(21);
  for (int step = 0; step < 100; ++step) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Tensor& pv = const_cast<Var&>(walk.param(i)).mutable_value();
      for (std::size_t k = 0; k < s[i].size(); ++k) {
        pv.data()[k] += static_cast<float>(rng.uniform(-0.01f, 0.01f));
      }
    }
    walk.ema(0.999);
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t k = 0; k < s[i].size(); ++k)
        s[i][k] = 0.999 * s[i][k] + 0.001 * double(walk.param(i).value().data()[k]);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t k = 0; k < s[i].size(); ++k) worst = std::max(worst, std::abs(walk.shadow(i).data()[k] - s[i][k]));
  EXPECT_LE(worst, 1e-7);
}

TEST(FusionTest, FusedEqualsUnfusedBitwiseOverTenSteps) {
  run_workers({1, 1, 1}, [&](Comm& comm) {
    std::vector<Var> a = random_params(kShapes, 2), b = clone_vars(a);
    ParamStore fa(a, true), fb(b, false);
    fa.reset_shadow();
    fb.reset_shadow();
    SplitMix64 ra(9), rb(9);
    for (int step = 1; step <= 10; ++step) {
      fa.load_grads(random_grads(a, ra, 1.0f));
      fb.load_grads(random_grads(b, rb, 1.0f));
      for (ParamStore* s : {&fa, &fb}) {
        s->grad_sync(comm, {});
        s->clip(0.1f);
        s->adam({}, step);
        s->ema(0.999);
      }
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i].value().data().size(); ++k) {
        ASSERT_EQ(a[i].value().data()[k], b[i].value().data()[k]);
        ASSERT_EQ(fa.shadow(i).data()[k], fb.shadow(i).data()[k]);
        ASSERT_EQ(fa.m(i).data()[k], fb.m(i).data()[k]);
      }
    }
  });
}

TEST(FusionTest, Bf16ParametersGetTheirOwnRegion) {
  std::vector<Var> ps = random_params(kShapes, 2);
  ps[1].mutable_value() = Tensor(ps[1].value().shape(), std::vector<float>(ps[1].value().data().begin(), ps[1].value().data().end()), DType::kBF16);
  ParamStore store(ps, true);
  ASSERT_EQ(store.layout().regions().size(), 2u);
  EXPECT_EQ(store.layout().entries()[1].region, 1);
  EXPECT_EQ(ps[1].value().buffer(), store.param_region(1).buffer());
  SplitMix64 rng(1);
  store.load_grads(random_grads(ps, rng, 1.0f));
  store.adam({}, 1);
  for (float x : ps[1].value().data()) EXPECT_EQ(x, bf16::round(x));
}

}  // namespace
}  // namespace evo
