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
#include <vector>

#include <gtest/gtest.h>

#include "evo/attention.h"
#include "evo/errors.h"
#include "evo/functional.h"
#include "evo/ledger.h"
#include "evo/op_counter.h"
#include "test_util.h"

namespace evo {
namespace {

using testing::projection_loss;
using testing::random_tensor;

Tensor random_mask(Shape shape, SplitMix64& rng) {
  Tensor m(shape);
  const std::int64_t R = shape.back();
  auto d = m.data();
  for (std::int64_t row = 0; row < m.numel() / R; ++row) {
    for (std::int64_t j = 0; j < R; ++j) d[row * R + j] = rng.uniform() < 0.25f ? 0.0f : 1.0f;
    d[row * R + static_cast<std::int64_t>(rng.next() % R)] = 1.0f;
  }
  return m;
}

struct Case {
  AttentionParams p;
  AttentionInput in;
};

Case make_case(std::int64_t B, std::int64_t S, std::int64_t R, std::int64_t C, std::int64_t H,
               std::uint64_t seed, bool bias = true, bool batched_bias = false) {
  SplitMix64 rng(seed);
  Case k;
  k.p = AttentionParams::init(C, H, rng, "att");
  k.in.x = Var(random_tensor({B, S, R, C}, rng), true);
  k.in.mask = random_mask({B, S, R}, rng);
  if (bias) {
    Shape bs = batched_bias ? Shape{B, H, R, R} : Shape{H, R, R};
    k.in.bias = Var(random_tensor(bs, rng), true);
  }
  return k;
}

// Straight loops in double, no shared code with the library kernels.
std::vector<double> loop_oracle(const Case& k, std::vector<double>* weights = nullptr) {
  const Shape& xs = k.in.x.shape();
  const std::int64_t B = xs[0], S = xs[1], R = xs[2], C = xs[3];
  const std::int64_t H = k.p.heads(), c = k.p.head_dim();
  auto X = k.in.x.value().data();
  auto M = k.in.mask.data();
  auto wq = k.p.wq.value().data(), wk = k.p.wk.value().data(), wv = k.p.wv.value().data();
  auto wg = k.p.wg.value().data(), bg = k.p.bg.value().data();
  auto wo = k.p.wo.value().data(), bo = k.p.bo.value().data();
  const bool has_bias = k.in.bias.defined();
  const bool batched = has_bias && k.in.bias.value().rank() == 4;
  std::vector<double> out(B * S * R * C, 0.0);
  if (weights) weights->assign(B * S * H * R * R, 0.0);
  auto proj = [&](auto w, std::int64_t b, std::int64_t s, std::int64_t i, std::int64_t h,
                  std::int64_t e) {
    double acc = 0.0;
    for (std::int64_t t = 0; t < C; ++t) acc += X[((b * S + s) * R + i) * C + t] * double(w[(t * H + h) * c + e]);
    return acc;
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t s = 0; s < S; ++s)
      for (std::int64_t i = 0; i < R; ++i)
        for (std::int64_t h = 0; h < H; ++h) {
          std::vector<double> logit(R);
          for (std::int64_t j = 0; j < R; ++j) {
            double dot = 0.0;
            for (std::int64_t e = 0; e < c; ++e) dot += proj(wq, b, s, i, h, e) * proj(wk, b, s, j, h, e);
            logit[j] = dot / std::sqrt(double(c)) + (M[(b * S + s) * R + j] - 1.0) * 1e9;
            if (has_bias) {
              auto bb = k.in.bias.value().data();
              logit[j] += bb[((batched ? b * H : 0) + h) * R * R + i * R + j];
            }
          }
          double mx = logit[0];
          for (double l : logit) mx = std::max(mx, l);
          double z = 0.0;
          for (double& l : logit) z += (l = std::exp(l - mx));
          for (std::int64_t e = 0; e < c; ++e) {
            double ctx = 0.0;
            for (std::int64_t j = 0; j < R; ++j) ctx += logit[j] / z * proj(wv, b, s, j, h, e);
            const double g = 1.0 / (1.0 + std::exp(-(proj(wg, b, s, i, h, e) + bg[h * c + e])));
            for (std::int64_t t = 0; t < C; ++t) out[((b * S + s) * R + i) * C + t] += ctx * g * wo[(h * c + e) * C + t];
          }
          if (weights) {
            for (std::int64_t j = 0; j < R; ++j) (*weights)[(((b * S + s) * H + h) * R + i) * R + j] = logit[j] / z;
          }
        }
  for (std::int64_t r = 0; r < B * S * R; ++r)
    for (std::int64_t t = 0; t < C; ++t) out[r * C + t] += bo[t];
  return out;
}

double max_diff(const Tensor& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b[i]));
  return m;
}

TEST(AttentionTest, ReferenceMatchesLoopOracle) {
  for (bool batched : {false, true}) {
    Case k = make_case(2, 3, 5, 8, 2, 1, true, batched);
    Var out = gated_attention_reference(k.in, k.p);
    EXPECT_LE(max_diff(out.value(), loop_oracle(k)), 1e-5);
  }
}

TEST(AttentionTest, FusedMatchesReferenceAcrossShapes) {
  std::uint64_t seed = 100;
  for (std::int64_t S : {1, 2, 4, 8, 16}) {
    for (std::int64_t R : {1, 2, 4, 8, 16}) {
      for (std::int64_t H : {1, 2, 4}) {
        Case k = make_case(1, S, R, 4 * H, H, ++seed, seed % 2 == 0);
        TapeGuard no_grad(nullptr);
        Var ref = gated_attention_reference(k.in, k.p);
        Var fused = gated_attention_fused(k.in, k.p);
        EXPECT_LE(ops::max_abs_diff(ref.value(), fused.value()), 1e-5) << S << " " << R << " " << H;
      }
    }
  }
}

TEST(AttentionTest, FusedMatchesReferenceInBf16) {
  std::uint64_t seed = 300;
  for (std::int64_t S : {1, 4, 16}) {
    for (std::int64_t R : {2, 8, 16}) {
      for (std::int64_t H : {1, 2, 4}) {
        Case k = make_case(1, S, R, 4 * H, H, ++seed);
        k.in.x = Var(ops::cast_bf16(k.in.x.value()));
        TapeGuard no_grad(nullptr);
        Tensor ref = ops::widen(gated_attention_reference(k.in, k.p).value());
        Tensor fused = gated_attention_fused(k.in, k.p).value();
        EXPECT_EQ(fused.dtype(), DType::kBF16);
        float scale = 0.0f;
        for (float v : ref.data()) scale = std::max(scale, std::fabs(v));
        EXPECT_LE(ops::max_abs_diff(ref, ops::widen(fused)) / scale, 2e-2) << S << " " << R << " " << H;
      }
    }
  }
}

std::vector<Tensor> grads_of(const Case& k, AttentionImpl impl) {
  Tape tape;
  TapeGuard guard(&tape);
  Var loss = fn::mean_square(gated_attention(k.in, k.p, impl));
  std::vector<Var> params = k.p.vars();
  params.push_back(k.in.x);
  params.push_back(k.in.bias);
  return tape.backward(loss, params);
}

TEST(AttentionTest, FusedBackwardMatchesReference) {
  std::uint64_t seed = 500;
  for (bool batched : {false, true}) {
    for (std::int64_t R : {1, 3, 8}) {
      Case k = make_case(2, 3, R, 8, 2, ++seed, true, batched);
      auto ref = grads_of(k, AttentionImpl::kReference);
      auto fused = grads_of(k, AttentionImpl::kFused);
      ASSERT_EQ(ref.size(), fused.size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        float scale = 1e-12f;
        for (float v : ref[i].data()) scale = std::max(scale, std::fabs(v));
        EXPECT_LE(ops::max_abs_diff(ref[i], fused[i]) / scale, 1e-4) << "grad " << i << " R=" << R;
      }
    }
  }
}

TEST(AttentionTest, FusedGradCheck) {
  Case k = make_case(1, 2, 4, 8, 2, 700);
  SplitMix64 rng(701);
  for (const Var& v : k.p.vars()) testing::randomize(v, rng);
  auto f = [&](const Var& x) {
    AttentionInput in = k.in;
    in.x = x;
    return projection_loss(gated_attention_fused(in, k.p), 702);
  };
  EXPECT_LE(grad_check(f, k.in.x.value()).max_rel_error, 1e-3);
  std::vector<Var> leaves = k.p.vars();
  leaves.push_back(k.in.bias);
  for (const Var& leaf : leaves) {
    auto g = [&] { return projection_loss(gated_attention_fused(k.in, k.p), 702); };
    EXPECT_LE(grad_check_leaf(g, leaf).max_rel_error, 1e-3) << leaf.name();
  }
}

TEST(AttentionTest, ZeroGateWeightsGiveHalfGate) {
  Case k = make_case(1, 2, 4, 8, 2, 800);
  k.p.wg.mutable_value() = Tensor(k.p.wg.shape());
  k.p.bg.mutable_value() = Tensor(k.p.bg.shape());
  TapeGuard no_grad(nullptr);
  Tensor full = gated_attention_fused(k.in, k.p).value();
  // Scaling wo by 2 and gate by 0.5 cancels: compare against the loop oracle
  // with sigmoid(0) = 0.5 built in.
  EXPECT_LE(max_diff(full, loop_oracle(k)), 1e-5);
  Case doubled = k;
  doubled.p.wo = Var(ops::scale(k.p.wo.value(), 2.0f));
  doubled.p.bo = Var(Tensor(k.p.bo.shape()));
  Tensor ungated = gated_attention_fused(doubled.in, doubled.p).value();
  Tensor no_bo = ops::add(full, ops::scale(k.p.bo.value(), -1.0f));
  EXPECT_LE(ops::max_abs_diff(ops::scale(ungated, 0.5f), no_bo), 1e-5);
}

TEST(AttentionTest, MaskedKeyGetsNoWeight) {
  Case k = make_case(1, 3, 6, 8, 2, 900);
  auto m = k.in.mask.data();
  for (int s = 0; s < 3; ++s) {
    m[s * 6 + 2] = 0.0f;
    m[s * 6 + 0] = 1.0f;
  }
  Tape tape;
  TapeGuard guard(&tape);
  gated_attention_fused(k.in, k.p);
  ASSERT_EQ(tape.size(), 1u);
  const Tensor& w = tape.nodes()[0].saved[1];
  for (std::int64_t row = 0; row < w.numel() / 6; ++row) {
    EXPECT_LE(w.data()[row * 6 + 2], 1e-30f);
    float sum = 0.0f;
    for (int j = 0; j < 6; ++j) sum += w.data()[row * 6 + j];
    EXPECT_NEAR(sum, 1.0f, 1e-6);
  }
  std::vector<double> ref_w;
  loop_oracle(k, &ref_w);
  for (std::size_t i = 0; i < ref_w.size(); ++i) EXPECT_NEAR(w.data()[i], ref_w[i], 1e-6);
}

TEST(AttentionTest, SingleKeyDegenerate) {
  Case k = make_case(1, 2, 1, 8, 4, 1000, false);
  TapeGuard no_grad(nullptr);
  Tensor out = gated_attention_fused(k.in, k.p).value();
  // softmax over one key is 1, so out = (gate ⊙ v)·Wo + bo.
  const Tensor& x = k.in.x.value();
  Tensor v = ops::matmul(x, k.p.wv.value().view_as({8, 8}));
  Tensor g = ops::sigmoid(ops::add(ops::matmul(x, k.p.wg.value().view_as({8, 8})), k.p.bg.value().view_as({8})));
  Tensor want = ops::add(ops::matmul(ops::mul(v, g), k.p.wo.value().view_as({8, 8})), k.p.bo.value());
  EXPECT_LE(ops::max_abs_diff(out, want), 1e-6);
}

int logits_live_at_softmax(const Case& k, AttentionImpl impl) {
  MemoryLedger ledger;
  LedgerBinding bind(ledger);
  ledger.set_probes_enabled(true);
  TapeGuard no_grad(nullptr);
  gated_attention(k.in, k.p, impl);
  EXPECT_EQ(ledger.probes().size(), 1u);
  const Shape& xs = k.in.x.shape();
  return ledger.probes().at(0).count({xs[0], xs[1], k.p.heads(), xs[2], xs[2]});
}

TEST(AttentionTest, LogitsBuffersAtSoftmax) {
  Case k = make_case(1, 4, 8, 12, 3, 1100);
  EXPECT_EQ(logits_live_at_softmax(k, AttentionImpl::kFused), 1);
  EXPECT_EQ(logits_live_at_softmax(k, AttentionImpl::kReference), 3);
}

TEST(AttentionTest, FusedRetainsFiveIntermediates) {
  Case k = make_case(1, 4, 8, 12, 3, 1200);
  Tape tape;
  TapeGuard guard(&tape);
  gated_attention_fused(k.in, k.p);
  ASSERT_EQ(tape.size(), 1u);
  auto retained = tape.retained_buffers(0, 1);
  for (const Var& v : k.p.vars()) retained.erase(v.value().buffer_id());
  retained.erase(k.in.x.value().buffer_id());
  EXPECT_EQ(retained.size(), static_cast<std::size_t>(kFusedAttentionRetained));
}

TEST(AttentionTest, FusedPeakBelowReference) {
  std::uint64_t seed = 1300;
  for (auto [S, R] : {std::pair{2, 4}, {4, 8}, {8, 16}}) {
    std::int64_t peaks[2];
    for (AttentionImpl impl : {AttentionImpl::kFused, AttentionImpl::kReference}) {
      Case k = make_case(1, S, R, 8, 2, seed);
      MemoryLedger ledger;
      LedgerBinding bind(ledger);
      Tape tape;
      TapeGuard guard(&tape);
      const std::int64_t base = ledger.live_bytes();
      ledger.reset_peak();
      Var loss = fn::mean_square(gated_attention(k.in, k.p, impl));
      auto params = k.p.vars();
      tape.backward(loss, params);
      peaks[impl == AttentionImpl::kFused ? 0 : 1] = ledger.peak_bytes() - base;
    }
    EXPECT_LT(peaks[0], peaks[1]) << S << "x" << R;
    ++seed;
  }
}

TEST(AttentionTest, CountsOneOpEachWay) {
  Case k = make_case(1, 2, 4, 8, 2, 1400);
  OpCounter::current().reset();
  Tape tape;
  TapeGuard guard(&tape);
  Var out = gated_attention_fused(k.in, k.p);
  EXPECT_EQ(OpCounter::current().total(), 1);
  Var loss = fn::sum(out);
  OpCounter::current().reset();
  auto params = k.p.vars();
  tape.backward(loss, params);
  EXPECT_EQ(OpCounter::current().get("fused_attention_grad"), 1);
  EXPECT_EQ(OpCounter::current().get("matmul"), 0);
}

TEST(AttentionTest, ShapeErrors) {
  Case k = make_case(1, 2, 4, 8, 2, 1500);
  AttentionInput bad = k.in;
  bad.mask = Tensor({1, 2, 5});
  EXPECT_THROW(gated_attention_fused(bad, k.p), DimensionError);
  bad = k.in;
  bad.bias = Var(Tensor({2, 4, 5}));
  EXPECT_THROW(gated_attention_reference(bad, k.p), DimensionError);
  bad = k.in;
  bad.x = Var(Tensor({1, 2, 4, 6}));
  EXPECT_THROW(gated_attention_fused(bad, k.p), DimensionError);
  SplitMix64 rng(1);
  EXPECT_THROW(AttentionParams::init(10, 4, rng, "x"), DimensionError);
}

ChunkFn attention_over_s(const Case& k) {
  return [&k](const Var& chunk, std::int64_t start) {
    AttentionInput in = k.in;
    in.x = chunk;
    in.mask = ops::slice(k.in.mask, 1, start, chunk.value().dim(1));
    return gated_attention_fused(in, k.p);
  };
}

TEST(SubbatchTest, ChunksAreBitwiseEqual) {
  Case k = make_case(1, 8, 6, 8, 2, 1600);
  TapeGuard no_grad(nullptr);
  Tensor direct = gated_attention_fused(k.in, k.p).value();
  for (std::int64_t chunk : {1, 2, 3, 5, 8, 20}) {
    Tensor chunked = subbatch_apply(attention_over_s(k), k.in.x, 1, chunk).value();
    EXPECT_EQ(ops::max_abs_diff(direct, chunked), 0.0f) << chunk;
  }
}

TEST(SubbatchTest, LogitsPeakScalesWithChunk) {
  Case k = make_case(1, 8, 6, 8, 2, 1700);
  std::int64_t peak[2];
  std::vector<float> outs[2];
  int idx = 0;
  for (std::int64_t chunk : {2, 8}) {
    MemoryLedger ledger;
    LedgerBinding bind(ledger);
    TapeGuard no_grad(nullptr);
    Var out = subbatch_apply(attention_over_s(k), k.in.x, 1, chunk);
    outs[idx].assign(out.value().data().begin(), out.value().data().end());
    peak[idx++] = ledger.segment_peak("logits");
  }
  EXPECT_EQ(outs[0], outs[1]);
  EXPECT_DOUBLE_EQ(double(peak[0]) / double(peak[1]), 0.25);
}

TEST(SubbatchTest, TwoLayerExampleIntermediatePeak) {
  SplitMix64 rng(1800);
  Var x(ops::cast_bf16(random_tensor({2, 2}, rng)));
  Var w1(ops::cast_bf16(random_tensor({2, 5}, rng)));
  Var w2(ops::cast_bf16(random_tensor({5, 2}, rng)));
  auto f = [&](const Var& chunk, std::int64_t) {
    Var hidden;
    {
      LedgerScope scope("intermediate");
      hidden = fn::matmul(chunk, w1);
    }
    return fn::matmul(hidden, w2);
  };
  std::int64_t peak[2];
  std::vector<float> outs[2];
  for (int i = 0; i < 2; ++i) {
    MemoryLedger ledger;
    LedgerBinding bind(ledger);
    TapeGuard no_grad(nullptr);
    Var out = subbatch_apply(f, x, 0, i == 0 ? 1 : 2);
    outs[i].assign(out.value().data().begin(), out.value().data().end());
    peak[i] = ledger.segment_peak("intermediate");
  }
  EXPECT_EQ(peak[0], 10);
  EXPECT_EQ(peak[1], 20);
  EXPECT_EQ(outs[0], outs[1]);
}

TEST(SubbatchTest, GradientsFlowThroughChunks) {
  Case k = make_case(1, 5, 4, 8, 2, 1900);
  auto f = [&](const Var& x) {
    AttentionInput in = k.in;
    in.x = x;
    const Case* kp = &k;
    ChunkFn g = [kp](const Var& chunk, std::int64_t start) {
      AttentionInput ci = kp->in;
      ci.x = chunk;
      ci.mask = ops::slice(kp->in.mask, 1, start, chunk.value().dim(1));
      return gated_attention_fused(ci, kp->p);
    };
    return projection_loss(subbatch_apply(g, x, 1, 2), 1901);
  };
  EXPECT_LE(grad_check(f, k.in.x.value()).max_rel_error, 1e-3);
}

}  // namespace
}  // namespace evo
