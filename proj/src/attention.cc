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

#include "evo/attention.h"

#include <algorithm>
#include <cmath>

#include "evo/errors.h"
#include "evo/functional.h"
#include "evo/ledger.h"
#include "evo/op_counter.h"
#include "evo/ops.h"

namespace evo {
namespace {

constexpr DType kF32 = DType::kF32;

struct Dims {
  std::int64_t B, S, R, C, H, c;
  bool batched_bias = false;
  std::int64_t hc() const { return H * c; }
};

void expect_shape(const Var& v, const Shape& want, const char* what) {
  if (!v.defined() || v.shape() != want) {
    throw DimensionError(std::string("attention ") + what + " must be " + shape_str(want) +
                         ", got " + (v.defined() ? shape_str(v.shape()) : "<none>"));
  }
}

Dims check(const AttentionInput& in, const AttentionParams& p) {
  if (!in.x.defined() || in.x.value().rank() != 4) {
    throw DimensionError("attention input must be [B,S,R,C], got " +
                         (in.x.defined() ? shape_str(in.x.shape()) : std::string("<none>")));
  }
  const Shape& xs = in.x.shape();
  Dims d{xs[0], xs[1], xs[2], xs[3], 0, 0};
  if (!p.wq.defined() || p.wq.value().rank() != 3) throw DimensionError("attention wq must be [C,H,c]");
  d.H = p.heads();
  d.c = p.head_dim();
  if (p.channels() != d.C || d.H * d.c != d.C) {
    throw DimensionError("attention weights " + shape_str(p.wq.shape()) + " do not fit input " +
                         shape_str(xs));
  }
  const Shape proj{d.C, d.H, d.c};
  expect_shape(p.wq, proj, "wq");
  expect_shape(p.wk, proj, "wk");
  expect_shape(p.wv, proj, "wv");
  expect_shape(p.wg, proj, "wg");
  expect_shape(p.bg, {d.H, d.c}, "bg");
  expect_shape(p.wo, {d.H, d.c, d.C}, "wo");
  expect_shape(p.bo, {d.C}, "bo");
  if (in.mask.shape() != Shape{d.B, d.S, d.R}) {
    throw DimensionError("attention mask must be " + shape_str({d.B, d.S, d.R}) + ", got " +
                         shape_str(in.mask.shape()));
  }
  const auto m = in.mask.data();
  for (std::int64_t row = 0; row < d.B * d.S; ++row) {
    bool any = false;
    for (std::int64_t j = 0; j < d.R; ++j) {
      const float v = m[row * d.R + j];
      if (v != 0.0f && v != 1.0f) throw ContractError("attention mask values must be 0 or 1");
      any = any || v == 1.0f;
    }
    if (!any) throw ContractError("attention mask row " + std::to_string(row) + " has no valid key");
  }
  if (in.bias.defined()) {
    const Shape& bs = in.bias.shape();
    if (bs == Shape{d.B, d.H, d.R, d.R}) {
      d.batched_bias = true;
    } else if (bs != Shape{d.H, d.R, d.R}) {
      throw DimensionError("attention bias must be [H,R,R] or [B,H,R,R] = " +
                           shape_str({d.B, d.H, d.R, d.R}) + ", got " + shape_str(bs));
    }
  }
  return d;
}

// (mask - 1) * 1e9 laid out as [B, S, 1, 1, R].
Tensor mask_bias(const Tensor& mask, const Dims& d) {
  Tensor out({d.B, d.S, 1, 1, d.R});
  auto o = out.data();
  const auto m = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (m[i] - 1.0f) * kMaskBias;
  return out;
}

Tensor merged_qkv_weight(const AttentionParams& p, const Dims& d) {
  const Tensor parts[] = {p.wq.value().view_as({d.C, d.hc()}), p.wk.value().view_as({d.C, d.hc()}),
                          p.wv.value().view_as({d.C, d.hc()})};
  return ops::concat(parts, 1);
}

void round_if_bf16(Tensor& t) {
  if (t.dtype() == DType::kBF16) t.canonicalize();
}

void fused_backward(BackwardContext& bc, const Dims& d, float scale) {
  const std::int64_t BS = d.B * d.S, R = d.R, H = d.H, c = d.c, hc = d.hc(), row3 = 3 * hc;
  const std::int64_t rows = BS * R;
  const Tensor& G = *bc.grad_output();
  const Tensor& qkv = bc.saved(0);
  const Tensor& w = bc.saved(1);
  const Tensor& ctx = bc.saved(2);
  const Tensor& gate = bc.saved(3);
  const Tensor& x = bc.saved(5);
  const Tensor G2 = G.view_as({rows, d.C});
  // Saved tensors are dropped as soon as their last use is behind us.
  bc.release(4);

  if (bc.needs_grad(8)) bc.accumulate(8, ops::reduce_to_shape(G, {d.C}));
  Tensor ctx2 = ctx.view_as({rows, hc});
  if (bc.needs_grad(7)) {
    Tensor gated = ops::mul(ctx2, gate.view_as({rows, hc}), kF32);
    bc.accumulate(7, ops::matmul_t(gated, true, G2, false, kF32).view_as({H, c, d.C}));
  }
  Tensor dy = ops::matmul_t(G2, false, bc.saved(10).view_as({hc, d.C}), true, kF32);
  Tensor dctx = ops::mul(dy, gate.view_as({rows, hc}), kF32);
  Tensor dgpre = ops::sigmoid_backward(gate.view_as({rows, hc}), ops::mul(dy, ctx2, kF32));
  dy = Tensor();
  ctx2 = Tensor();
  bc.release(2);
  bc.release(3);
  const Tensor x2 = x.view_as({rows, d.C});
  if (bc.needs_grad(5)) {
    bc.accumulate(5, ops::matmul_t(x2, true, dgpre, false, kF32).view_as({d.C, H, c}));
  }
  if (bc.needs_grad(6)) bc.accumulate(6, ops::reduce_to_shape(dgpre, {hc}).view_as({H, c}));

  Tensor dx;
  if (bc.needs_grad(0)) dx = ops::matmul_t(dgpre, false, bc.saved(9).view_as({d.C, hc}), true, kF32);
  dgpre = Tensor();
  // Each of dq, dk, dv goes into its weight gradient and into dx, then is
  // dropped; the merged weight and its full gradient never exist.
  auto project_back = [&](int part, Tensor& dpart) {
    if (bc.needs_grad(2 + part)) {
      bc.accumulate(2 + part, ops::matmul_t(x2, true, dpart, false, kF32).view_as({d.C, H, c}));
    }
    if (bc.needs_grad(0)) {
      ops::add_inplace(dx, ops::matmul_t(dpart, false, bc.saved(6 + part).view_as({d.C, hc}), true, kF32));
    }
    dpart = Tensor();
  };

  const float* pq = qkv.data().data();
  const float* pw = w.data().data();
  const float* pdc = dctx.data().data();
  Tensor dl({d.B, d.S, H, R, R});
  Tensor dv({rows, hc});
  float* pdl = dl.data().data();
  float* pdv = dv.data().data();
  for (std::int64_t bs = 0; bs < BS; ++bs) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t i = 0; i < R; ++i) {
        const float* dci = pdc + (bs * R + i) * hc + h * c;
        const float* wi = pw + ((bs * H + h) * R + i) * R;
        float* dli = pdl + ((bs * H + h) * R + i) * R;
        for (std::int64_t j = 0; j < R; ++j) {
          const float* vj = pq + (bs * R + j) * row3 + 2 * hc + h * c;
          float* dvj = pdv + (bs * R + j) * hc + h * c;
          float acc = 0.0f;
          for (std::int64_t e = 0; e < c; ++e) {
            acc += dci[e] * vj[e];
            dvj[e] += wi[j] * dci[e];
          }
          dli[j] = acc;
        }
        float dot = 0.0f;
        for (std::int64_t j = 0; j < R; ++j) dot += dli[j] * wi[j];
        for (std::int64_t j = 0; j < R; ++j) dli[j] = wi[j] * (dli[j] - dot);
      }
    }
  }
  dctx = Tensor();
  bc.release(1);
  project_back(2, dv);
  if (bc.needs_grad(1)) {
    const Shape bshape = d.batched_bias ? Shape{d.B, H, R, R} : Shape{H, R, R};
    Tensor db(bshape);
    float* pb = db.data().data();
    const std::int64_t block = H * R * R;
    for (std::int64_t bs = 0; bs < BS; ++bs) {
      float* dst = pb + (d.batched_bias ? (bs / d.S) * block : 0);
      const float* src = pdl + bs * block;
      for (std::int64_t t = 0; t < block; ++t) dst[t] += src[t];
    }
    bc.accumulate(1, std::move(db));
  }
  Tensor dq({rows, hc});
  Tensor dk({rows, hc});
  float* pdq = dq.data().data();
  float* pdk = dk.data().data();
  for (std::int64_t bs = 0; bs < BS; ++bs) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t i = 0; i < R; ++i) {
        const float* dli = pdl + ((bs * H + h) * R + i) * R;
        const float* qi = pq + (bs * R + i) * row3 + h * c;
        float* dqi = pdq + (bs * R + i) * hc + h * c;
        for (std::int64_t j = 0; j < R; ++j) {
          const float* kj = pq + (bs * R + j) * row3 + hc + h * c;
          float* dkj = pdk + (bs * R + j) * hc + h * c;
          const float g = dli[j] * scale;
          for (std::int64_t e = 0; e < c; ++e) {
            dqi[e] += g * kj[e];
            dkj[e] += g * qi[e];
          }
        }
      }
    }
  }
  dl = Tensor();
  bc.release(0);
  project_back(0, dq);
  project_back(1, dk);
  if (bc.needs_grad(0)) bc.accumulate(0, dx.view_as(x.shape()));
}

}  // namespace

AttentionParams AttentionParams::init(std::int64_t channels, std::int64_t heads, SplitMix64& rng,
                                      const std::string& prefix) {
  if (heads < 1 || channels % heads != 0) {
    throw DimensionError("channels " + std::to_string(channels) + " not divisible by heads " +
                         std::to_string(heads));
  }
  const std::int64_t c = channels / heads;
  auto uniform = [&](Shape shape, float a) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = rng.uniform(-a, a);
    return t;
  };
  const float a_in = 1.0f / std::sqrt(static_cast<float>(channels));
  AttentionParams p;
  p.wq = Var(uniform({channels, heads, c}, a_in), true, prefix + ".wq");
  p.wk = Var(uniform({channels, heads, c}, a_in), true, prefix + ".wk");
  p.wv = Var(uniform({channels, heads, c}, a_in), true, prefix + ".wv");
  p.wg = Var(uniform({channels, heads, c}, a_in), true, prefix + ".wg");
  p.bg = Var(uniform({heads, c}, 0.5f), true, prefix + ".bg");
  p.wo = Var(uniform({heads, c, channels}, a_in), true, prefix + ".wo");
  p.bo = Var(uniform({channels}, 0.1f), true, prefix + ".bo");
  return p;
}

Var gated_attention_reference(const AttentionInput& in, const AttentionParams& p) {
  const Dims d = check(in, p);
  const Var& x = in.x;
  const std::vector<int> heads_first{0, 1, 3, 2, 4};
  auto project = [&](const Var& w) {
    Var flat = fn::matmul(x, fn::reshape(w, {d.C, d.hc()}));
    return fn::permute(fn::reshape(flat, {d.B, d.S, d.R, d.H, d.c}), heads_first);
  };
  Var q = fn::scale(project(p.wq), 1.0f / std::sqrt(static_cast<float>(d.c)));
  Var k = project(p.wk);
  Var v = project(p.wv);
  Var mb(mask_bias(in.mask, d));
  // All three stay alive until softmax runs.
  Var kt = fn::transpose(k, 3, 4);
  Var qk, qk_mask, logits;
  {
    LedgerScope scope("logits");
    qk = fn::matmul(q, kt);
    qk_mask = fn::add(qk, mb);
    if (in.bias.defined()) {
      Var bias = d.batched_bias ? fn::reshape(in.bias, {d.B, 1, d.H, d.R, d.R}) : in.bias;
      logits = fn::add(qk_mask, bias);
    } else {
      logits = qk_mask;
    }
  }
  MemoryLedger::current().probe("softmax");
  Var w = fn::softmax_lastdim(logits);
  Var ctx = fn::permute(fn::matmul(w, v), heads_first);
  Var gate = fn::sigmoid(fn::add(fn::matmul(x, fn::reshape(p.wg, {d.C, d.hc()})),
                                 fn::reshape(p.bg, {d.hc()})));
  Var gated = fn::mul(fn::reshape(ctx, {d.B, d.S, d.R, d.hc()}), gate);
  return fn::add(fn::matmul(gated, fn::reshape(p.wo, {d.hc(), d.C})), p.bo);
}

Var gated_attention_fused(const AttentionInput& in, const AttentionParams& p) {
  const Dims d = check(in, p);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d.c));
  const Tensor& x = in.x.value();
  const std::int64_t BS = d.B * d.S, R = d.R, H = d.H, c = d.c, hc = d.hc(), row3 = 3 * hc;
  Tensor qkv, w, ctx, gate, out;
  {
    OpCountSuspend quiet;
    qkv = ops::matmul(x, merged_qkv_weight(p, d));
    const DType act = qkv.dtype();
    {
      LedgerScope scope("logits");
      w = Tensor({d.B, d.S, H, R, R}, act);
    }
    const float* pq = qkv.data().data();
    float* pl = w.data().data();
    for (std::int64_t bs = 0; bs < BS; ++bs) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t i = 0; i < R; ++i) {
          const float* qi = pq + (bs * R + i) * row3 + h * c;
          float* li = pl + ((bs * H + h) * R + i) * R;
          for (std::int64_t j = 0; j < R; ++j) {
            const float* kj = pq + (bs * R + j) * row3 + hc + h * c;
            double acc = 0.0;
            for (std::int64_t e = 0; e < c; ++e) acc += double(qi[e] * scale) * kj[e];
            li[j] = static_cast<float>(acc);
          }
        }
      }
    }
    round_if_bf16(w);
    // Both biases land in the same buffer.
    const auto m = in.mask.data();
    for (std::int64_t bs = 0; bs < BS; ++bs) {
      for (std::int64_t hi = 0; hi < H * R; ++hi) {
        float* li = pl + (bs * H * R + hi) * R;
        for (std::int64_t j = 0; j < R; ++j) li[j] += (m[bs * R + j] - 1.0f) * kMaskBias;
      }
    }
    round_if_bf16(w);
    if (in.bias.defined()) {
      const float* pb = in.bias.value().data().data();
      for (std::int64_t bs = 0; bs < BS; ++bs) {
        const float* bb = pb + (d.batched_bias ? (bs / d.S) * H * R * R : 0);
        float* lb = pl + bs * H * R * R;
        for (std::int64_t t = 0; t < H * R * R; ++t) lb[t] += bb[t];
      }
      round_if_bf16(w);
    }
    MemoryLedger::current().probe("softmax");
    for (std::int64_t row = 0; row < BS * H * R; ++row) {
      float* li = pl + row * R;
      float mx = li[0];
      for (std::int64_t j = 1; j < R; ++j) mx = std::max(mx, li[j]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < R; ++j) {
        li[j] = std::exp(li[j] - mx);
        sum += li[j];
      }
      const auto inv = static_cast<float>(1.0 / sum);
      for (std::int64_t j = 0; j < R; ++j) li[j] *= inv;
    }
    round_if_bf16(w);
    // From here on the buffer holds the softmax output, not logits.
    MemoryLedger::current().reattribute(w.buffer_id());

    ctx = Tensor({d.B, d.S, R, H, c}, act);
    float* pc = ctx.data().data();
    std::vector<double> acc(static_cast<std::size_t>(c));
    for (std::int64_t bs = 0; bs < BS; ++bs) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t i = 0; i < R; ++i) {
          const float* wi = pl + ((bs * H + h) * R + i) * R;
          float* ci = pc + (bs * R + i) * hc + h * c;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::int64_t j = 0; j < R; ++j) {
            const float* vj = pq + (bs * R + j) * row3 + 2 * hc + h * c;
            for (std::int64_t e = 0; e < c; ++e) acc[e] += double(wi[j]) * vj[e];
          }
          for (std::int64_t e = 0; e < c; ++e) ci[e] = static_cast<float>(acc[e]);
        }
      }
    }
    round_if_bf16(ctx);
    gate = ops::sigmoid(ops::add(ops::matmul(x, p.wg.value().view_as({d.C, hc})),
                                 p.bg.value().view_as({hc})));
    Tensor gated = ops::mul(ctx.view_as({d.B, d.S, R, hc}), gate);
    out = ops::add(ops::matmul(gated, p.wo.value().view_as({hc, d.C})), p.bo.value());
  }
  OpCounter::current().count("fused_attention");

  const Var inputs[] = {in.x, in.bias, p.wq, p.wk, p.wv, p.wg, p.bg, p.wo, p.bo};
  if (!should_record(inputs)) return Var(std::move(out));
  // saved[0..4] are the retained intermediates; the rest alias inputs.
  std::vector<Tensor> saved;
  saved.reserve(11);
  saved.push_back(std::move(qkv));
  saved.push_back(std::move(w));
  saved.push_back(std::move(ctx));
  saved.push_back(std::move(gate));
  saved.push_back(out.shared());
  saved.push_back(x.shared());
  for (const Var* v : {&p.wq, &p.wk, &p.wv, &p.wg, &p.wo}) saved.push_back(v->value().shared());
  return record_op(std::move(out), "fused_attention", inputs, std::move(saved),
                   [d, scale](BackwardContext& bc) {
                     {
                       OpCountSuspend quiet;
                       fused_backward(bc, d, scale);
                     }
                     OpCounter::current().count("fused_attention_grad");
                   });
}

Var gated_attention(const AttentionInput& in, const AttentionParams& p, AttentionImpl impl) {
  return impl == AttentionImpl::kFused ? gated_attention_fused(in, p)
                                       : gated_attention_reference(in, p);
}

Var subbatch_apply(const ChunkFn& f, const Var& x, int dim, std::int64_t chunk) {
  if (chunk < 1) throw ContractError("subbatch chunk must be >= 1, got " + std::to_string(chunk));
  const std::int64_t extent = x.value().dim(dim);
  if (chunk >= extent) return f(x, 0);
  std::vector<Var> parts;
  for (std::int64_t start = 0; start < extent; start += chunk) {
    const std::int64_t len = std::min(chunk, extent - start);
    parts.push_back(f(fn::slice(x, dim, start, len), start));
  }
  return fn::concat(parts, dim);
}

}  // namespace evo
