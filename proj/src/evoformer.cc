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

#include "evo/evoformer.h"

#include <cmath>

#include "evo/errors.h"
#include "evo/functional.h"
#include "evo/op_counter.h"
#include "evo/ops.h"
#include "evo/prng.h"

namespace evo {
namespace {

Tensor uniform(Shape shape, SplitMix64& rng, float a) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

float fan_in_bound(std::int64_t fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

Var param(Tensor value, const std::string& name) { return Var(std::move(value), true, name); }

LayerNormParams make_ln(std::int64_t c, const std::string& name) {
  return {param(Tensor::full({c}, 1.0f), name + ".gamma"), param(Tensor({c}), name + ".beta")};
}

TransitionParams make_transition(std::int64_t c, std::int64_t factor, SplitMix64& rng,
                                 const std::string& name) {
  const std::int64_t h = c * factor;
  return {make_ln(c, name + ".ln"), param(uniform({c, h}, rng, fan_in_bound(c)), name + ".w1"),
          param(uniform({h}, rng, 0.1f), name + ".b1"),
          param(uniform({h, c}, rng, fan_in_bound(h)), name + ".w2"),
          param(uniform({c}, rng, 0.1f), name + ".b2")};
}

Var layer_norm(const Var& x, const LayerNormParams& p) { return fn::layer_norm(x, p.gamma, p.beta); }

template <class Block, class F>
void visit_block(Block& b, F&& f) {
  auto ln = [&](auto& p) {
    f(p.gamma, Branch::kMsa);
    f(p.beta, Branch::kMsa);
  };
  auto ln_as = [&](auto& p, Branch br) {
    f(p.gamma, br);
    f(p.beta, br);
  };
  auto att = [&](auto& a, Branch br) {
    for (auto* v : {&a.wq, &a.wk, &a.wv, &a.wg, &a.bg, &a.wo, &a.bo}) f(*v, br);
  };
  auto trans = [&](auto& t, Branch br) {
    ln_as(t.ln, br);
    for (auto* v : {&t.w1, &t.b1, &t.w2, &t.b2}) f(*v, br);
  };
  ln(b.row.ln_msa);
  ln(b.row.ln_pair);
  f(b.row.wbias, Branch::kMsa);
  att(b.row.att, Branch::kMsa);
  ln(b.col.ln);
  att(b.col.att, Branch::kMsa);
  trans(b.msa_transition, Branch::kMsa);
  ln(b.opm.ln);
  for (auto* v : {&b.opm.wa, &b.opm.wb, &b.opm.wz, &b.opm.bz}) f(*v, Branch::kMsa);
  for (auto* t : {&b.tri_start, &b.tri_end}) {
    ln_as(t->ln, Branch::kPair);
    f(t->wbias, Branch::kPair);
    att(t->att, Branch::kPair);
  }
  trans(b.pair_transition, Branch::kPair);
}

template <class Model, class F>
void visit_model(Model& m, F&& f) {
  for (auto* v : {&m.embed.w_msa, &m.embed.b_msa, &m.embed.w_pair, &m.embed.b_pair}) {
    f(*v, Branch::kMsa);
  }
  for (auto& b : m.blocks) visit_block(b, f);
}

struct Shard {
  std::int64_t s0, s_len, r0, r_len;
};

const Features& features_of(const ExecContext& ctx) {
  if (ctx.features == nullptr) throw ContractError("execution context has no features");
  return *ctx.features;
}

Shard shard_of(const ExecContext& ctx) {
  const Features& f = features_of(ctx);
  const AxialComm& comm = ctx.comm();
  const std::int64_t S = f.msa_mask.dim(1), R = f.msa_mask.dim(2);
  const int d = comm.size(), r = comm.rank();
  if (S % d != 0 || R % d != 0) {
    throw ConfigError("plan.dap", "degree " + std::to_string(d) + " does not divide N_seq=" +
                                      std::to_string(S) + " and N_res=" + std::to_string(R));
  }
  return {r * (S / d), S / d, r * (R / d), R / d};
}

Tensor rows(const Tensor& t, std::int64_t start, std::int64_t len) {
  if (start == 0 && len == t.dim(1)) return t.shared();
  return ops::slice(t, 1, start, len);
}

Var attend(const Var& x, const Tensor& mask, const Var& bias, const AttentionParams& p,
           const ExecContext& ctx) {
  if (ctx.chunk <= 0 || ctx.chunk >= x.value().dim(1)) {
    return gated_attention({x, mask.shared(), bias}, p, ctx.attention);
  }
  ChunkFn f = [&](const Var& part, std::int64_t start) {
    AttentionInput in{part, ops::slice(mask, 1, start, part.value().dim(1)), bias};
    return gated_attention(in, p, ctx.attention);
  };
  return subbatch_apply(f, x, 1, ctx.chunk);
}

// LN(z)·W projected per head, gathered to the full first residue dim and laid
// out as [H, R, R] (B = 1) or [B, H, R, R].
Var pair_bias(const Var& z, const Var& wbias, const ExecContext& ctx, std::string_view module) {
  Var b = ctx.comm().all_gather(fn::matmul(z, wbias), 1, module);
  Var bias = fn::permute(b, {0, 3, 1, 2});
  const Shape& s = bias.shape();
  if (s[0] == 1) return fn::reshape(bias, {s[1], s[2], s[3]});
  return bias;
}

Var zeros_like(const Var& v) { return Var(Tensor(v.shape(), v.value().dtype())); }

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name, "must be >= 1, got " + std::to_string(v));
  };
  positive(batch, "batch");
  positive(n_seq, "n_seq");
  positive(n_res, "n_res");
  positive(c_m, "c_m");
  positive(c_z, "c_z");
  positive(heads_msa, "heads_msa");
  positive(heads_pair, "heads_pair");
  positive(n_blocks, "n_blocks");
  positive(c_opm, "c_opm");
  positive(transition_factor, "transition_factor");
  positive(feat_msa, "feat_msa");
  positive(feat_pair, "feat_pair");
  for (auto [v, name] : {std::pair{n_extra_seq, "n_extra_seq"}, {n_templ, "n_templ"},
                         {n_extra_blocks, "n_extra_blocks"}, {n_template_blocks, "n_template_blocks"},
                         {c_e, "c_e"}}) {
    if (v < 0) throw ConfigError(std::string("model.") + name, "must be >= 0");
  }
  if (c_m % heads_msa != 0) {
    throw ConfigError("model.heads_msa", "c_m=" + std::to_string(c_m) + " is not divisible by " +
                                             std::to_string(heads_msa));
  }
  if (c_z % heads_pair != 0) {
    throw ConfigError("model.heads_pair", "c_z=" + std::to_string(c_z) +
                                              " is not divisible by " + std::to_string(heads_pair));
  }
  if (!(mask_padding >= 0.0 && mask_padding < 1.0)) {
    throw ConfigError("model.mask_padding", "must be in [0, 1)");
  }
}

std::vector<Var> BlockParams::vars() const {
  std::vector<Var> out;
  visit_block(*this, [&](const Var& v, Branch) { out.push_back(v); });
  return out;
}

std::vector<Var> BlockParams::branch_vars(Branch b) const {
  std::vector<Var> out;
  visit_block(*this, [&](const Var& v, Branch br) {
    if (br == b) out.push_back(v);
  });
  return out;
}

std::vector<Var> ModelParams::vars() const {
  std::vector<Var> out;
  visit_model(*this, [&](const Var& v, Branch) { out.push_back(v); });
  return out;
}

std::vector<Branch> ModelParams::owners() const {
  std::vector<Branch> out;
  visit_model(*this, [&](const Var&, Branch b) { out.push_back(b); });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  visit_model(copy, [](Var& v, Branch) { v = Var(Tensor(v.value()), v.requires_grad(), v.name()); });
  return copy;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  ModelParams m;
  m.embed.w_msa = param(uniform({cfg.feat_msa, cfg.c_m}, rng, fan_in_bound(cfg.feat_msa)), "embed.msa.w");
  m.embed.b_msa = param(uniform({cfg.c_m}, rng, 0.1f), "embed.msa.b");
  m.embed.w_pair = param(uniform({cfg.feat_pair, cfg.c_z}, rng, fan_in_bound(cfg.feat_pair)), "embed.pair.w");
  m.embed.b_pair = param(uniform({cfg.c_z}, rng, 0.1f), "embed.pair.b");
  const std::int64_t P = cfg.c_opm * cfg.c_opm;
  for (std::int64_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string b = "block" + std::to_string(i);
    BlockParams p;
    p.row.ln_msa = make_ln(cfg.c_m, b + ".row.ln_msa");
    p.row.ln_pair = make_ln(cfg.c_z, b + ".row.ln_pair");
    p.row.wbias = param(uniform({cfg.c_z, cfg.heads_msa}, rng, fan_in_bound(cfg.c_z)), b + ".row.wbias");
    p.row.att = AttentionParams::init(cfg.c_m, cfg.heads_msa, rng, b + ".row.att");
    p.col.ln = make_ln(cfg.c_m, b + ".col.ln");
    p.col.att = AttentionParams::init(cfg.c_m, cfg.heads_msa, rng, b + ".col.att");
    p.msa_transition = make_transition(cfg.c_m, cfg.transition_factor, rng, b + ".msa_transition");
    p.opm.ln = make_ln(cfg.c_m, b + ".opm.ln");
    p.opm.wa = param(uniform({cfg.c_m, cfg.c_opm}, rng, fan_in_bound(cfg.c_m)), b + ".opm.wa");
    p.opm.wb = param(uniform({cfg.c_m, cfg.c_opm}, rng, fan_in_bound(cfg.c_m)), b + ".opm.wb");
    p.opm.wz = param(uniform({P, cfg.c_z}, rng, fan_in_bound(P)), b + ".opm.wz");
    p.opm.bz = param(uniform({cfg.c_z}, rng, 0.1f), b + ".opm.bz");
    for (auto [t, name] : {std::pair{&p.tri_start, ".tri_start"}, {&p.tri_end, ".tri_end"}}) {
      t->ln = make_ln(cfg.c_z, b + name + ".ln");
      t->wbias = param(uniform({cfg.c_z, cfg.heads_pair}, rng, fan_in_bound(cfg.c_z)), b + name + ".wbias");
      t->att = AttentionParams::init(cfg.c_z, cfg.heads_pair, rng, b + name + ".att");
    }
    p.pair_transition = make_transition(cfg.c_z, cfg.transition_factor, rng, b + ".pair_transition");
    m.blocks.push_back(std::move(p));
  }
  return m;
}

Features Features::synthesize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  const std::int64_t B = cfg.batch, S = cfg.n_seq, R = cfg.n_res;
  const auto pad = static_cast<float>(cfg.mask_padding);
  Features f;
  f.msa = uniform({B, S, R, cfg.feat_msa}, rng, 1.0f);
  f.pair = uniform({B, R, R, cfg.feat_pair}, rng, 1.0f);
  f.msa_mask = Tensor({B, S, R});
  auto mm = f.msa_mask.data();
  for (std::int64_t row = 0; row < B * S; ++row) {
    const bool query_row = row % S == 0;
    bool any = false;
    for (std::int64_t j = 0; j < R; ++j) {
      const float v = query_row || rng.uniform() >= pad ? 1.0f : 0.0f;
      mm[row * R + j] = v;
      any = any || v == 1.0f;
    }
    if (!any) mm[row * R + static_cast<std::int64_t>(rng.next() % static_cast<std::uint64_t>(R))] = 1.0f;
  }
  f.pair_mask = Tensor({B, R, R});
  auto pm = f.pair_mask.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < R; ++i)
      for (std::int64_t j = 0; j < R; ++j) {
        pm[(b * R + i) * R + j] = i == j || rng.uniform() >= pad ? 1.0f : 0.0f;
      }
  return f;
}

Var AxialComm::all_gather(const Var& x, int, std::string_view) { return x; }
Var AxialComm::reduce_scatter(const Var& x, int, std::string_view) { return x; }
Var AxialComm::all_to_all(const Var& x, int, int, std::string_view) { return x; }

AxialComm& ExecContext::comm() const {
  static AxialComm single;
  return axial != nullptr ? *axial : single;
}

BranchHooks& ExecContext::hooks() const {
  static BranchHooks both;
  return branch != nullptr ? *branch : both;
}

Var msa_row_attention(const Var& msa, const Var& pair, const RowAttentionParams& p,
                      const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  Var bias = pair_bias(layer_norm(pair, p.ln_pair), p.wbias, ctx, "msa_stack");
  Tensor mask = rows(features_of(ctx).msa_mask, sh.s0, sh.s_len);
  return attend(layer_norm(msa, p.ln_msa), mask, bias, p.att, ctx);
}

Var msa_column_attention(const Var& msa, const ColumnAttentionParams& p, const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  AxialComm& comm = ctx.comm();
  // [B, S_l, R, C] -> all sequences for the local residue columns.
  Var x = comm.all_to_all(layer_norm(msa, p.ln), 2, 1, "msa_stack");
  Tensor cols = ops::slice(features_of(ctx).msa_mask, 2, sh.r0, sh.r_len);
  Tensor mask = ops::transpose(cols, 1, 2);
  Var out = fn::transpose(attend(fn::transpose(x, 1, 2), mask, Var(), p.att, ctx), 1, 2);
  return comm.all_to_all(out, 1, 2, "msa_stack");
}

Var transition(const Var& x, const TransitionParams& p) {
  Var h = fn::relu(fn::linear(layer_norm(x, p.ln), p.w1, &p.b1));
  return fn::linear(h, p.w2, &p.b2);
}

Var outer_product_mean_partial(const Var& msa, const OuterProductMeanParams& p,
                               const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  const Shape& s = msa.shape();
  const std::int64_t B = s[0], S = s[1], R = s[2];
  const std::int64_t ca = p.wa.shape()[1], cb = p.wb.shape()[1];
  Tensor m = rows(features_of(ctx).msa_mask, sh.s0, sh.s_len);
  Var mcol(m.view_as({B, S, R, 1}));
  Var x = layer_norm(msa, p.ln);
  Var a = fn::reshape(fn::mul(fn::matmul(x, p.wa), mcol), {B, S, R * ca});
  Var b = fn::reshape(fn::mul(fn::matmul(x, p.wb), mcol), {B, S, R * cb});
  Var outer = fn::matmul(fn::transpose(a, 1, 2), b);  // [B, R·ca, R·cb]
  outer = fn::permute(fn::reshape(outer, {B, R, ca, R, cb}), {0, 1, 3, 2, 4});
  outer = fn::reshape(outer, {B, R, R, ca * cb});
  Tensor count = ops::matmul_t(m, true, m, false, msa.value().dtype());
  const Var parts[] = {outer, Var(count.view_as({B, R, R, 1}))};
  return fn::concat(parts, 3);
}

Var outer_product_mean_finish(const Var& packed, const OuterProductMeanParams& p) {
  const Shape& s = packed.shape();
  const std::int64_t P = s[3] - 1;
  Var outer = fn::slice(packed, 3, 0, P);
  // The count depends on masks only, so it carries no gradient.
  Tensor inv = ops::slice(packed.value(), 3, P, 1);
  for (float& v : inv.data()) v = 1.0f / (v + kOpmEps);
  inv.canonicalize();
  return fn::linear(fn::mul(outer, Var(std::move(inv))), p.wz, &p.bz);
}

Var outer_product_mean(const Var& msa, const OuterProductMeanParams& p, const ExecContext& ctx) {
  Var packed = ctx.comm().reduce_scatter(outer_product_mean_partial(msa, p, ctx), 1,
                                         "outer_product_mean");
  return outer_product_mean_finish(packed, p);
}

Var triangle_attention_start(const Var& pair, const TriangleAttentionParams& p,
                             const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  Var z = layer_norm(pair, p.ln);
  Var bias = pair_bias(z, p.wbias, ctx, "pair_stack");
  return attend(z, rows(features_of(ctx).pair_mask, sh.r0, sh.r_len), bias, p.att, ctx);
}

Var triangle_attention_end(const Var& pair, const TriangleAttentionParams& p,
                           const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  AxialComm& comm = ctx.comm();
  // Shard on the second residue dim, then swap the two so it leads.
  Var zt = fn::transpose(comm.all_to_all(layer_norm(pair, p.ln), 2, 1, "pair_stack"), 1, 2);
  Var bias = pair_bias(zt, p.wbias, ctx, "pair_stack");
  Tensor mask = rows(ops::transpose(features_of(ctx).pair_mask, 1, 2), sh.r0, sh.r_len);
  Var out = fn::transpose(attend(zt, mask, bias, p.att, ctx), 1, 2);
  return comm.all_to_all(out, 1, 2, "pair_stack");
}

Var msa_stack(const Var& msa, const Var& pair, const BlockParams& p, const ExecContext& ctx) {
  Var m = fn::add(msa, msa_row_attention(msa, pair, p.row, ctx));
  m = fn::add(m, msa_column_attention(m, p.col, ctx));
  return fn::add(m, transition(m, p.msa_transition));
}

Var pair_stack(const Var& pair, const BlockParams& p, const ExecContext& ctx) {
  Var z = fn::add(pair, triangle_attention_start(pair, p.tri_start, ctx));
  z = fn::add(z, triangle_attention_end(z, p.tri_end, ctx));
  return fn::add(z, transition(z, p.pair_transition));
}

Reps evoformer_block(const Reps& in, const BlockParams& p, const ExecContext& ctx) {
  count_event("evoformer_block");
  BranchHooks& hooks = ctx.hooks();
  Var pair = hooks.pair_in(in.pair);
  Var msa = in.msa;
  Var update;
  if (hooks.runs(Branch::kMsa)) {
    msa = msa_stack(msa, pair, p, ctx);
    update = outer_product_mean(msa, p.opm, ctx);
  } else {
    update = zeros_like(pair);
  }
  update = hooks.opm_out(update);
  Var out = hooks.runs(Branch::kPair) ? pair_stack(fn::add(pair, update), p, ctx) : zeros_like(pair);
  return {msa, hooks.pair_out(out)};
}

Reps checkpointed_block(const Reps& in, const BlockParams& p, const ExecContext& ctx) {
  Reps fwd;
  {
    TapeGuard off(nullptr);
    fwd = evoformer_block(in, p, ctx);
  }
  if (Tape::current() == nullptr) return fwd;
  std::vector<Var> inputs{in.msa, in.pair};
  for (const Var& v : p.vars()) inputs.push_back(v);
  const bool collective = ctx.collective();
  if (!collective && !should_record(inputs)) return fwd;
  std::vector<Tensor> outs = tensor_list(fwd.msa.value().shared(), fwd.pair.value().shared());
  std::vector<Tensor> saved = tensor_list(in.msa.value().shared(), in.pair.value().shared());
  auto vars = record_multi(std::move(outs), "checkpoint", inputs, std::move(saved),
                           [p, ctx](BackwardContext& bc) {
    Var m(bc.saved(0).shared(), bc.needs_grad(0));
    Var z(bc.saved(1).shared(), bc.needs_grad(1));
    Tape inner;
    inner.set_leaf_sink([&bc](std::int64_t id, Tensor g) { bc.accumulate_leaf(id, std::move(g)); },
                        {m.id(), z.id()});
    Reps r;
    {
      TapeGuard guard(&inner);
      r = evoformer_block({m, z}, p, ctx);
    }
    std::vector<std::pair<Var, Tensor>> seeds;
    const Var* outs[] = {&r.msa, &r.pair};
    for (std::size_t k = 0; k < 2; ++k) {
      const Tensor* g = bc.grad_output(k);
      seeds.emplace_back(*outs[k], g != nullptr ? g->shared() : Tensor(outs[k]->shape()));
    }
    inner.backward_from(seeds);
    for (std::size_t k = 0; k < 2; ++k) {
      if (!bc.needs_grad(k)) continue;
      Tensor g = inner.take_grad(k == 0 ? m.id() : z.id());
      if (g.defined()) bc.accumulate(k, std::move(g));
    }
  }, collective, collective);
  return {vars[0], vars[1]};
}

Reps embed(const ModelParams& params, const ExecContext& ctx) {
  const Shard sh = shard_of(ctx);
  const Features& f = features_of(ctx);
  Var z = fn::linear(Var(rows(f.pair, sh.r0, sh.r_len)), params.embed.w_pair, &params.embed.b_pair);
  if (ctx.activation != DType::kF32) z = fn::cast(z, ctx.activation);
  if (!ctx.hooks().runs(Branch::kMsa)) {
    // Placeholder; the msa exit hook replaces it with the owner's result.
    const Shape& s = f.msa.shape();
    return {Var(Tensor({s[0], sh.s_len, s[2], params.embed.w_msa.value().dim(1)}, ctx.activation)), z};
  }
  Var m = fn::linear(Var(rows(f.msa, sh.s0, sh.s_len)), params.embed.w_msa, &params.embed.b_msa);
  if (ctx.activation != DType::kF32) m = fn::cast(m, ctx.activation);
  return {m, z};
}

Var synthetic_loss(const Var& msa, const Var& pair) {
  return fn::add(fn::mean_square(msa), fn::mean_square(pair));
}

Reps model_forward(const ModelParams& params, const ExecContext& ctx, int n_recycles) {
  if (n_recycles < 1 || n_recycles > 4) {
    throw ContractError("n_recycles must be in [1, 4], got " + std::to_string(n_recycles));
  }
  const Shard sh = shard_of(ctx);
  BranchHooks& hooks = ctx.hooks();
  Tape* outer = Tape::current();
  Tensor fb_msa, fb_pair;
  Reps r;
  for (int cycle = 0; cycle < n_recycles; ++cycle) {
    const bool last = cycle == n_recycles - 1;
    TapeGuard guard(last ? outer : nullptr);
    count_event("recycle");
    r = embed(params, ctx);
    if (cycle > 0) {
      r.pair = fn::add(r.pair, Var(std::move(fb_pair)));
      if (fb_msa.defined()) r.msa = fn::add(r.msa, Var(std::move(fb_msa)));
    }
    r.msa = hooks.msa_entry(r.msa);
    for (const BlockParams& b : params.blocks) {
      r = ctx.recompute ? checkpointed_block(r, b, ctx) : evoformer_block(r, b, ctx);
    }
    r.msa = hooks.msa_exit(r.msa);
    if (last) break;
    const Tensor& z = r.pair.value();
    fb_pair = ops::layer_norm(z, Tensor::full({z.dim(-1)}, 1.0f), Tensor({z.dim(-1)}));
    fb_msa = Tensor();
    if (sh.s0 == 0 && hooks.runs(Branch::kMsa)) {
      const Tensor& m = r.msa.value();
      const std::int64_t c = m.dim(-1);
      Tensor row0 = ops::layer_norm(ops::slice(m, 1, 0, 1), Tensor::full({c}, 1.0f), Tensor({c}));
      if (m.dim(1) == 1) {
        fb_msa = std::move(row0);
      } else {
        const Tensor parts[] = {row0, Tensor({m.dim(0), m.dim(1) - 1, m.dim(2), c}, row0.dtype())};
        fb_msa = ops::concat(parts, 1);
      }
    }
  }
  return r;
}

ForwardResult model_forward_with_recycling(const ModelParams& params, const ExecContext& ctx,
                                           int n_recycles) {
  Reps out = model_forward(params, ctx, n_recycles);
  Var loss = synthetic_loss(out.msa, out.pair);
  return {out, loss};
}

int draw_num_recycles(std::uint64_t base_seed, std::int64_t step) {
  return 1 + static_cast<int>(prng64(base_seed + static_cast<std::uint64_t>(step)) % 4);
}

}  // namespace evo
