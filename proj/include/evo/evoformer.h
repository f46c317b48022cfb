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

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evo/attention.h"
#include "evo/autodiff.h"

namespace evo {

struct ModelConfig {
  std::int64_t batch = 1;
  std::int64_t n_seq = 8;
  std::int64_t n_res = 16;
  // Planner-only extents and depths.
  std::int64_t n_extra_seq = 0;
  std::int64_t n_templ = 0;
  std::int64_t n_extra_blocks = 0;
  std::int64_t n_template_blocks = 0;
  std::int64_t c_m = 32;
  std::int64_t c_z = 16;
  std::int64_t c_e = 0;  // extra-MSA channels, planner only
  std::int64_t heads_msa = 4;
  std::int64_t heads_pair = 4;
  std::int64_t n_blocks = 2;
  std::int64_t c_opm = 8;
  std::int64_t transition_factor = 4;
  std::int64_t feat_msa = 8;
  std::int64_t feat_pair = 8;
  double mask_padding = 0.1;
  DType activation = DType::kF32;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

inline constexpr float kOpmEps = 1e-3f;

struct LayerNormParams {
  Var gamma, beta;
};

struct TransitionParams {
  LayerNormParams ln;
  Var w1, b1, w2, b2;
};

struct RowAttentionParams {
  LayerNormParams ln_msa, ln_pair;
  Var wbias;  // [C_z, H]
  AttentionParams att;
};

struct ColumnAttentionParams {
  LayerNormParams ln;
  AttentionParams att;
};

struct OuterProductMeanParams {
  LayerNormParams ln;
  Var wa, wb;  // [C_m, c_opm]
  Var wz, bz;  // [c_opm², C_z], [C_z]
};

struct TriangleAttentionParams {
  LayerNormParams ln;
  Var wbias;  // [C_z, H]
  AttentionParams att;
};

enum class Branch { kMsa, kPair };

struct BlockParams {
  RowAttentionParams row;
  ColumnAttentionParams col;
  TransitionParams msa_transition;
  OuterProductMeanParams opm;
  TriangleAttentionParams tri_start, tri_end;
  TransitionParams pair_transition;

  std::vector<Var> vars() const;
  std::vector<Var> branch_vars(Branch b) const;
};

struct EmbedParams {
  Var w_msa, b_msa, w_pair, b_pair;
};

struct ModelParams {
  EmbedParams embed;
  std::vector<BlockParams> blocks;

  // Declaration order; this is the fused-layout inventory order.
  std::vector<Var> vars() const;
  // Which branch owns each entry of vars() under branch parallelism.
  std::vector<Branch> owners() const;
  // Deep copy onto the current ledger.
  ModelParams clone() const;
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
};

struct Features {
  Tensor msa;        // [B, S, R, F_m]
  Tensor pair;       // [B, R, R, F_z]
  Tensor msa_mask;   // [B, S, R]
  Tensor pair_mask;  // [B, R, R]

  static Features synthesize(const ModelConfig& cfg, std::uint64_t seed);
};

struct Reps {
  Var msa;   // [B, S_local, R, C_m]
  Var pair;  // [B, R_local, R, C_z]
};

// Axial collectives used inside a block. The default is a single worker:
// every call is the identity.
class AxialComm {
 public:
  virtual ~AxialComm() = default;
  virtual int size() const { return 1; }
  virtual int rank() const { return 0; }
  virtual Var all_gather(const Var& x, int dim, std::string_view module);
  virtual Var reduce_scatter(const Var& x, int dim, std::string_view module);
  virtual Var all_to_all(const Var& x, int split_dim, int concat_dim, std::string_view module);
};

// Branch stitching. The default runs both branches locally.
class BranchHooks {
 public:
  virtual ~BranchHooks() = default;
  virtual bool runs(Branch) const { return true; }
  virtual Var pair_in(const Var& pair) { return pair; }
  virtual Var opm_out(const Var& update) { return update; }
  virtual Var pair_out(const Var& pair) { return pair; }
  virtual Var msa_entry(const Var& msa) { return msa; }
  virtual Var msa_exit(const Var& msa) { return msa; }
};

struct ExecContext {
  AttentionImpl attention = AttentionImpl::kFused;
  std::int64_t chunk = 0;  // subbatch rows per attention call; 0 = off
  bool recompute = false;
  DType activation = DType::kF32;
  const Features* features = nullptr;
  AxialComm* axial = nullptr;
  BranchHooks* branch = nullptr;

  AxialComm& comm() const;
  BranchHooks& hooks() const;
  bool collective() const { return axial != nullptr || branch != nullptr; }
};

// Sub-operators. Inputs are the local shards; masks come from ctx.features.
Var msa_row_attention(const Var& msa, const Var& pair, const RowAttentionParams& p,
                      const ExecContext& ctx);
Var msa_column_attention(const Var& msa, const ColumnAttentionParams& p, const ExecContext& ctx);
Var transition(const Var& x, const TransitionParams& p);
// Masked partial sums over the local sequences, packed as [B, R, R, P + 1]
// (P numerator channels, then the mask-pair count).
Var outer_product_mean_partial(const Var& msa, const OuterProductMeanParams& p,
                               const ExecContext& ctx);
// Divides by the count (+ eps) and projects to C_z.
Var outer_product_mean_finish(const Var& packed, const OuterProductMeanParams& p);
Var outer_product_mean(const Var& msa, const OuterProductMeanParams& p, const ExecContext& ctx);
Var triangle_attention_start(const Var& pair, const TriangleAttentionParams& p,
                             const ExecContext& ctx);
Var triangle_attention_end(const Var& pair, const TriangleAttentionParams& p,
                           const ExecContext& ctx);

Var msa_stack(const Var& msa, const Var& pair, const BlockParams& p, const ExecContext& ctx);
Var pair_stack(const Var& pair, const BlockParams& p, const ExecContext& ctx);

Reps evoformer_block(const Reps& in, const BlockParams& p, const ExecContext& ctx);
// Same result; keeps only the block inputs and re-runs the block during
// backward.
Reps checkpointed_block(const Reps& in, const BlockParams& p, const ExecContext& ctx);

// Linear embedding of the local feature shards, cast to ctx.activation.
Reps embed(const ModelParams& params, const ExecContext& ctx);

Var synthetic_loss(const Var& msa, const Var& pair);

// Runs the blocks n_recycles times; only the last cycle records onto the
// current tape. Cycles after the first add LN(pair_out) to the pair embedding
// and LN(msa_out row 0) to msa row 0, both detached.
Reps model_forward(const ModelParams& params, const ExecContext& ctx, int n_recycles);

struct ForwardResult {
  Reps out;
  Var loss;
};
ForwardResult model_forward_with_recycling(const ModelParams& params, const ExecContext& ctx,
                                           int n_recycles);

int draw_num_recycles(std::uint64_t base_seed, std::int64_t step);

}  // namespace evo
