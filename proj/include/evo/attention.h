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
#include <functional>
#include <string>
#include <vector>

#include "evo/autodiff.h"
#include "evo/prng.h"

namespace evo {

// Gated self-attention weights. Projections are stored per head:
// wq/wk/wv/wg are [C, H, c], bg is [H, c], wo is [H, c, C], bo is [C].
struct AttentionParams {
  Var wq, wk, wv, wg, bg, wo, bo;

  std::int64_t channels() const { return wq.shape()[0]; }
  std::int64_t heads() const { return wq.shape()[1]; }
  std::int64_t head_dim() const { return wq.shape()[2]; }
  std::vector<Var> vars() const { return {wq, wk, wv, wg, bg, wo, bo}; }

  static AttentionParams init(std::int64_t channels, std::int64_t heads, SplitMix64& rng,
                              const std::string& prefix);
};

struct AttentionInput {
  Var x;        // [B, S, R, C]
  Tensor mask;  // [B, S, R], 1 = valid key
  Var bias;     // optional [H, R, R] or [B, H, R, R]
};

enum class AttentionImpl { kReference, kFused };

inline constexpr float kMaskBias = 1e9f;

// Fine-grained composition: every intermediate is its own buffer, including
// q·kᵀ, the mask-biased logits and the pair-biased logits.
Var gated_attention_reference(const AttentionInput& in, const AttentionParams& p);

// One tape node. Merged QKV GEMM, a single logits buffer that receives both
// biases and the softmax in place, and five retained intermediates: qkv,
// softmax output, context, gate, output.
Var gated_attention_fused(const AttentionInput& in, const AttentionParams& p);

Var gated_attention(const AttentionInput& in, const AttentionParams& p, AttentionImpl impl);

// Number of buffers a fused attention node keeps for its backward pass
// (inputs excluded).
inline constexpr int kFusedAttentionRetained = 5;

using ChunkFn = std::function<Var(const Var& chunk, std::int64_t start)>;

// Runs `f` on consecutive slices of `x` along `dim` (the last one may be
// short) and concatenates the results. `f` must treat `dim` as a batch
// dimension; that cannot be checked here.
Var subbatch_apply(const ChunkFn& f, const Var& x, int dim, std::int64_t chunk);

}  // namespace evo
