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

#include <optional>
#include <span>
#include <vector>

#include "evo/tensor.h"

// Tensor-core operator set. Every public function counts one operator call on
// the calling thread's OpCounter. Arithmetic is F32; a BF16 operand yields a
// BF16 result rounded to nearest-even.
namespace evo::ops {

enum class Elementwise { kAdd, kMul, kSigmoid, kRelu, kScale };

inline constexpr float kLayerNormEps = 1e-5f;

// numpy-style right-aligned broadcast of two shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Batched product over the last two dims; leading dims broadcast. `b` may be
// a plain [K, N] matrix.
Tensor matmul(const Tensor& a, const Tensor& b, std::optional<DType> out_dtype = {});
// Same with optional transposition of the trailing two dims of either operand.
Tensor matmul_t(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
                std::optional<DType> out_dtype = {});

Tensor softmax_lastdim(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
struct LayerNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy);

Tensor cast_bf16(const Tensor& x);
Tensor widen(const Tensor& x);
Tensor cast(const Tensor& x, DType dtype);

Tensor elementwise(Elementwise kind, const Tensor& x, const Tensor* y = nullptr,
                   float scalar = 1.0f, std::optional<DType> out_dtype = {});
Tensor add(const Tensor& x, const Tensor& y, std::optional<DType> out_dtype = {});
Tensor mul(const Tensor& x, const Tensor& y, std::optional<DType> out_dtype = {});
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// While alive, every relu on this thread folds the branch each input element
// took into a digest. Equal digests mean the same piecewise-linear piece.
class KinkWatch {
 public:
  KinkWatch();
  ~KinkWatch();
  KinkWatch(const KinkWatch&) = delete;
  KinkWatch& operator=(const KinkWatch&) = delete;
  std::uint64_t digest() const;
  void reset();
  static void observe(std::span<const float> pre);
};
Tensor scale(const Tensor& x, float s, std::optional<DType> out_dtype = {});
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

Tensor permute(const Tensor& x, std::span<const int> perm);
Tensor transpose(const Tensor& x, int d0, int d1);
Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t length);
Tensor concat(std::span<const Tensor> parts, int dim);
// Sums `x` down to `shape` (the inverse of broadcasting `shape` up to x).
Tensor reduce_to_shape(const Tensor& x, const Shape& shape);
Tensor sum_all(const Tensor& x);

// In-place accumulate: dst += src (src broadcast onto dst). Shapes must be
// broadcast-compatible with the result equal to dst's shape.
void add_inplace(Tensor& dst, const Tensor& src);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace evo::ops
