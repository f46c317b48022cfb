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

#include <span>
#include <vector>

#include "evo/autodiff.h"
#include "evo/ops.h"

// Differentiable counterparts of the tensor-core operators. Forward values are
// computed by evo::ops; a node is recorded only when a tape is current and
// an input requires grad. Gradients are always F32.
namespace evo::fn {

Var matmul(const Var& a, const Var& b);
// x·W (+ bias).
Var linear(const Var& x, const Var& w, const Var* bias = nullptr);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, float s);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var softmax_lastdim(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta);
Var permute(const Var& x, std::vector<int> perm);
Var transpose(const Var& x, int d0, int d1);
// Free reshape: the output aliases the input buffer.
Var reshape(const Var& x, Shape shape);
Var slice(const Var& x, int dim, std::int64_t start, std::int64_t length);
Var concat(std::span<const Var> parts, int dim);
Var cast(const Var& x, DType dtype);
Var sum(const Var& x);
Var mean_square(const Var& x);

}  // namespace evo::fn
