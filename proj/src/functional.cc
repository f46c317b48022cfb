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

#include "evo/functional.h"

#include <numeric>

#include "evo/errors.h"
#include "evo/op_counter.h"

namespace evo::fn {
namespace {

constexpr DType kF32 = DType::kF32;

Tensor reduced(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g.shared();
  return ops::reduce_to_shape(g, shape);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = ops::matmul(a.value(), b.value());
  const Var in[] = {a, b};
  if (!should_record(in)) return Var(std::move(out));
  const Shape ashape = a.shape(), bshape = b.shape();
  return record_op(std::move(out), "matmul", in, tensor_list(a.value().shared(), b.value().shared()),
                   [ashape, bshape](BackwardContext& ctx) {
                     const Tensor& dy = *ctx.grad_output();
                     const Tensor& av = ctx.saved(0);
                     const Tensor& bv = ctx.saved(1);
                     if (ctx.needs_grad(0)) {
                       Tensor da = ops::matmul_t(dy, false, bv, true, kF32);
                       ctx.accumulate(0, reduced(da, ashape));
                     }
                     if (ctx.needs_grad(1)) {
                       if (bshape.size() == 2) {
                         const std::int64_t k = av.dim(-1);
                         const std::int64_t n = dy.dim(-1);
                         Tensor a2 = av.view_as({av.numel() / k, k});
                         Tensor g2 = dy.view_as({dy.numel() / n, n});
                         ctx.accumulate(1, ops::matmul_t(a2, true, g2, false, kF32));
                       } else {
                         Tensor db = ops::matmul_t(av, true, dy, false, kF32);
                         ctx.accumulate(1, reduced(db, bshape));
                       }
                     }
                   });
}

Var linear(const Var& x, const Var& w, const Var* bias) {
  Var y = matmul(x, w);
  return bias != nullptr ? add(y, *bias) : y;
}

Var add(const Var& a, const Var& b) {
  Tensor out = ops::add(a.value(), b.value());
  const Var in[] = {a, b};
  if (!should_record(in)) return Var(std::move(out));
  const Shape ashape = a.shape(), bshape = b.shape();
  return record_op(std::move(out), "add", in, {}, [ashape, bshape](BackwardContext& ctx) {
    const Tensor& dy = *ctx.grad_output();
    if (ctx.needs_grad(0)) ctx.accumulate(0, reduced(dy, ashape));
    if (ctx.needs_grad(1)) ctx.accumulate(1, reduced(dy, bshape));
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = ops::mul(a.value(), b.value());
  const Var in[] = {a, b};
  if (!should_record(in)) return Var(std::move(out));
  const Shape ashape = a.shape(), bshape = b.shape();
  return record_op(std::move(out), "mul", in, tensor_list(a.value().shared(), b.value().shared()),
                   [ashape, bshape](BackwardContext& ctx) {
                     const Tensor& dy = *ctx.grad_output();
                     if (ctx.needs_grad(0)) {
                       ctx.accumulate(0, reduced(ops::mul(dy, ctx.saved(1), kF32), ashape));
                     }
                     if (ctx.needs_grad(1)) {
                       ctx.accumulate(1, reduced(ops::mul(dy, ctx.saved(0), kF32), bshape));
                     }
                   });
}

Var scale(const Var& x, float s) {
  Tensor out = ops::scale(x.value(), s);
  const Var in[] = {x};
  return record_op(std::move(out), "scale", in, {}, [s](BackwardContext& ctx) {
    ctx.accumulate(0, ops::scale(*ctx.grad_output(), s, kF32));
  });
}

Var sigmoid(const Var& x) {
  Tensor out = ops::sigmoid(x.value());
  const Var in[] = {x};
  if (!should_record(in)) return Var(std::move(out));
  Tensor keep = out.shared();
  return record_op(std::move(out), "sigmoid", in, tensor_list(std::move(keep)), [](BackwardContext& ctx) {
    ctx.accumulate(0, ops::sigmoid_backward(ctx.saved(0), *ctx.grad_output()));
  });
}

Var relu(const Var& x) {
  Tensor out = ops::relu(x.value());
  const Var in[] = {x};
  if (!should_record(in)) return Var(std::move(out));
  return record_op(std::move(out), "relu", in, tensor_list(x.value().shared()), [](BackwardContext& ctx) {
    ctx.accumulate(0, ops::relu_backward(ctx.saved(0), *ctx.grad_output()));
  });
}

Var softmax_lastdim(const Var& x) {
  Tensor out = ops::softmax_lastdim(x.value());
  const Var in[] = {x};
  if (!should_record(in)) return Var(std::move(out));
  Tensor keep = out.shared();
  return record_op(std::move(out), "softmax", in, tensor_list(std::move(keep)), [](BackwardContext& ctx) {
    ctx.accumulate(0, ops::softmax_backward(ctx.saved(0), *ctx.grad_output()));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
  Tensor out = ops::layer_norm(x.value(), gamma.value(), beta.value());
  const Var in[] = {x, gamma, beta};
  if (!should_record(in)) return Var(std::move(out));
  return record_op(std::move(out), "layer_norm", in,
                   tensor_list(x.value().shared(), gamma.value().shared()), [](BackwardContext& ctx) {
                     auto g = ops::layer_norm_backward(ctx.saved(0), ctx.saved(1),
                                                       *ctx.grad_output());
                     ctx.accumulate(0, std::move(g.dx));
                     ctx.accumulate(1, std::move(g.dgamma));
                     ctx.accumulate(2, std::move(g.dbeta));
                   });
}

Var permute(const Var& x, std::vector<int> perm) {
  Tensor out = ops::permute(x.value(), perm);
  const Var in[] = {x};
  if (!should_record(in)) return Var(std::move(out));
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return record_op(std::move(out), "permute", in, {},
                   [inverse = std::move(inverse)](BackwardContext& ctx) {
                     ctx.accumulate(0, ops::permute(*ctx.grad_output(), inverse));
                   });
}

Var transpose(const Var& x, int d0, int d1) {
  std::vector<int> perm(static_cast<std::size_t>(x.value().rank()));
  std::iota(perm.begin(), perm.end(), 0);
  if (d0 < 0) d0 += x.value().rank();
  if (d1 < 0) d1 += x.value().rank();
  std::swap(perm[static_cast<std::size_t>(d0)], perm[static_cast<std::size_t>(d1)]);
  return permute(x, std::move(perm));
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().view_as(std::move(shape));
  const Var in[] = {x};
  const Shape original = x.shape();
  return record_op(std::move(out), "reshape", in, {}, [original](BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad_output()->view_as(original));
  });
}

Var slice(const Var& x, int dim, std::int64_t start, std::int64_t length) {
  if (dim < 0) dim += x.value().rank();
  Tensor out = ops::slice(x.value(), dim, start, length);
  const Var in[] = {x};
  const Shape original = x.shape();
  return record_op(std::move(out), "slice", in, {},
                   [original, dim, start, length](BackwardContext& ctx) {
                     const Tensor& dy = *ctx.grad_output();
                     Tensor dx(original);
                     std::int64_t outer = 1, inner = 1;
                     for (int d = 0; d < dim; ++d) outer *= original[static_cast<std::size_t>(d)];
                     for (std::size_t d = static_cast<std::size_t>(dim) + 1; d < original.size(); ++d) {
                       inner *= original[d];
                     }
                     const std::int64_t extent = original[static_cast<std::size_t>(dim)];
                     const float* src = dy.data().data();
                     float* dst = dx.data().data();
                     for (std::int64_t o = 0; o < outer; ++o) {
                       std::copy_n(src + o * length * inner, length * inner,
                                   dst + (o * extent + start) * inner);
                     }
                     ctx.accumulate(0, std::move(dx));
                   });
}

Var concat(std::span<const Var> parts, int dim) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value().shared());
  Tensor out = ops::concat(values, dim);
  if (!should_record(parts)) return Var(std::move(out));
  if (dim < 0) dim += out.rank();
  std::vector<std::int64_t> extents;
  for (const Var& p : parts) extents.push_back(p.value().dim(dim));
  return record_op(std::move(out), "concat", parts, {},
                   [extents = std::move(extents), dim](BackwardContext& ctx) {
                     const Tensor& dy = *ctx.grad_output();
                     std::int64_t start = 0;
                     for (std::size_t i = 0; i < extents.size(); ++i) {
                       if (ctx.needs_grad(i)) {
                         ctx.accumulate(i, ops::slice(dy, dim, start, extents[i]));
                       }
                       start += extents[i];
                     }
                   });
}

Var cast(const Var& x, DType dtype) {
  Tensor out = ops::cast(x.value(), dtype);
  const Var in[] = {x};
  return record_op(std::move(out), "cast", in, {}, [](BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad_output()->shared());
  });
}

Var sum(const Var& x) {
  Tensor out = ops::sum_all(x.value());
  const Var in[] = {x};
  const Shape original = x.shape();
  return record_op(std::move(out), "sum", in, {}, [original](BackwardContext& ctx) {
    ctx.accumulate(0, Tensor::full(original, ctx.grad_output()->item()));
  });
}

Var mean_square(const Var& x) {
  OpCounter::current().count("reduce");
  double s = 0.0;
  for (float v : x.value().data()) s += double(v) * v;
  const auto n = static_cast<float>(x.value().numel());
  Tensor out = Tensor::scalar(static_cast<float>(s / n));
  const Var in[] = {x};
  if (!should_record(in)) return Var(std::move(out));
  return record_op(std::move(out), "mean_square", in, tensor_list(x.value().shared()),
                   [n](BackwardContext& ctx) {
                     const float g = ctx.grad_output()->item() * 2.0f / n;
                     const Tensor& xv = ctx.saved(0);
                     Tensor dx(xv.shape());
                     auto src = xv.data();
                     auto dst = dx.data();
                     for (std::size_t i = 0; i < src.size(); ++i) dst[i] = g * src[i];
                     ctx.accumulate(0, std::move(dx));
                   });
}

}  // namespace evo::fn
