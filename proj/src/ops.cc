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

#include "evo/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evo/errors.h"
#include "evo/op_counter.h"

namespace evo::ops {
namespace {

// Shape padded on the left to rank 5 with row-major strides; broadcast dims
// get stride 0.
struct Layout5 {
  std::int64_t ext[kMaxRank];
  std::int64_t stride[kMaxRank];
};

Layout5 layout_for(const Shape& in, const Shape& out) {
  Layout5 l{};
  const int pad_out = kMaxRank - static_cast<int>(out.size());
  const int pad_in = kMaxRank - static_cast<int>(in.size());
  std::int64_t s = 1;
  for (int d = kMaxRank - 1; d >= 0; --d) {
    l.ext[d] = d >= pad_out ? out[static_cast<std::size_t>(d - pad_out)] : 1;
    const std::int64_t e = d >= pad_in ? in[static_cast<std::size_t>(d - pad_in)] : 1;
    l.stride[d] = (e == 1 && l.ext[d] != 1) ? 0 : s;
    s *= e;
  }
  return l;
}

template <typename F>
void for_each_broadcast(const Shape& out, const Layout5& a, const Layout5& b, F&& f) {
  const Layout5 o = layout_for(out, out);
  std::int64_t idx = 0;
  for (std::int64_t i0 = 0; i0 < o.ext[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < o.ext[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < o.ext[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < o.ext[3]; ++i3) {
          const std::int64_t base_a =
              i0 * a.stride[0] + i1 * a.stride[1] + i2 * a.stride[2] + i3 * a.stride[3];
          const std::int64_t base_b =
              i0 * b.stride[0] + i1 * b.stride[1] + i2 * b.stride[2] + i3 * b.stride[3];
          for (std::int64_t i4 = 0; i4 < o.ext[4]; ++i4, ++idx) {
            f(idx, base_a + i4 * a.stride[4], base_b + i4 * b.stride[4]);
          }
        }
}

DType result_dtype(std::optional<DType> forced, DType a, DType b) {
  return forced ? *forced : promote(a, b);
}

void count(std::string_view kind) { OpCounter::current().count(kind); }

Tensor matmul_impl(const Tensor& a, bool ta, const Tensor& b, bool tb,
                   std::optional<DType> out_dtype) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::int64_t m = ta ? a.dim(-1) : a.dim(-2);
  const std::int64_t k = ta ? a.dim(-2) : a.dim(-1);
  const std::int64_t kb = tb ? b.dim(-1) : b.dim(-2);
  const std::int64_t n = tb ? b.dim(-2) : b.dim(-1);
  if (k != kb) {
    throw DimensionError("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch dims not broadcastable: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  if (out_shape.size() > static_cast<std::size_t>(kMaxRank)) {
    throw DimensionError("matmul result rank exceeds 5");
  }
  Tensor out(out_shape, result_dtype(out_dtype, a.dtype(), b.dtype()));

  Shape batch_pad = batch;
  while (batch_pad.size() < 3) batch_pad.insert(batch_pad.begin(), 1);
  // Batch index strides measured in matrices.
  auto matrix_strides = [&](const Shape& bs) {
    Shape padded = bs;
    while (padded.size() < batch_pad.size()) padded.insert(padded.begin(), 1);
    std::vector<std::int64_t> st(padded.size());
    std::int64_t s = 1;
    for (int d = static_cast<int>(padded.size()) - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      st[ud] = (padded[ud] == 1 && batch_pad[ud] != 1) ? 0 : s;
      s *= padded[ud];
    }
    return st;
  };
  const auto sa = matrix_strides(batch_a);
  const auto sb = matrix_strides(batch_b);
  const std::int64_t mat_a = m * k;
  const std::int64_t mat_b = k * n;
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const std::size_t nb = batch_pad.size();
  std::vector<std::int64_t> idx(nb, 0);
  const std::int64_t total = shape_numel(batch_pad);
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < total; ++t) {
    std::int64_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < nb; ++d) {
      oa += idx[d] * sa[d];
      ob += idx[d] * sb[d];
    }
    const float* A = pa + oa * mat_a;
    const float* B = pb + ob * mat_b;
    float* C = po + t * m * n;
    for (std::int64_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t p = 0; p < k; ++p) {
        const float av = ta ? A[p * m + i] : A[i * k + p];
        if (tb) {
          for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += double(av) * B[j * k + p];
        } else {
          const float* row = B + p * n;
          for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += double(av) * row[j];
        }
      }
      for (std::int64_t j = 0; j < n; ++j) C[i * n + j] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
    }
    for (int d = static_cast<int>(nb) - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      if (++idx[ud] < batch_pad[ud]) break;
      idx[ud] = 0;
    }
  }
  out.canonicalize();
  return out;
}

float apply_unary(Elementwise kind, float x, float s) {
  switch (kind) {
    case Elementwise::kSigmoid:
      return 1.0f / (1.0f + std::exp(-x));
    case Elementwise::kRelu:
      return x > 0.0f ? x : 0.0f;
    case Elementwise::kScale:
      return x * s;
    default:
      return x;
  }
}

const char* kind_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kMul: return "mul";
    case Elementwise::kSigmoid: return "sigmoid";
    case Elementwise::kRelu: return "relu";
    case Elementwise::kScale: return "scale";
  }
  return "elementwise";
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, std::optional<DType> out_dtype) {
  count("matmul");
  return matmul_impl(a, false, b, false, out_dtype);
}

Tensor matmul_t(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
                std::optional<DType> out_dtype) {
  count("matmul");
  return matmul_impl(a, trans_a, b, trans_b, out_dtype);
}

Tensor softmax_lastdim(const Tensor& x) {
  count("softmax");
  Tensor out(x.shape(), x.dtype());
  const std::int64_t d = x.rank() == 0 ? 1 : x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  const float* px = x.data().data();
  float* po = out.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * d;
    float* o = po + r * d;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < d; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const auto inv = static_cast<float>(1.0 / sum);
    for (std::int64_t j = 0; j < d; ++j) o[j] *= inv;
  }
  out.canonicalize();
  return out;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  count("softmax_grad");
  if (y.shape() != dy.shape()) {
    throw DimensionError("softmax_backward shapes differ: " + shape_str(y.shape()) + " vs " +
                         shape_str(dy.shape()));
  }
  Tensor dx(y.shape());
  const std::int64_t d = y.dim(-1);
  const std::int64_t rows = y.numel() / d;
  const float* py = y.data().data();
  const float* pdy = dy.data().data();
  float* pdx = dx.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    float dot = 0.0f;
    for (std::int64_t j = 0; j < d; ++j) dot += py[r * d + j] * pdy[r * d + j];
    for (std::int64_t j = 0; j < d; ++j) {
      pdx[r * d + j] = py[r * d + j] * (pdy[r * d + j] - dot);
    }
  }
  return dx;
}

namespace {
// Mean and 1/sqrt(var + eps) of one row, accumulated in double.
std::pair<double, double> row_moments(const float* in, std::int64_t d) {
  double mean = 0.0;
  for (std::int64_t j = 0; j < d; ++j) mean += in[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::int64_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
  var /= static_cast<double>(d);
  return {mean, 1.0 / std::sqrt(var + kLayerNormEps)};
}
}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  count("layer_norm");
  const std::int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm affine extents " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs input " + shape_str(x.shape()));
  }
  Tensor out(x.shape(), x.dtype());
  const std::int64_t rows = x.numel() / d;
  const float* px = x.data().data();
  const float* pg = gamma.data().data();
  const float* pb = beta.data().data();
  float* po = out.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * d;
    const auto [mean, rstd] = row_moments(in, d);
    for (std::int64_t j = 0; j < d; ++j) {
      po[r * d + j] = static_cast<float>((in[j] - mean) * rstd * pg[j] + pb[j]);
    }
  }
  out.canonicalize();
  return out;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy) {
  count("layer_norm_grad");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  LayerNormGrads g{Tensor(x.shape()), Tensor(gamma.shape()), Tensor(gamma.shape())};
  const float* px = x.data().data();
  const float* pg = gamma.data().data();
  const float* pdy = dy.data().data();
  float* pdx = g.dx.data().data();
  float* pdg = g.dgamma.data().data();
  float* pdb = g.dbeta.data().data();
  std::vector<double> xhat(static_cast<std::size_t>(d));
  std::vector<double> dxhat(static_cast<std::size_t>(d));
  std::vector<double> dgamma(static_cast<std::size_t>(d), 0.0);
  std::vector<double> dbeta(static_cast<std::size_t>(d), 0.0);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * d;
    const auto [mean, rstd] = row_moments(in, d);
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      xhat[uj] = (in[j] - mean) * rstd;
      const double gy = pdy[r * d + j];
      dxhat[uj] = gy * pg[j];
      sum_dxhat += dxhat[uj];
      sum_dxhat_xhat += dxhat[uj] * xhat[uj];
      dgamma[uj] += gy * xhat[uj];
      dbeta[uj] += gy;
    }
    for (std::int64_t j = 0; j < d; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      pdx[r * d + j] = static_cast<float>(
          rstd * (dxhat[uj] - sum_dxhat * inv_d - xhat[uj] * sum_dxhat_xhat * inv_d));
    }
  }
  for (std::int64_t j = 0; j < d; ++j) {
    pdg[j] = static_cast<float>(dgamma[static_cast<std::size_t>(j)]);
    pdb[j] = static_cast<float>(dbeta[static_cast<std::size_t>(j)]);
  }
  return g;
}

Tensor cast_bf16(const Tensor& x) {
  count("cast");
  Tensor out(x.shape(), DType::kBF16);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  out.canonicalize();
  return out;
}

Tensor widen(const Tensor& x) {
  count("cast");
  Tensor out(x.shape(), DType::kF32);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return out;
}

Tensor cast(const Tensor& x, DType dtype) {
  return dtype == DType::kBF16 ? cast_bf16(x) : widen(x);
}

Tensor elementwise(Elementwise kind, const Tensor& x, const Tensor* y, float scalar,
                   std::optional<DType> out_dtype) {
  count(kind_name(kind));
  const bool binary = kind == Elementwise::kAdd || kind == Elementwise::kMul;
  if (binary) {
    if (y == nullptr) throw DimensionError(std::string(kind_name(kind)) + " needs two operands");
    const Shape out_shape = broadcast_shapes(x.shape(), y->shape());
    if (out_shape.size() > static_cast<std::size_t>(kMaxRank)) {
      throw DimensionError("broadcast result rank exceeds 5");
    }
    Tensor out(out_shape, result_dtype(out_dtype, x.dtype(), y->dtype()));
    const float* px = x.data().data();
    const float* py = y->data().data();
    float* po = out.data().data();
    const Layout5 lx = layout_for(x.shape(), out_shape);
    const Layout5 ly = layout_for(y->shape(), out_shape);
    if (kind == Elementwise::kAdd) {
      for_each_broadcast(out_shape, lx, ly, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
        po[o] = px[i] + py[j];
      });
    } else {
      for_each_broadcast(out_shape, lx, ly, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
        po[o] = px[i] * py[j];
      });
    }
    out.canonicalize();
    return out;
  }
  Tensor out(x.shape(), out_dtype ? *out_dtype : x.dtype());
  const auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = apply_unary(kind, in[i], scalar);
  out.canonicalize();
  return out;
}

Tensor add(const Tensor& x, const Tensor& y, std::optional<DType> out_dtype) {
  return elementwise(Elementwise::kAdd, x, &y, 1.0f, out_dtype);
}
Tensor mul(const Tensor& x, const Tensor& y, std::optional<DType> out_dtype) {
  return elementwise(Elementwise::kMul, x, &y, 1.0f, out_dtype);
}
Tensor sigmoid(const Tensor& x) { return elementwise(Elementwise::kSigmoid, x); }
namespace {
struct KinkState {
  int depth = 0;
  std::uint64_t digest = 0xCBF29CE484222325ull;
};
thread_local KinkState kink_state;
}  // namespace

KinkWatch::KinkWatch() { ++kink_state.depth; }
KinkWatch::~KinkWatch() { --kink_state.depth; }
std::uint64_t KinkWatch::digest() const { return kink_state.digest; }
void KinkWatch::reset() { kink_state.digest = 0xCBF29CE484222325ull; }

void KinkWatch::observe(std::span<const float> pre) {
  if (kink_state.depth == 0) return;
  std::uint64_t h = kink_state.digest;
  for (float v : pre) h = (h ^ (v > 0.0f ? 1u : 0u)) * 0x100000001B3ull;
  kink_state.digest = h;
}

Tensor relu(const Tensor& x) {
  KinkWatch::observe(x.data());
  return elementwise(Elementwise::kRelu, x);
}
Tensor scale(const Tensor& x, float s, std::optional<DType> out_dtype) {
  return elementwise(Elementwise::kScale, x, nullptr, s, out_dtype);
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  count("relu_grad");
  Tensor dx(x.shape());
  const auto px = x.data();
  const auto pdy = dy.data();
  auto pdx = dx.data();
  for (std::size_t i = 0; i < px.size(); ++i) pdx[i] = px[i] > 0.0f ? pdy[i] : 0.0f;
  return dx;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  count("sigmoid_grad");
  Tensor dx(y.shape());
  const auto py = y.data();
  const auto pdy = dy.data();
  auto pdx = dx.data();
  for (std::size_t i = 0; i < py.size(); ++i) pdx[i] = pdy[i] * py[i] * (1.0f - py[i]);
  return dx;
}

Tensor permute(const Tensor& x, std::span<const int> perm) {
  count("permute");
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw DimensionError("permute order size mismatch for " + shape_str(x.shape()));
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r));
  std::int64_t s = 1;
  for (int d = r - 1; d >= 0; --d) {
    in_stride[static_cast<std::size_t>(d)] = s;
    s *= x.shape()[static_cast<std::size_t>(d)];
  }
  Shape src_stride(static_cast<std::size_t>(kMaxRank), 0);
  Shape ext(static_cast<std::size_t>(kMaxRank), 1);
  const int pad = kMaxRank - r;
  for (int d = 0; d < r; ++d) {
    const auto p = perm[static_cast<std::size_t>(d)];
    out_shape[static_cast<std::size_t>(d)] = x.shape()[static_cast<std::size_t>(p)];
    ext[static_cast<std::size_t>(d + pad)] = out_shape[static_cast<std::size_t>(d)];
    src_stride[static_cast<std::size_t>(d + pad)] = in_stride[static_cast<std::size_t>(p)];
  }
  Tensor out(out_shape, x.dtype());
  const float* px = x.data().data();
  float* po = out.data().data();
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < ext[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < ext[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < ext[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < ext[3]; ++i3) {
          const std::int64_t base = i0 * src_stride[0] + i1 * src_stride[1] +
                                    i2 * src_stride[2] + i3 * src_stride[3];
          for (std::int64_t i4 = 0; i4 < ext[4]; ++i4) po[o++] = px[base + i4 * src_stride[4]];
        }
  return out;
}

Tensor transpose(const Tensor& x, int d0, int d1) {
  std::vector<int> perm(static_cast<std::size_t>(x.rank()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(d0)], perm[static_cast<std::size_t>(d1)]);
  return permute(x, perm);
}

Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t length) {
  count("slice");
  const std::int64_t extent = x.dim(dim);
  if (dim < 0) dim += x.rank();
  if (start < 0 || length < 1 || start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range for dim " + std::to_string(dim) + " of " +
                         shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(dim)] = length;
  Tensor out(out_shape, x.dtype());
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= x.shape()[static_cast<std::size_t>(d)];
  for (int d = dim + 1; d < x.rank(); ++d) inner *= x.shape()[static_cast<std::size_t>(d)];
  const float* px = x.data().data();
  float* po = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(px + (o * extent + start) * inner, length * inner, po + o * length * inner);
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int dim) {
  count("concat");
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts.front();
  if (dim < 0) dim += first.rank();
  Shape out_shape = first.shape();
  std::int64_t total = 0;
  DType dtype = first.dtype();
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat rank mismatch");
    for (int d = 0; d < p.rank(); ++d) {
      if (d != dim && p.shape()[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat extent mismatch: " + shape_str(p.shape()) + " vs " +
                             shape_str(first.shape()));
      }
    }
    total += p.dim(dim);
    dtype = promote(dtype, p.dtype());
  }
  out_shape[static_cast<std::size_t>(dim)] = total;
  Tensor out(out_shape, dtype);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int d = dim + 1; d < first.rank(); ++d) inner *= out_shape[static_cast<std::size_t>(d)];
  float* po = out.data().data();
  std::int64_t offset = 0;
  for (const Tensor& p : parts) {
    const std::int64_t len = p.dim(dim);
    const float* pp = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pp + o * len * inner, len * inner, po + (o * total + offset) * inner);
    }
    offset += len;
  }
  out.canonicalize();
  return out;
}

Tensor reduce_to_shape(const Tensor& x, const Shape& shape) {
  count("reduce");
  if (x.shape() == shape) {
    Tensor out(shape);
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return out;
  }
  if (broadcast_shapes(shape, x.shape()) != x.shape()) {
    throw DimensionError("cannot reduce " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(shape);
  const Layout5 lo = layout_for(shape, x.shape());
  const Layout5 lx = layout_for(x.shape(), x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for_each_broadcast(x.shape(), lx, lo,
                     [&](std::int64_t, std::int64_t i, std::int64_t j) { po[j] += px[i]; });
  return out;
}

Tensor sum_all(const Tensor& x) {
  count("reduce");
  double s = 0.0;
  for (float v : x.data()) s += v;
  return Tensor::scalar(static_cast<float>(s));
}

void add_inplace(Tensor& dst, const Tensor& src) {
  count("add");
  if (broadcast_shapes(dst.shape(), src.shape()) != dst.shape()) {
    throw DimensionError("in-place add cannot grow " + shape_str(dst.shape()) + " to fit " +
                         shape_str(src.shape()));
  }
  const Layout5 ld = layout_for(dst.shape(), dst.shape());
  const Layout5 ls = layout_for(src.shape(), dst.shape());
  float* pd = dst.data().data();
  const float* ps = src.data().data();
  for_each_broadcast(dst.shape(), ld, ls,
                     [&](std::int64_t o, std::int64_t, std::int64_t j) { pd[o] += ps[j]; });
  dst.canonicalize();
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  float m = 0.0f;
  const auto pa = a.data();
  const auto pb = b.data();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const float d = std::fabs(pa[i] - pb[i]);
    if (std::isnan(d)) return d;
    m = std::max(m, d);
  }
  return m;
}

}  // namespace evo::ops
