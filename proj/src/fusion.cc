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

#include "evo/fusion.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "evo/errors.h"

namespace evo {

std::vector<InventoryEntry> inventory_of(const std::vector<Var>& params) {
  std::vector<InventoryEntry> inv;
  inv.reserve(params.size());
  for (const Var& v : params) inv.push_back({v.name(), v.value().shape(), v.value().dtype()});
  return inv;
}

FusedLayout FusedLayout::build(const std::vector<InventoryEntry>& inventory,
                               std::int64_t alignment) {
  if (alignment <= 0 || (alignment & (alignment - 1)) != 0) {
    throw LayoutError("alignment " + std::to_string(alignment) + " is not a power of two");
  }
  FusedLayout out;
  out.alignment_ = alignment;
  std::set<std::string> seen;
  int region_of[2] = {-1, -1};
  for (DType d : {DType::kF32, DType::kBF16}) {
    for (const InventoryEntry& e : inventory) {
      if (e.dtype != d) continue;
      region_of[static_cast<int>(d)] = static_cast<int>(out.regions_.size());
      out.regions_.push_back({d, 0});
      break;
    }
  }
  for (const InventoryEntry& e : inventory) {
    if (!seen.insert(e.name).second) throw LayoutError("duplicate parameter name '" + e.name + "'");
    const auto size = static_cast<std::int64_t>(dtype_size(e.dtype));
    if (alignment % size != 0) {
      throw LayoutError("alignment " + std::to_string(alignment) + " splits " + dtype_name(e.dtype) +
                        " elements");
    }
    const int r = region_of[static_cast<int>(e.dtype)];
    Region& region = out.regions_[static_cast<std::size_t>(r)];
    LayoutEntry le;
    le.name = e.name;
    le.shape = e.shape;
    le.dtype = e.dtype;
    le.region = r;
    le.offset = region.bytes;
    le.bytes = shape_numel(e.shape) * size;
    le.padded_bytes = (le.bytes + alignment - 1) / alignment * alignment;
    region.bytes += le.padded_bytes;
    out.entries_.push_back(std::move(le));
  }
  return out;
}

int FusedLayout::locate(int region, std::int64_t element) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const LayoutEntry& e = entries_[i];
    if (e.region != region) continue;
    const std::int64_t begin = e.element_offset();
    const std::int64_t end = begin + e.padded_bytes / static_cast<std::int64_t>(dtype_size(e.dtype));
    if (element >= begin && element < end) return static_cast<int>(i);
  }
  return -1;
}

std::string FusedLayout::csv() const {
  std::ostringstream os;
  os << "name,shape,region,offset,padded_bytes\n";
  for (const LayoutEntry& e : entries_) {
    std::string shape;
    for (std::size_t i = 0; i < e.shape.size(); ++i) {
      shape += (i ? "x" : "") + std::to_string(e.shape[i]);
    }
    os << e.name << ',' << (shape.empty() ? "scalar" : shape) << ',' << e.region << ','
       << e.offset << ',' << e.padded_bytes << '\n';
  }
  return os.str();
}

// ---- kernels shared by both modes ----

namespace {

double sum_squares(std::span<const float> g) {
  double acc = 0.0;
  for (float x : g) acc += double(x) * double(x);
  return acc;
}

void scale_kernel(std::span<float> g, float s) {
  for (float& x : g) x *= s;
}

struct AdamCoeffs {
  float b1, b2, one_b1, one_b2, c1, c2, lr, eps;
};

void adam_kernel(std::span<float> p, std::span<const float> g, std::span<float> m,
                 std::span<float> v, const AdamCoeffs& k) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = k.b1 * m[i] + k.one_b1 * g[i];
    v[i] = k.b2 * v[i] + k.one_b2 * g[i] * g[i];
    const float mhat = m[i] / k.c1;
    const float vhat = v[i] / k.c2;
    p[i] -= k.lr * mhat / (std::sqrt(vhat) + k.eps);
  }
}

void ema_kernel(std::span<float> s, std::span<const float> p, float decay, float keep) {
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + keep * p[i];
}

void copy_into(Tensor& dst, const Tensor& src) {
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

ParamStore::ParamStore(std::vector<Var> params, bool fused, std::int64_t alignment)
    : params_(std::move(params)), fused_(fused),
      layout_(FusedLayout::build(inventory_of(params_), alignment)) {
  const std::size_t n = params_.size();
  grads_.resize(n);
  m_.resize(n);
  v_.resize(n);
  shadow_.resize(n);
  if (fused_) {
    for (const Region& r : layout_.regions()) {
      const Shape s{r.numel()};
      regions_.push_back({Tensor(s, r.dtype), Tensor(s, r.dtype), Tensor(s), Tensor(s), Tensor(s, r.dtype)});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const LayoutEntry& e = layout_.entries()[i];
    if (!fused_) {
      grads_[i] = Tensor(e.shape, e.dtype);
      m_[i] = Tensor(e.shape);
      v_[i] = Tensor(e.shape);
      shadow_[i] = Tensor(e.shape, e.dtype);
      continue;
    }
    RegionStore& rs = regions_[static_cast<std::size_t>(e.region)];
    const std::int64_t at = e.element_offset();
    auto view = [&](const Tensor& region, DType d) { return Tensor::alias(region.buffer(), at, e.shape, d); };
    Tensor p = view(rs.param, e.dtype);
    copy_into(p, params_[i].value());
    params_[i].mutable_value() = std::move(p);
    grads_[i] = view(rs.grad, e.dtype);
    m_[i] = view(rs.m, DType::kF32);
    v_[i] = view(rs.v, DType::kF32);
    shadow_[i] = view(rs.shadow, e.dtype);
  }
}

template <typename F>
void ParamStore::each_slot(F&& f) {
  if (fused_) {
    for (RegionStore& r : regions_) f(r.param, r.grad, r.m, r.v, r.shadow);
    return;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    f(params_[i].mutable_value(), grads_[i], m_[i], v_[i], shadow_[i]);
  }
}

void ParamStore::load_grads(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw DimensionError("expected " + std::to_string(params_.size()) + " gradients, got " +
                         std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& dst = grads_[i];
    if (!grads[i].defined()) {
      std::fill(dst.data().begin(), dst.data().end(), 0.0f);
      continue;
    }
    if (grads[i].shape() != dst.shape()) {
      throw DimensionError("gradient for " + layout_.entries()[i].name + " has shape " +
                           shape_str(grads[i].shape()));
    }
    copy_into(dst, grads[i]);
    dst.canonicalize();
  }
}

void ParamStore::grad_sync(Comm& comm, const std::vector<Branch>& owners) {
  PhaseScope phase(Phase::kGradSync);
  auto reduce = [&](Axis a, bool average) {
    if (a != Axis::kDp && comm.size(a) == 1) return;
    auto one = [&](Tensor& g) {
      Tensor out = comm.all_reduce(a, g, "grad_sync", average);
      if (out.buffer() != g.buffer()) copy_into(g, out);
      if (a == Axis::kDp) ++launches_.grad_sync;
    };
    if (fused_) {
      for (RegionStore& r : regions_) one(r.grad);
    } else {
      for (Tensor& g : grads_) one(g);
    }
  };
  if (comm.size(Axis::kBp) > 1 && !owners.empty()) {
    const Branch mine = comm.index(Axis::kBp) == 0 ? Branch::kMsa : Branch::kPair;
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (owners[i] != mine) std::fill(grads_[i].data().begin(), grads_[i].data().end(), 0.0f);
    }
    reduce(Axis::kBp, false);
  }
  reduce(Axis::kDap, false);
  reduce(Axis::kDp, true);
}

float ParamStore::clip(float max_norm) {
  if (!(max_norm > 0.0f)) throw ContractError("clip max_norm must be positive");
  // Per-tensor partial sums added in inventory order, in one pass when fused.
  double total = 0.0;
  auto accumulate = [&](std::size_t i) {
    const double part = sum_squares(grads_[i].data());
    total += part;
    if (!std::isfinite(total)) {
      throw NumericError("non-finite gradient norm at parameter " + layout_.entries()[i].name);
    }
  };
  if (fused_) {
    ++launches_.grad_clip;
    for (std::size_t i = 0; i < grads_.size(); ++i) accumulate(i);
  } else {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      ++launches_.grad_clip;
      accumulate(i);
    }
  }
  const double norm = std::sqrt(total);
  const float s = norm > max_norm ? static_cast<float>(max_norm / norm) : 1.0f;
  each_slot([&](Tensor&, Tensor& g, Tensor&, Tensor&, Tensor&) {
    ++launches_.grad_clip;
    scale_kernel(g.data(), s);
    g.canonicalize();
  });
  return s;
}

void ParamStore::adam(const AdamConfig& cfg, std::int64_t step) {
  if (step < 1) throw ContractError("adam step must be >= 1, got " + std::to_string(step));
  const auto t = static_cast<double>(step);
  auto f = [](double x) { return static_cast<float>(x); };
  const AdamCoeffs k{f(cfg.beta1),
                     f(cfg.beta2),
                     f(1.0 - cfg.beta1),
                     f(1.0 - cfg.beta2),
                     f(1.0 - std::pow(cfg.beta1, t)),
                     f(1.0 - std::pow(cfg.beta2, t)),
                     f(cfg.lr),
                     f(cfg.eps)};
  each_slot([&](Tensor& p, Tensor& g, Tensor& m, Tensor& v, Tensor&) {
    ++launches_.opt_update;
    adam_kernel(p.data(), g.data(), m.data(), v.data(), k);
    p.canonicalize();
  });
}

void ParamStore::ema(double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw ContractError("ema decay must be in (0, 1)");
  const auto d = static_cast<float>(decay), keep = static_cast<float>(1.0 - decay);
  each_slot([&](Tensor& p, Tensor&, Tensor&, Tensor&, Tensor& s) {
    ++launches_.ema;
    ema_kernel(s.data(), p.data(), d, keep);
    s.canonicalize();
  });
}

void ParamStore::reset_shadow() {
  for (std::size_t i = 0; i < params_.size(); ++i) copy_into(shadow_[i], params_[i].value());
}

}  // namespace evo
