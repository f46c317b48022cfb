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
#include <vector>

#include "evo/autodiff.h"
#include "evo/evoformer.h"
#include "evo/parallel.h"
#include "evo/tensor.h"

namespace evo {

struct InventoryEntry {
  std::string name;
  Shape shape;
  DType dtype = DType::kF32;
};

std::vector<InventoryEntry> inventory_of(const std::vector<Var>& params);

struct LayoutEntry {
  std::string name;
  Shape shape;
  DType dtype = DType::kF32;
  int region = 0;
  std::int64_t offset = 0;  // bytes from the region start
  std::int64_t bytes = 0;
  std::int64_t padded_bytes = 0;

  std::int64_t element_offset() const { return offset / static_cast<std::int64_t>(dtype_size(dtype)); }
  std::int64_t numel() const { return shape_numel(shape); }
};

struct Region {
  DType dtype = DType::kF32;
  std::int64_t bytes = 0;
  std::int64_t numel() const { return bytes / static_cast<std::int64_t>(dtype_size(dtype)); }
};

// Parameters packed in inventory order, one region per dtype (F32 first),
// each entry padded up to the alignment.
class FusedLayout {
 public:
  static FusedLayout build(const std::vector<InventoryEntry>& inventory,
                           std::int64_t alignment = 256);

  const std::vector<LayoutEntry>& entries() const { return entries_; }
  const std::vector<Region>& regions() const { return regions_; }
  std::int64_t alignment() const { return alignment_; }
  // Entry whose padded span contains `element` of `region`; -1 for none.
  int locate(int region, std::int64_t element) const;
  // name,shape,region,offset,padded_bytes
  std::string csv() const;

 private:
  std::vector<LayoutEntry> entries_;
  std::vector<Region> regions_;
  std::int64_t alignment_ = 256;
};

// Kernel launches per optimizer phase in one step.
struct LaunchCounter {
  std::int64_t grad_sync = 0;
  std::int64_t grad_clip = 0;
  std::int64_t opt_update = 0;
  std::int64_t ema = 0;

  std::int64_t total() const { return grad_sync + grad_clip + opt_update + ema; }
  void reset() { *this = LaunchCounter{}; }
  bool operator==(const LaunchCounter&) const = default;
};

// Hyperparameters are doubles; each derived coefficient is rounded to float
// once, so 1 - beta2 is not computed from an already-rounded beta2.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Parameters with their gradients, Adam moments and EMA shadow. Fused mode
// rebinds every parameter onto region storage and runs each phase as one
// launch per region; unfused mode keeps per-tensor storage and launches once
// per tensor. Both modes evaluate the same arithmetic in the same order.
class ParamStore {
 public:
  ParamStore(std::vector<Var> params, bool fused, std::int64_t alignment = 256);
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  bool fused() const { return fused_; }
  const FusedLayout& layout() const { return layout_; }
  std::size_t size() const { return params_.size(); }
  const Var& param(std::size_t i) const { return params_[i]; }
  Tensor& grad(std::size_t i) { return grads_[i]; }
  const Tensor& m(std::size_t i) const { return m_[i]; }
  const Tensor& v(std::size_t i) const { return v_[i]; }
  const Tensor& shadow(std::size_t i) const { return shadow_[i]; }
  // Fused region storage (fused mode only).
  Tensor& param_region(int r) { return regions_.at(static_cast<std::size_t>(r)).param; }
  Tensor& grad_region(int r) { return regions_.at(static_cast<std::size_t>(r)).grad; }

  // Copies gradients in (undefined entries become zero).
  void load_grads(const std::vector<Tensor>& grads);
  // BP: non-owned entries are zeroed and summed over the branch group; DAP:
  // summed; DP: averaged. Launches count the DP averaging, which is issued
  // even on a one-member group.
  void grad_sync(Comm& comm, const std::vector<Branch>& owners);
  // Scales gradients by min(1, max_norm / global norm); returns the factor.
  float clip(float max_norm);
  void adam(const AdamConfig& cfg, std::int64_t step);
  void ema(double decay);
  // The shadow starts as a copy of the parameters.
  void reset_shadow();

  LaunchCounter& launches() { return launches_; }

 private:
  struct RegionStore {
    Tensor param, grad, m, v, shadow;
  };
  template <typename F>
  void each_slot(F&& f);

  std::vector<Var> params_;
  bool fused_;
  FusedLayout layout_;
  std::vector<RegionStore> regions_;
  std::vector<Tensor> grads_, m_, v_, shadow_;
  LaunchCounter launches_;
};

}  // namespace evo
