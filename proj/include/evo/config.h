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

#include <nlohmann/json.hpp>

#include "evo/evoformer.h"
#include "evo/parallel.h"

namespace evo {

struct ExecutionPlan {
  int dp = 1;
  int bp = 1;
  int dap = 1;
  bool fuse_ops = true;
  bool fuse_tensors = true;
  // Stacks run with block recompute; only "evoformer" is executable.
  std::vector<std::string> recompute;
  DType activation = DType::kF32;
  std::int64_t chunk = 0;
  std::uint64_t seed = 32;
  std::int64_t steps = 105;
  // 0 draws 1..4 recycles per step; otherwise a fixed count.
  int recycles = 0;
  double lr = 1e-3;
  std::int64_t warmup_steps = 0;
  double clip_norm = 0.1;
  double ema_decay = 0.999;
  std::int64_t alignment = 256;

  bool recompute_evoformer() const;
  ProcessGrid grid() const { return {dp, bp, dap}; }
  ExecContext exec() const;
  // Throws ConfigError with a "plan.*" path.
  void validate(const ModelConfig& cfg) const;
};

struct RunConfig {
  ModelConfig model;
  ExecutionPlan plan;
  std::string out_dir = "out";

  // Rejects unknown keys and wrong types; validates every invariant.
  static RunConfig from_json(const nlohmann::json& j);
  // IoError when unreadable, ConfigError when malformed.
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

nlohmann::json model_to_json(const ModelConfig& cfg);
nlohmann::json plan_to_json(const ExecutionPlan& plan);

}  // namespace evo
