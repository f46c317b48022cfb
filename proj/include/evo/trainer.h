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
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evo/config.h"
#include "evo/fusion.h"
#include "evo/parallel.h"

namespace evo {

struct StepMetrics {
  std::int64_t step = 0;
  int recycles = 0;
  // Replica loss before the update, averaged over DP replicas.
  double loss = 0.0;
  // Every rank issues the same optimizer launches; these are rank 0's.
  LaunchCounter launches;
  // Group calls made during the step, by primitive name.
  std::map<std::string, std::int64_t, std::less<>> comm;
  std::int64_t comm_bytes = 0;
  // Maxima over workers.
  std::int64_t ops = 0;
  std::int64_t peak_bytes = 0;
  // Peak above what was live when the step began (parameters, optimizer
  // state, features).
  std::int64_t activation_peak = 0;
  std::int64_t logits_peak = 0;
  std::int64_t allocations = 0;
  // Wall time of rank 0's step. Never written to artifacts.
  double seconds = 0.0;

  std::int64_t comm_calls() const;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<StepMetrics> steps;
  // Rank 0's parameters and EMA shadow after the last step, in
  // ModelParams::vars() order.
  std::vector<std::string> names;
  std::vector<HostArray> params;
  std::vector<HostArray> shadow;
  CommTrace trace;
  // Per-rank ledger events as JSON lines, when recorded.
  std::vector<std::string> ledger_jsonl;
};

struct TrainOptions {
  bool record_ledger = false;
};

// The learning rate of `step` (0-based) under linear warmup.
double learning_rate(const ExecutionPlan& plan, std::int64_t step);
int recycles_for(const ExecutionPlan& plan, std::int64_t step);

// Runs plan.steps steps on the plan's process grid. Each DP replica trains
// on its own synthetic protein. NumericError on a non-finite loss names the
// step.
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});

struct BenchSummary {
  std::int64_t total = 0;
  std::int64_t discarded = 0;
  std::int64_t first = 0;
  std::int64_t last = 0;
  double loss = 0.0;
  double ops = 0.0;
  double comm_calls = 0.0;
  double comm_bytes = 0.0;
  double launches = 0.0;
  double peak_bytes = 0.0;
  double allocations = 0.0;
  double steps_per_second = 0.0;

  // Timing is left out unless asked for, so the file is reproducible.
  nlohmann::json to_json(bool with_timing = false) const;
};

inline constexpr std::int64_t kBenchDiscard = 5;

// Means over every step after the first `discard`.
BenchSummary summarize_bench(const std::vector<StepMetrics>& steps,
                             std::int64_t discard = kBenchDiscard);
// Trains `total` steps (must exceed the discard) and summarizes them.
BenchSummary bench(RunConfig cfg, std::int64_t total = 105);

std::string metrics_jsonl(const std::vector<StepMetrics>& steps);
// step,recycles,loss
std::string loss_csv(const std::vector<StepMetrics>& steps);
nlohmann::json snapshot_json(const TrainResult& result);

}  // namespace evo
