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
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evo/config.h"
#include "evo/fusion.h"
#include "evo/parallel.h"

namespace evo {

inline constexpr std::int64_t kGiB = std::int64_t{1} << 30;

// n_seq · heads · n_res² · sizeof(dtype)
std::int64_t logits_memory(std::int64_t n_seq, std::int64_t heads, std::int64_t n_res, DType dtype);
// Exact decimal GiB, e.g. "11.25 GiB".
std::string format_gib(std::int64_t bytes);

enum class Inventory { kPaperFull, kMini };
Inventory parse_inventory(std::string_view name);
std::string_view to_string(Inventory inv);

struct CommRow {
  std::string module;
  std::vector<std::pair<Primitive, int>> counts;

  int total() const;
  int count(Primitive p) const;
  // "4 × AllToAll + 1 × AllGather + 1 × ReduceScatter"
  std::string describe() const;
};

struct CommTable {
  Inventory inventory = Inventory::kMini;
  Axis strategy = Axis::kDap;
  std::vector<CommRow> rows;

  int total() const;
  int count(Primitive p) const;
  const CommRow& row(std::string_view module) const;
};

// Per-block counts, forward and backward combined. Only BP and DAP have
// tables.
CommTable comm_count_table(Inventory inv, Axis strategy);

// One gated-attention call: `rows` independent attention problems of `keys`
// keys each (per batch element), as held locally on one rank.
struct AttentionSite {
  std::string module;
  std::string op;
  std::int64_t batch = 1;
  std::int64_t rows = 0;
  std::int64_t heads = 0;
  std::int64_t keys = 0;
  bool bias = false;
  bool planner_only = false;
};

std::vector<AttentionSite> attention_sites(const ModelConfig& cfg, int dap);
// Bytes charged to the "logits" scope while one call runs: the single
// in-place buffer when fused, otherwise qk, masked qk and (with a bias) the
// biased logits.
std::int64_t logits_scope_bytes(const AttentionSite& site, const ExecutionPlan& plan);

struct MemoryEstimate {
  std::int64_t block_input = 0;
  std::int64_t block_working_set = 0;
  std::int64_t retained = 0;
  std::int64_t logits_peak = 0;
  std::int64_t activation_peak = 0;
};

MemoryEstimate estimate_memory(const ModelConfig& cfg, const ExecutionPlan& plan);

// Parameter inventory of the executable model, in declaration order.
std::vector<InventoryEntry> model_inventory(const ModelConfig& cfg);

struct LayoutSummary {
  std::int64_t tensors = 0;
  std::int64_t elements = 0;
  std::int64_t region_bytes = 0;
  std::int64_t padding_bytes = 0;
  int regions = 0;
  LaunchCounter fused;
  LaunchCounter unfused;
};

LayoutSummary summarize_layout(const std::vector<InventoryEntry>& inventory, std::int64_t alignment);

struct ReferenceFigure {
  std::string label;
  std::string value;
};

struct CostReport {
  ModelConfig cfg;
  ExecutionPlan plan;
  std::vector<AttentionSite> sites;
  std::vector<std::int64_t> site_logits;
  MemoryEstimate memory;
  // Largest planner-only logits term, if the config has one.
  std::optional<std::pair<std::string, std::int64_t>> planner_logits;
  CommTable bp_full, dap_full, bp_mini, dap_mini;
  LayoutSummary layout;
  std::vector<ReferenceFigure> reference;

  nlohmann::json to_json() const;
  std::string table() const;
};

CostReport plan_report(const ModelConfig& cfg, const ExecutionPlan& plan);

struct LedgerCrossCheck {
  std::int64_t predicted_logits_peak = 0;
  std::int64_t measured_logits_peak = 0;
  bool matches() const { return predicted_logits_peak == measured_logits_peak; }
  nlohmann::json to_json() const;
};

// Runs one forward/backward step of the executable model under `plan` and
// compares every worker's logits-scope ledger peak with the prediction.
LedgerCrossCheck ledger_crosscheck(const ModelConfig& cfg, const ExecutionPlan& plan);

}  // namespace evo
