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

#include "evo/planner.h"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "evo/errors.h"

namespace evo {

using nlohmann::json;

std::int64_t logits_memory(std::int64_t n_seq, std::int64_t heads, std::int64_t n_res, DType dtype) {
  if (n_seq < 1 || heads < 1 || n_res < 1) throw ContractError("logits_memory extents must be positive");
  return n_seq * heads * n_res * n_res * static_cast<std::int64_t>(dtype_size(dtype));
}

std::string format_gib(std::int64_t bytes) {
  // GiB values with a finite binary expansion print exactly.
  std::ostringstream os;
  os << std::fixed << std::setprecision(12) << static_cast<double>(bytes) / static_cast<double>(kGiB);
  std::string s = os.str();
  s.erase(s.find_last_not_of('0') + 1);
  if (s.back() == '.') s.pop_back();
  return s + " GiB";
}

Inventory parse_inventory(std::string_view name) {
  if (name == "paper-full") return Inventory::kPaperFull;
  if (name == "mini") return Inventory::kMini;
  throw ConfigError("inventory", "unknown inventory '" + std::string(name) + "'");
}

std::string_view to_string(Inventory inv) { return inv == Inventory::kPaperFull ? "paper-full" : "mini"; }

// ---- comm tables ----

int CommRow::total() const {
  int n = 0;
  for (const auto& [p, c] : counts) n += c;
  return n;
}

int CommRow::count(Primitive p) const {
  for (const auto& [q, c] : counts) {
    if (q == p) return c;
  }
  return 0;
}

std::string CommRow::describe() const {
  std::string s;
  for (const auto& [p, c] : counts) {
    if (c == 0) continue;
    if (!s.empty()) s += " + ";
    s += std::to_string(c) + " × " + std::string(to_string(p));
  }
  return s.empty() ? "-" : s;
}

int CommTable::total() const {
  int n = 0;
  for (const CommRow& r : rows) n += r.total();
  return n;
}

int CommTable::count(Primitive p) const {
  int n = 0;
  for (const CommRow& r : rows) n += r.count(p);
  return n;
}

const CommRow& CommTable::row(std::string_view module) const {
  for (const CommRow& r : rows) {
    if (r.module == module) return r;
  }
  throw ContractError("no comm row for module '" + std::string(module) + "'");
}

namespace {

using P = Primitive;

// Harness rules per sub-op under DAP (forward + backward).
struct OpRule {
  const char* module;
  const char* op;
  int all_to_all, all_gather, reduce_scatter;
};

constexpr OpRule kMiniDapRules[] = {
    {"msa_stack", "msa_row_attention", 0, 1, 1},        // bias source gather / its gradient
    {"msa_stack", "msa_column_attention", 4, 0, 0},     // to residue split and back, both passes
    {"msa_stack", "msa_transition", 0, 0, 0},
    {"pair_stack", "triangle_attention_start", 0, 1, 1},
    {"pair_stack", "triangle_attention_end", 4, 1, 1},
    {"pair_stack", "pair_transition", 0, 0, 0},
    {"outer_product_mean", "outer_product_mean", 0, 1, 1},  // partial-sum scatter / gather back
};

CommTable mini_dap() {
  CommTable t{Inventory::kMini, Axis::kDap, {}};
  for (const char* module : {"msa_stack", "pair_stack", "outer_product_mean"}) {
    int a2a = 0, ag = 0, rs = 0;
    for (const OpRule& r : kMiniDapRules) {
      if (std::string_view(r.module) != module) continue;
      a2a += r.all_to_all;
      ag += r.all_gather;
      rs += r.reduce_scatter;
    }
    t.rows.push_back({module, {{P::kAllToAll, a2a}, {P::kAllGather, ag}, {P::kReduceScatter, rs}}});
  }
  return t;
}

CommTable bp_table(Inventory inv) {
  return {inv,
          Axis::kBp,
          {{"msa_stack", {{P::kBroadcast, 1}}},
           {"pair_stack", {{P::kAllReduce, 1}, {P::kBroadcast, 1}}},
           {"outer_product_mean", {{P::kBroadcast, 1}}}}};
}

}  // namespace

CommTable comm_count_table(Inventory inv, Axis strategy) {
  if (strategy == Axis::kBp) return bp_table(inv);
  if (strategy != Axis::kDap) throw ContractError("comm tables exist for bp and dap only");
  if (inv == Inventory::kMini) return mini_dap();
  return {Inventory::kPaperFull,
          Axis::kDap,
          {{"msa_stack", {{P::kAllToAll, 4}, {P::kAllGather, 1}, {P::kReduceScatter, 1}}},
           {"pair_stack", {{P::kAllToAll, 8}, {P::kAllGather, 4}, {P::kReduceScatter, 4}}},
           {"outer_product_mean", {{P::kAllGather, 1}, {P::kReduceScatter, 1}}}}};
}

// ---- memory ----

std::vector<AttentionSite> attention_sites(const ModelConfig& cfg, int dap) {
  const std::int64_t D = dap, B = cfg.batch, S = cfg.n_seq, R = cfg.n_res;
  std::vector<AttentionSite> sites{
      {"msa_stack", "msa_row_attention", B, S / D, cfg.heads_msa, R, true, false},
      {"msa_stack", "msa_column_attention", B, R / D, cfg.heads_msa, S, false, false},
      {"pair_stack", "triangle_attention_start", B, R / D, cfg.heads_pair, R, true, false},
      {"pair_stack", "triangle_attention_end", B, R / D, cfg.heads_pair, R, true, false},
  };
  if (cfg.n_extra_seq > 0) {
    sites.push_back({"extra_msa_stack", "extra_msa_row_attention", B, cfg.n_extra_seq / D,
                     cfg.heads_msa, R, true, true});
  }
  if (cfg.n_templ > 0) {
    sites.push_back({"template_pair_stack", "template_triangle_attention", B, cfg.n_templ * R / D,
                     cfg.heads_pair, R, true, true});
  }
  return sites;
}

std::int64_t logits_scope_bytes(const AttentionSite& site, const ExecutionPlan& plan) {
  const std::int64_t rows = plan.chunk > 0 ? std::min(plan.chunk, site.rows) : site.rows;
  const std::int64_t one = site.batch * logits_memory(rows, site.heads, site.keys, plan.activation);
  if (plan.fuse_ops) return one;
  return one * (site.bias ? 3 : 2);
}

MemoryEstimate estimate_memory(const ModelConfig& cfg, const ExecutionPlan& plan) {
  const std::int64_t D = plan.dap, B = cfg.batch, S = cfg.n_seq, R = cfg.n_res;
  const std::int64_t Cm = cfg.c_m, Cz = cfg.c_z, P = cfg.c_opm, F = cfg.transition_factor;
  const auto e = static_cast<std::int64_t>(dtype_size(plan.activation));
  const std::int64_t tok_m = B * (S / D) * R, tok_z = B * (R / D) * R;
  auto weights = [&](const AttentionSite& s) { return s.batch * s.rows * s.heads * s.keys * s.keys; };
  // Saved for backward per attention call: normalized input, q/k/v, softmax
  // weights, context and gate (fused); the unfused chain also keeps the
  // separate projections and every logits stage.
  auto attention = [&](const AttentionSite& s, std::int64_t tokens, std::int64_t C) {
    if (plan.fuse_ops) return tokens * 6 * C + weights(s);
    return tokens * 10 * C + (s.bias ? 4 : 3) * weights(s);
  };
  const auto sites = attention_sites(cfg, plan.dap);
  std::int64_t ws = 0;
  ws += attention(sites[0], tok_m, Cm) + tok_z * Cz + B * cfg.heads_msa * R * R;  // pair-bias source
  ws += attention(sites[1], tok_m, Cm);
  ws += tok_m * (Cm + 2 * F * Cm);                                               // msa transition
  ws += tok_m * (Cm + 2 * P) + B * R * R * (P * P + 1) * 2 + tok_z * Cz;         // outer product mean
  for (int i : {2, 3}) ws += attention(sites[static_cast<std::size_t>(i)], tok_z, Cz) + B * cfg.heads_pair * R * R;
  ws += tok_z * (Cz + 2 * F * Cz);                                               // pair transition
  MemoryEstimate m;
  m.block_input = tok_m * Cm + tok_z * Cz;
  m.block_working_set = ws * e;
  m.block_input *= e;
  const std::int64_t n = cfg.n_blocks;
  m.retained = plan.recompute_evoformer() ? n * m.block_input + m.block_working_set
                                          : n * m.block_working_set + m.block_input;
  for (const AttentionSite& s : sites) {
    if (!s.planner_only) m.logits_peak = std::max(m.logits_peak, logits_scope_bytes(s, plan));
  }
  m.activation_peak = m.retained + m.logits_peak;
  return m;
}

std::vector<InventoryEntry> model_inventory(const ModelConfig& cfg) {
  ModelConfig one = cfg;
  one.n_blocks = 1;
  const std::vector<InventoryEntry> base = inventory_of(ModelParams::init(one, 0).vars());
  std::vector<InventoryEntry> out;
  const std::string tag = "block0.";
  for (const InventoryEntry& e : base) {
    if (e.name.rfind(tag, 0) != 0) out.push_back(e);
  }
  for (std::int64_t b = 0; b < cfg.n_blocks; ++b) {
    for (const InventoryEntry& e : base) {
      if (e.name.rfind(tag, 0) != 0) continue;
      InventoryEntry c = e;
      c.name = "block" + std::to_string(b) + "." + e.name.substr(tag.size());
      out.push_back(std::move(c));
    }
  }
  return out;
}

LayoutSummary summarize_layout(const std::vector<InventoryEntry>& inventory, std::int64_t alignment) {
  const FusedLayout l = FusedLayout::build(inventory, alignment);
  LayoutSummary s;
  s.tensors = static_cast<std::int64_t>(l.entries().size());
  for (const LayoutEntry& e : l.entries()) {
    s.elements += e.numel();
    s.padding_bytes += e.padded_bytes - e.bytes;
  }
  for (const Region& r : l.regions()) s.region_bytes += r.bytes;
  s.regions = static_cast<int>(l.regions().size());
  const std::int64_t k = s.regions;
  s.fused = {k, 2 * k, k, k};
  s.unfused = {s.tensors, 2 * s.tensors, s.tensors, s.tensors};
  return s;
}

CostReport plan_report(const ModelConfig& cfg, const ExecutionPlan& plan) {
  cfg.validate();
  plan.validate(cfg);
  CostReport r;
  r.cfg = cfg;
  r.plan = plan;
  r.sites = attention_sites(cfg, plan.dap);
  for (const AttentionSite& s : r.sites) {
    const std::int64_t b = logits_scope_bytes(s, plan);
    r.site_logits.push_back(b);
    if (s.planner_only && (!r.planner_logits || b > r.planner_logits->second)) r.planner_logits = {{s.op, b}};
  }
  r.memory = estimate_memory(cfg, plan);
  r.bp_full = comm_count_table(Inventory::kPaperFull, Axis::kBp);
  r.dap_full = comm_count_table(Inventory::kPaperFull, Axis::kDap);
  r.bp_mini = comm_count_table(Inventory::kMini, Axis::kBp);
  r.dap_mini = comm_count_table(Inventory::kMini, Axis::kDap);
  r.layout = summarize_layout(model_inventory(cfg), plan.alignment);
  r.reference = {
      {"initial training, F32, recompute on Evoformer + ExtraMSAStack", "38.3 GiB"},
      {"initial training, F32, recompute on Evoformer + ExtraMSAStack + TemplatePairStack", "19.1 GiB"},
      {"initial training, BF16 activations with full recompute", "12.7 GiB"},
  };
  return r;
}

namespace {

json table_json(const CommTable& t) {
  json rows = json::array();
  for (const CommRow& row : t.rows) {
    json counts = json::object();
    for (const auto& [p, c] : row.counts) counts[std::string(to_string(p))] = c;
    rows.push_back({{"module", row.module}, {"counts", counts}, {"total", row.total()}});
  }
  return {{"inventory", to_string(t.inventory)}, {"strategy", to_string(t.strategy)}, {"rows", rows},
          {"total", t.total()}};
}

json launches_json(const LaunchCounter& c) {
  return {{"grad_sync", c.grad_sync}, {"grad_clip", c.grad_clip}, {"opt_update", c.opt_update}, {"ema", c.ema}};
}

}  // namespace

json CostReport::to_json() const {
  json sites_j = json::array();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const AttentionSite& s = sites[i];
    sites_j.push_back({{"module", s.module},
                       {"op", s.op},
                       {"rows", s.rows},
                       {"heads", s.heads},
                       {"keys", s.keys},
                       {"logits_bytes", site_logits[i]},
                       {"logits", format_gib(site_logits[i])},
                       {"planner_only", s.planner_only}});
  }
  json ref = json::array();
  for (const ReferenceFigure& f : reference) {
    ref.push_back({{"label", f.label}, {"value", f.value}, {"status", "reference, not reproduced"}});
  }
  json j{{"model", model_to_json(cfg)},
         {"plan", plan_to_json(plan)},
         {"attention", sites_j},
         {"memory",
          {{"block_input_bytes", memory.block_input},
           {"block_working_set_bytes", memory.block_working_set},
           {"retained_bytes", memory.retained},
           {"logits_peak_bytes", memory.logits_peak},
           {"activation_peak_bytes", memory.activation_peak}}},
         {"comm",
          {{"paper_full", {{"bp", table_json(bp_full)}, {"dap", table_json(dap_full)}}},
           {"mini", {{"bp", table_json(bp_mini)}, {"dap", table_json(dap_mini)}}}}},
         {"fused_layout",
          {{"tensors", layout.tensors},
           {"elements", layout.elements},
           {"regions", layout.regions},
           {"region_bytes", layout.region_bytes},
           {"padding_bytes", layout.padding_bytes},
           {"alignment", plan.alignment},
           {"launches_fused", launches_json(layout.fused)},
           {"launches_unfused", launches_json(layout.unfused)}}},
         {"reference_figures", ref}};
  if (planner_logits) {
    j["planner_only_logits"] = {{"op", planner_logits->first},
                                {"bytes", planner_logits->second},
                                {"logits", format_gib(planner_logits->second)}};
  }
  return j;
}

std::string CostReport::table() const {
  std::ostringstream os;
  os << "attention logits (per call, " << (plan.fuse_ops ? "fused" : "unfused")
     << (plan.chunk > 0 ? ", chunk " + std::to_string(plan.chunk) : std::string()) << ")\n";
  for (std::size_t i = 0; i < sites.size(); ++i) {
    os << "  " << std::left << std::setw(30) << sites[i].op << std::right << std::setw(16)
       << site_logits[i] << " B  " << format_gib(site_logits[i]) << (sites[i].planner_only ? "  (planner only)" : "")
       << '\n';
  }
  os << "memory\n"
     << "  block input        " << memory.block_input << " B\n"
     << "  block working set  " << memory.block_working_set << " B\n"
     << "  retained           " << memory.retained << " B" << (plan.recompute_evoformer() ? " (recompute)" : "") << '\n'
     << "  logits peak        " << memory.logits_peak << " B\n";
  auto comm = [&](const CommTable& t) {
    os << "comm per block, " << to_string(t.inventory) << ", " << to_string(t.strategy) << '\n';
    for (const CommRow& row : t.rows) {
      os << "  " << std::left << std::setw(20) << row.module << row.describe() << '\n';
    }
    os << "  total " << t.total() << '\n';
  };
  comm(dap_full);
  comm(bp_full);
  comm(dap_mini);
  comm(bp_mini);
  os << "fused layout: " << layout.tensors << " tensors, " << layout.region_bytes << " B in "
     << layout.regions << " region(s), " << layout.padding_bytes << " B padding\n"
     << "  launches fused (" << layout.fused.grad_sync << ", " << layout.fused.grad_clip << ", "
     << layout.fused.opt_update << ", " << layout.fused.ema << ") unfused (" << layout.unfused.grad_sync
     << ", " << layout.unfused.grad_clip << ", " << layout.unfused.opt_update << ", "
     << layout.unfused.ema << ")\n";
  os << "reference figures (reference, not reproduced)\n";
  for (const ReferenceFigure& f : reference) os << "  " << f.value << "  " << f.label << '\n';
  return os.str();
}

json LedgerCrossCheck::to_json() const {
  return {{"scope", "logits"},
          {"predicted_bytes", predicted_logits_peak},
          {"measured_bytes", measured_logits_peak},
          {"match", matches()}};
}

LedgerCrossCheck ledger_crosscheck(const ModelConfig& cfg, const ExecutionPlan& plan) {
  plan.validate(cfg);
  LedgerCrossCheck c;
  c.predicted_logits_peak = estimate_memory(cfg, plan).logits_peak;
  ModelParams params = ModelParams::init(cfg, plan.seed);
  std::vector<Features> batch;
  for (int d = 0; d < plan.dp; ++d) batch.push_back(Features::synthesize(cfg, plan.seed + 1 + static_cast<std::uint64_t>(d)));
  ParallelOptions o;
  o.grid = plan.grid();
  o.exec = plan.exec();
  ParallelResult res = run_parallel(params, batch, o);
  for (const WorkerReport& w : res.workers) c.measured_logits_peak = std::max(c.measured_logits_peak, w.logits_peak);
  return c;
}

}  // namespace evo
