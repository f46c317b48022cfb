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

#include <gtest/gtest.h>

#include "evo/errors.h"
#include "evo/planner.h"

namespace evo {
namespace {

ModelConfig fine_tuning() {
  ModelConfig c;
  c.n_res = 384;
  c.n_seq = 512;
  c.n_extra_seq = 5120;
  c.n_templ = 4;
  c.c_m = 256;
  c.c_z = 128;
  c.c_e = 64;
  c.heads_msa = 8;
  c.heads_pair = 4;
  c.n_blocks = 48;
  c.n_extra_blocks = 4;
  c.n_template_blocks = 2;
  c.activation = DType::kBF16;
  return c;
}

TEST(LogitsMemoryTest, PaperFigures) {
  EXPECT_EQ(logits_memory(5120, 8, 384, DType::kBF16), 12079595520);
  EXPECT_EQ(logits_memory(5120, 8, 384, DType::kBF16), 45 * kGiB / 4);
  EXPECT_EQ(format_gib(logits_memory(5120, 8, 384, DType::kBF16)), "11.25 GiB");
  EXPECT_EQ(logits_memory(512, 8, 384, DType::kBF16), 9 * kGiB / 8);
  EXPECT_EQ(format_gib(logits_memory(512, 8, 384, DType::kBF16)), "1.125 GiB");
  EXPECT_EQ(logits_memory(1, 1, 1, DType::kBF16), 2);
  EXPECT_EQ(logits_memory(1, 1, 1, DType::kF32), 4);
  EXPECT_THROW(logits_memory(0, 1, 1, DType::kF32), ContractError);
}

TEST(PlanReportTest, FineTuningExtraMsaLogits) {
  ExecutionPlan plan;
  plan.activation = DType::kBF16;
  CostReport r = plan_report(fine_tuning(), plan);
  ASSERT_TRUE(r.planner_logits.has_value());
  EXPECT_EQ(r.planner_logits->first, "extra_msa_row_attention");
  EXPECT_EQ(format_gib(r.planner_logits->second), "11.25 GiB");
  plan.chunk = 512;
  CostReport c = plan_report(fine_tuning(), plan);
  EXPECT_EQ(format_gib(c.planner_logits->second), "1.125 GiB");
  EXPECT_NE(c.table().find("1.125 GiB"), std::string::npos);
  EXPECT_EQ(c.to_json()["planner_only_logits"]["logits"], "1.125 GiB");
}

TEST(PlanReportTest, ReferenceFiguresAreLabelled) {
  CostReport r = plan_report(ModelConfig{}, ExecutionPlan{});
  const auto j = r.to_json();
  std::vector<std::string> values;
  for (const auto& f : j["reference_figures"]) {
    EXPECT_EQ(f["status"], "reference, not reproduced");
    values.push_back(f["value"]);
  }
  EXPECT_EQ(values, (std::vector<std::string>{"38.3 GiB", "19.1 GiB", "12.7 GiB"}));
}

// ---- Table 5 ----

TEST(CommTableTest, PaperFullRows) {
  CommTable dap = comm_count_table(Inventory::kPaperFull, Axis::kDap);
  EXPECT_EQ(dap.total(), 24);
  EXPECT_EQ(dap.row("msa_stack").describe(), "4 × AllToAll + 1 × AllGather + 1 × ReduceScatter");
  EXPECT_EQ(dap.row("pair_stack").describe(), "8 × AllToAll + 4 × AllGather + 4 × ReduceScatter");
  EXPECT_EQ(dap.row("outer_product_mean").describe(), "1 × AllGather + 1 × ReduceScatter");
  CommTable bp = comm_count_table(Inventory::kPaperFull, Axis::kBp);
  EXPECT_EQ(bp.total(), 4);
  EXPECT_EQ(bp.row("msa_stack").describe(), "1 × Broadcast");
  EXPECT_EQ(bp.row("pair_stack").describe(), "1 × AllReduce + 1 × Broadcast");
  EXPECT_EQ(bp.row("outer_product_mean").describe(), "1 × Broadcast");
}

TEST(CommTableTest, MiniMatchesHarnessTrace) {
  CommTable mini = comm_count_table(Inventory::kMini, Axis::kDap);
  EXPECT_EQ(mini.count(Primitive::kAllToAll), 8);
  EXPECT_EQ(mini.count(Primitive::kAllGather), 4);
  EXPECT_EQ(mini.count(Primitive::kReduceScatter), 4);
  EXPECT_EQ(mini.total(), 16);

  ModelConfig cfg;
  cfg.n_blocks = 1;
  ParallelOptions o;
  o.grid = {1, 1, 2};
  ParallelResult res = run_parallel(ModelParams::init(cfg, 1), {Features::synthesize(cfg, 2)}, o);
  for (const CommRow& row : mini.rows) {
    for (Primitive p : {Primitive::kAllToAll, Primitive::kAllGather, Primitive::kReduceScatter}) {
      EXPECT_EQ(res.trace.count(p, {}, row.module), static_cast<std::size_t>(row.count(p)))
          << row.module << " " << to_string(p);
    }
  }
  o.grid = {1, 2, 1};
  ParallelResult bp = run_parallel(ModelParams::init(cfg, 1), {Features::synthesize(cfg, 2)}, o);
  CommTable bpt = comm_count_table(Inventory::kMini, Axis::kBp);
  for (const CommRow& row : bpt.rows) {
    for (Primitive p : {Primitive::kBroadcast, Primitive::kAllReduce}) {
      EXPECT_EQ(bp.trace.count(p, {}, row.module), static_cast<std::size_t>(row.count(p))) << row.module;
    }
  }
}

TEST(CommTableTest, Errors) {
  EXPECT_THROW(parse_inventory("full"), ConfigError);
  EXPECT_EQ(parse_inventory("paper-full"), Inventory::kPaperFull);
  EXPECT_THROW(comm_count_table(Inventory::kMini, Axis::kDp), ContractError);
}

// ---- memory ----

TEST(LedgerCrossCheckTest, LogitsScopeMatchesExactly) {
  ModelConfig cfg;
  int runs = 0;
  for (bool fused : {true, false})
    for (std::int64_t chunk : {0, 2, 4})
      for (int dap : {1, 2})
        for (DType dt : {DType::kF32, DType::kBF16}) {
          ExecutionPlan plan;
          plan.fuse_ops = fused;
          plan.chunk = chunk;
          plan.dap = dap;
          plan.activation = dt;
          if (runs % 3 == 0) plan.recompute = {"evoformer"};
          LedgerCrossCheck c = ledger_crosscheck(cfg, plan);
          EXPECT_TRUE(c.matches()) << "fused=" << fused << " chunk=" << chunk << " dap=" << dap
                                   << " predicted " << c.predicted_logits_peak << " measured "
                                   << c.measured_logits_peak;
          ++runs;
        }
  ExecutionPlan bp;
  bp.bp = 2;
  EXPECT_TRUE(ledger_crosscheck(cfg, bp).matches());
}

TEST(MemoryModelTest, Monotonicity) {
  ModelConfig cfg;
  auto peak = [&](auto edit) {
    ExecutionPlan p;
    edit(p);
    return estimate_memory(cfg, p);
  };
  std::int64_t prev = -1;
  for (std::int64_t c : {1, 2, 4, 8, 16}) {
    const std::int64_t v = peak([&](ExecutionPlan& p) { p.chunk = c; }).logits_peak;
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_LE(peak([](ExecutionPlan& p) { p.dap = 2; }).activation_peak, peak([](ExecutionPlan&) {}).activation_peak);
  EXPECT_LT(peak([](ExecutionPlan& p) { p.recompute = {"evoformer"}; }).activation_peak,
            peak([](ExecutionPlan&) {}).activation_peak);
  const MemoryEstimate f32 = peak([](ExecutionPlan&) {});
  const MemoryEstimate bf = peak([](ExecutionPlan& p) { p.activation = DType::kBF16; });
  EXPECT_EQ(bf.activation_peak * 2, f32.activation_peak);
  EXPECT_EQ(bf.logits_peak * 2, f32.logits_peak);
}

TEST(MemoryModelTest, RecomputeLowersTheMeasuredPeakToo) {
  ModelConfig cfg;
  cfg.n_blocks = 4;
  ModelParams params = ModelParams::init(cfg, 3);
  Features f = Features::synthesize(cfg, 4);
  ParallelOptions o;
  const std::int64_t off = run_parallel(params, {f}, o).workers[0].peak_bytes;
  o.exec.recompute = true;
  const std::int64_t on = run_parallel(params, {f}, o).workers[0].peak_bytes;
  EXPECT_LT(on, off);
}

TEST(LayoutSummaryTest, InventoryMatchesTheModel) {
  ModelConfig cfg;
  cfg.n_blocks = 3;
  const auto inv = model_inventory(cfg);
  const auto vars = ModelParams::init(cfg, 0).vars();
  ASSERT_EQ(inv.size(), vars.size());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    EXPECT_EQ(inv[i].name, vars[i].name());
    EXPECT_EQ(inv[i].shape, vars[i].value().shape());
  }
  LayoutSummary s = summarize_layout(inv, 256);
  EXPECT_EQ(s.fused, (LaunchCounter{1, 2, 1, 1}));
  const auto n = static_cast<std::int64_t>(vars.size());
  EXPECT_EQ(s.unfused, (LaunchCounter{n, 2 * n, n, n}));
  EXPECT_EQ(s.region_bytes % 256, 0);
}

TEST(PlanReportTest, RejectsInvalidPlans) {
  ModelConfig cfg;
  cfg.n_seq = 7;
  ExecutionPlan plan;
  plan.dap = 2;
  try {
    plan_report(cfg, plan);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "plan.dap");
  }
}

}  // namespace
}  // namespace evo
