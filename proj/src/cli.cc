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
#include "evo/cli.h"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "evo/errors.h"
#include "evo/planner.h"
#include "evo/trainer.h"
#include "evo/verify.h"

namespace evo {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "run config (JSON)")->required();
  sub->add_option("--seed", c.seed, "overrides plan.seed");
  sub->add_option("--out", c.out, "overrides out_dir");
}

RunConfig load(const Common& c) {
  RunConfig cfg = RunConfig::load(c.config);
  if (c.seed) cfg.plan.seed = *c.seed;
  if (c.out) cfg.out_dir = *c.out;
  return cfg;
}

std::filesystem::path out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
  return dir;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  f.close();
  if (!f) throw IoError("cannot write " + path.string());
}

int verify(const RunConfig& cfg, bool corrupt, std::ostream& out) {
  const std::vector<SuiteResult> results = run_verify(cfg, corrupt ? 0.0 : 1.0);
  for (const SuiteResult& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
  }
  const nlohmann::json summary = verify_summary(results);
  out << summary.dump() << '\n';
  return summary["passed"].get<bool>() ? kExitOk : kExitVerifyFailed;
}

// Executing a sparse-attention-scale or extra-MSA config is out of reach on
// a desk, so the ledger cross-check only runs for configs without
// planner-only stacks.
bool executable(const ModelConfig& m) {
  return m.n_extra_seq == 0 && m.n_templ == 0 && m.n_extra_blocks == 0 &&
         m.n_template_blocks == 0 && m.n_res <= 64 && m.n_seq <= 64;
}

int plan(const RunConfig& cfg, std::ostream& out) {
  const auto dir = out_dir(cfg);
  const CostReport report = plan_report(cfg.model, cfg.plan);
  const std::string table = report.table();
  const std::string json = report.to_json().dump(2) + "\n";
  nlohmann::json cross;
  if (executable(cfg.model)) {
    const LedgerCrossCheck c = ledger_crosscheck(cfg.model, cfg.plan);
    cross = c.to_json();
  } else {
    cross = {{"scope", "logits"}, {"skipped", "config has planner-only extents"}};
  }
  write_file(dir / "plan.json", json);
  write_file(dir / "plan.txt", table);
  write_file(dir / "ledger_crosscheck.json", cross.dump(2) + "\n");
  out << table << json;
  return kExitOk;
}

int bench(const RunConfig& cfg, std::int64_t steps, std::ostream& out) {
  const auto dir = out_dir(cfg);
  struct Variant {
    const char* name;
    bool fused;
    int bp;
  };
  const Variant variants[] = {{"serial", false, 1}, {"fused", true, 1}, {"fused_bp2", true, 2}};
  nlohmann::json j = nlohmann::json::object();
  for (const Variant& v : variants) {
    RunConfig c = cfg;
    c.plan.dp = 1;
    c.plan.dap = 1;
    c.plan.bp = v.bp;
    c.plan.fuse_ops = v.fused;
    c.plan.fuse_tensors = v.fused;
    c.plan.validate(c.model);
    const BenchSummary s = bench(c, steps);
    j[v.name] = s.to_json();
    out << v.name << ": " << s.ops << " ops/worker/step, " << s.launches << " launches/step, "
        << s.steps_per_second << " steps/s\n";
  }
  write_file(dir / "bench.json", j.dump(2) + "\n");
  return kExitOk;
}

int trace(const RunConfig& cfg, std::int64_t steps, std::ostream& out) {
  const auto dir = out_dir(cfg);
  RunConfig c = cfg;
  c.plan.steps = steps;
  TrainResult t = train(c, {.record_ledger = true});
  write_file(dir / "comm_trace.csv", t.trace.csv());
  for (std::size_t r = 0; r < t.ledger_jsonl.size(); ++r) {
    write_file(dir / ("ledger_rank" + std::to_string(r) + ".jsonl"), t.ledger_jsonl[r]);
  }
  out << t.trace.records().size() << " comm records, " << t.trace.calls().size()
      << " group calls, " << t.ledger_jsonl.size() << " ledger files\n";
  return kExitOk;
}

int train_cmd(const RunConfig& cfg, std::optional<std::int64_t> steps, std::ostream& out) {
  const auto dir = out_dir(cfg);
  RunConfig c = cfg;
  if (steps) c.plan.steps = *steps;
  TrainResult t = train(c);
  write_file(dir / "loss.csv", loss_csv(t.steps));
  write_file(dir / "metrics.jsonl", metrics_jsonl(t.steps));
  nlohmann::json summary = summarize_bench(t.steps, 0).to_json();
  summary["final_loss"] = t.steps.back().loss;
  summary["config"] = c.to_json();
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  write_file(dir / "params.json", snapshot_json(t).dump() + "\n");
  out << t.steps.size() << " steps, final loss " << t.steps.back().loss << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evoformer training engine"};
  app.require_subcommand(1);
  Common common;
  bool corrupt = false;
  std::int64_t bench_steps = 105, trace_steps = 1;
  std::optional<std::int64_t> train_steps;

  CLI::App* verify_cmd = app.add_subcommand("verify", "run every equivalence and count suite");
  add_common(verify_cmd, common);
  // Self-test hook: zero tolerances must make the run fail.
  verify_cmd->add_flag("--corrupt-tolerance", corrupt)->group("");
  CLI::App* plan_cmd = app.add_subcommand("plan", "analytic memory and communication report");
  add_common(plan_cmd, common);
  CLI::App* bench_cmd = app.add_subcommand("bench", "benchmark protocol over three plans");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--steps", bench_steps, "steps per plan")->capture_default_str();
  CLI::App* trace_cmd = app.add_subcommand("trace", "communication trace and ledger events");
  add_common(trace_cmd, common);
  trace_cmd->add_option("--steps", trace_steps, "training steps")->capture_default_str();
  CLI::App* train_sub = app.add_subcommand("train", "train and write the loss curve");
  add_common(train_sub, common);
  train_sub->add_option("--steps", train_steps, "overrides plan.steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    const RunConfig cfg = load(common);
    if (verify_cmd->parsed()) return verify(cfg, corrupt, out);
    if (plan_cmd->parsed()) return plan(cfg, out);
    if (bench_cmd->parsed()) return bench(cfg, bench_steps, out);
    if (trace_cmd->parsed()) return trace(cfg, trace_steps, out);
    return train_cmd(cfg, train_steps, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitVerifyFailed;
  }
}

}  // namespace evo
