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
#include "evo/trainer.h"

#include <chrono>
#include <cmath>
#include <sstream>

#include "evo/errors.h"
#include "evo/ledger.h"
#include "evo/op_counter.h"
#include "evo/prng.h"

namespace evo {

namespace {

struct RankStep {
  double loss = 0.0;
  LaunchCounter launches;
  std::int64_t ops = 0;
  std::int64_t peak_bytes = 0;
  std::int64_t activation_peak = 0;
  std::int64_t logits_peak = 0;
  std::int64_t allocations = 0;
  double seconds = 0.0;
};

// One protein per DP replica, on a stream apart from the parameter seed.
Features replica_features(const ModelConfig& model, std::uint64_t seed, int replica) {
  return Features::synthesize(model, prng64(seed ^ (0x5eedf00dULL + static_cast<std::uint64_t>(replica))));
}

nlohmann::json launches_json(const LaunchCounter& l) {
  return {{"grad_sync", l.grad_sync}, {"grad_clip", l.grad_clip}, {"opt_update", l.opt_update},
          {"ema", l.ema}, {"total", l.total()}};
}

nlohmann::json array_json(const std::string& name, const HostArray& a) {
  return {{"name", name}, {"shape", a.shape}, {"dtype", dtype_name(a.dtype)}, {"values", a.data}};
}

}  // namespace

std::int64_t StepMetrics::comm_calls() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : comm) n += v;
  return n;
}

nlohmann::json StepMetrics::to_json() const {
  nlohmann::json c = nlohmann::json::object();
  for (const auto& [k, v] : comm) c[k] = v;
  return {{"step", step},
          {"recycles", recycles},
          {"loss", loss},
          {"launches", launches_json(launches)},
          {"comm", c},
          {"comm_bytes", comm_bytes},
          {"ops", ops},
          {"peak_bytes", peak_bytes},
          {"activation_peak", activation_peak},
          {"logits_peak", logits_peak},
          {"allocations", allocations}};
}

double learning_rate(const ExecutionPlan& plan, std::int64_t step) {
  if (plan.warmup_steps <= 0 || step >= plan.warmup_steps) return plan.lr;
  return plan.lr * static_cast<double>(step + 1) / static_cast<double>(plan.warmup_steps);
}

int recycles_for(const ExecutionPlan& plan, std::int64_t step) {
  return plan.recycles > 0 ? plan.recycles : draw_num_recycles(plan.seed, step);
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  const ModelConfig& model = cfg.model;
  const ExecutionPlan& plan = cfg.plan;
  model.validate();
  plan.validate(model);
  const ProcessGrid grid = plan.grid();
  const auto world = static_cast<std::size_t>(grid.world());
  const auto steps = static_cast<std::size_t>(plan.steps);

  std::vector<Features> data;
  for (int d = 0; d < grid.dp; ++d) data.push_back(replica_features(model, plan.seed, d));

  std::vector<std::vector<RankStep>> per_rank(world, std::vector<RankStep>(steps));
  TrainResult result;
  result.ledger_jsonl.resize(options.record_ledger ? world : 0);

  result.trace = run_workers(grid, [&](Comm& comm) {
    const int r = comm.rank();
    const auto c = grid.coords(r);
    MemoryLedger& ledger = MemoryLedger::current();
    ledger.set_record_events(options.record_ledger);
    OpCounter& counter = OpCounter::current();
    ModelParams params = ModelParams::init(model, plan.seed);
    DapComm dap(comm);
    BpHooks bp(comm);
    ExecContext ctx = plan.exec();
    ctx.features = &data[static_cast<std::size_t>(c[0])];
    ctx.axial = grid.dap > 1 ? &dap : nullptr;
    ctx.branch = grid.bp > 1 ? &bp : nullptr;
    const std::vector<Var> vars = params.vars();
    const std::vector<Branch> owners = params.owners();
    ParamStore store(vars, plan.fuse_tensors, plan.alignment);
    store.reset_shadow();
    AdamConfig adam;

    for (std::size_t i = 0; i < steps; ++i) {
      const auto step = static_cast<std::int64_t>(i);
      const auto t0 = std::chrono::steady_clock::now();
      comm.set_step(step);
      ledger.set_step(step);
      counter.reset();
      store.launches().reset();
      ledger.reset_peak();
      const std::int64_t base = ledger.live_bytes();
      const std::int64_t allocs = ledger.allocations();

      RankStep& rec = per_rank[static_cast<std::size_t>(r)][i];
      {
        Tape tape;
        Var loss;
        {
          TapeGuard on(&tape);
          Reps out = model_forward(params, ctx, recycles_for(plan, step));
          loss = local_loss_share(out, grid, c[1]);
        }
        rec.loss = loss.value().item();
        if (!std::isfinite(rec.loss)) {
          throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        store.load_grads(tape.backward(loss, vars));
      }
      try {
        store.grad_sync(comm, owners);
        store.clip(static_cast<float>(plan.clip_norm));
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      adam.lr = learning_rate(plan, step);
      store.adam(adam, step + 1);
      store.ema(plan.ema_decay);

      rec.launches = store.launches();
      rec.ops = counter.total();
      rec.peak_bytes = ledger.peak_bytes();
      rec.activation_peak = ledger.peak_bytes() - base;
      rec.logits_peak = ledger.segment_peak("logits");
      rec.allocations = ledger.allocations() - allocs;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    if (options.record_ledger) {
      std::ostringstream os;
      ledger.write_jsonl(os);
      result.ledger_jsonl[static_cast<std::size_t>(r)] = os.str();
    }
    if (r == 0) {
      for (std::size_t k = 0; k < vars.size(); ++k) {
        result.names.push_back(vars[k].name());
        result.params.push_back(HostArray::of(vars[k].value()));
        result.shadow.push_back(HostArray::of(store.shadow(k)));
      }
    }
  }, plan.activation);

  result.steps.resize(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    StepMetrics& m = result.steps[i];
    m.step = static_cast<std::int64_t>(i);
    m.recycles = recycles_for(plan, m.step);
    std::vector<double> replica(static_cast<std::size_t>(grid.dp), 0.0);
    for (std::size_t r = 0; r < world; ++r) {
      const RankStep& rec = per_rank[r][i];
      replica[static_cast<std::size_t>(grid.coords(static_cast<int>(r))[0])] += rec.loss;
      m.ops = std::max(m.ops, rec.ops);
      m.peak_bytes = std::max(m.peak_bytes, rec.peak_bytes);
      m.activation_peak = std::max(m.activation_peak, rec.activation_peak);
      m.logits_peak = std::max(m.logits_peak, rec.logits_peak);
      m.allocations = std::max(m.allocations, rec.allocations);
    }
    for (double l : replica) m.loss += l;
    m.loss /= static_cast<double>(grid.dp);
    m.launches = per_rank[0][i].launches;
    m.seconds = per_rank[0][i].seconds;
  }
  for (const CommRecord& rec : result.trace.calls()) {
    StepMetrics& m = result.steps.at(static_cast<std::size_t>(rec.step));
    ++m.comm[std::string(to_string(rec.primitive))];
    m.comm_bytes += rec.bytes;
  }
  return result;
}

BenchSummary summarize_bench(const std::vector<StepMetrics>& steps, std::int64_t discard) {
  const auto total = static_cast<std::int64_t>(steps.size());
  if (discard < 0 || total <= discard) {
    throw ContractError("bench needs more than " + std::to_string(discard) + " steps, got " +
                        std::to_string(total));
  }
  BenchSummary s;
  s.total = total;
  s.discarded = discard;
  s.first = discard;
  s.last = total - 1;
  double seconds = 0.0;
  for (std::int64_t i = discard; i < total; ++i) {
    const StepMetrics& m = steps[static_cast<std::size_t>(i)];
    s.loss += m.loss;
    s.ops += static_cast<double>(m.ops);
    s.comm_calls += static_cast<double>(m.comm_calls());
    s.comm_bytes += static_cast<double>(m.comm_bytes);
    s.launches += static_cast<double>(m.launches.total());
    s.peak_bytes += static_cast<double>(m.peak_bytes);
    s.allocations += static_cast<double>(m.allocations);
    seconds += m.seconds;
  }
  const auto n = static_cast<double>(total - discard);
  for (double* v : {&s.loss, &s.ops, &s.comm_calls, &s.comm_bytes, &s.launches, &s.peak_bytes,
                    &s.allocations}) {
    *v /= n;
  }
  s.steps_per_second = seconds > 0.0 ? n / seconds : 0.0;
  return s;
}

nlohmann::json BenchSummary::to_json(bool with_timing) const {
  nlohmann::json j = {{"total_steps", total},
                      {"discarded", discarded},
                      {"window", {first, last}},
                      {"mean_loss", loss},
                      {"mean_ops", ops},
                      {"mean_comm_calls", comm_calls},
                      {"mean_comm_bytes", comm_bytes},
                      {"mean_launches", launches},
                      {"mean_peak_bytes", peak_bytes},
                      {"mean_allocations", allocations}};
  if (with_timing) j["steps_per_second"] = steps_per_second;
  return j;
}

BenchSummary bench(RunConfig cfg, std::int64_t total) {
  if (total <= kBenchDiscard) {
    throw ContractError("bench needs more than " + std::to_string(kBenchDiscard) + " steps");
  }
  cfg.plan.steps = total;
  return summarize_bench(train(cfg).steps);
}

std::string metrics_jsonl(const std::vector<StepMetrics>& steps) {
  std::ostringstream os;
  for (const StepMetrics& m : steps) os << m.to_json().dump() << '\n';
  return os.str();
}

std::string loss_csv(const std::vector<StepMetrics>& steps) {
  std::ostringstream os;
  os.precision(17);
  os << "step,recycles,loss\n";
  for (const StepMetrics& m : steps) os << m.step << ',' << m.recycles << ',' << m.loss << '\n';
  return os.str();
}

nlohmann::json snapshot_json(const TrainResult& result) {
  nlohmann::json params = nlohmann::json::array(), ema = nlohmann::json::array();
  for (std::size_t i = 0; i < result.params.size(); ++i) {
    params.push_back(array_json(result.names[i], result.params[i]));
    ema.push_back(array_json(result.names[i], result.shadow[i]));
  }
  return {{"params", params}, {"ema", ema}};
}

}  // namespace evo
