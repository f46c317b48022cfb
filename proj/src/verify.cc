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
#include "evo/verify.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <functional>
#include <sstream>

#include "evo/attention.h"
#include "evo/errors.h"
#include "evo/functional.h"
#include "evo/parallel.h"
#include "evo/planner.h"
#include "evo/prng.h"
#include "evo/trainer.h"

namespace evo {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double max_abs(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

double max_abs(const HostArray& a, const HostArray& b) { return max_abs(a.data, b.data); }

double peak(std::span<const float> a) {
  double m = 0.0;
  for (float v : a) m = std::max(m, std::abs(double(v)));
  return m;
}

bool same_bits(const std::vector<HostArray>& a, const std::vector<HostArray>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].data.size() != b[i].data.size()) return false;
    if (std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

Tensor uniform(Shape shape, SplitMix64& rng, float a) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

// Some keys masked, key 0 always valid.
Tensor key_mask(Shape shape, SplitMix64& rng) {
  Tensor t(std::move(shape));
  const std::int64_t R = t.dim(-1);
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = (static_cast<std::int64_t>(i) % R == 0 || rng.uniform(0.0f, 1.0f) > 0.2f) ? 1.0f : 0.0f;
  }
  return t;
}

struct Setup {
  ModelConfig model;
  ModelParams params;
  std::vector<Features> proteins;
  ParallelOptions base;
};

Setup make_setup(const RunConfig& cfg) {
  Setup s;
  s.model = cfg.model;
  s.model.activation = DType::kF32;
  s.params = ModelParams::init(s.model, cfg.plan.seed);
  for (int d = 0; d < 2; ++d) s.proteins.push_back(Features::synthesize(s.model, cfg.plan.seed + 1 + d));
  s.base.exec = cfg.plan.exec();
  s.base.exec.activation = DType::kF32;
  s.base.exec.recompute = false;
  s.base.n_recycles = 1;
  return s;
}

ParallelResult serial(const Setup& s, int protein, ParallelOptions o) {
  o.grid = {};
  return run_parallel(s.params, {s.proteins[static_cast<std::size_t>(protein)]}, o);
}

// Worst deviation of a strategy from the serial oracle over outputs and the
// synchronized gradients of every worker. DP replicas compare against the
// mean of their serial gradients.
double deviation(const Setup& s, const ProcessGrid& grid) {
  ParallelOptions o = s.base;
  o.grid = grid;
  std::vector<Features> batch(s.proteins.begin(), s.proteins.begin() + grid.dp);
  ParallelResult got = run_parallel(s.params, batch, o);
  std::vector<ParallelResult> want;
  for (int d = 0; d < grid.dp; ++d) want.push_back(serial(s, d, s.base));
  double worst = 0.0;
  for (int d = 0; d < grid.dp; ++d) {
    const auto ud = static_cast<std::size_t>(d);
    worst = std::max(worst, max_abs(got.replicas[ud].msa, want[ud].replicas[0].msa));
    worst = std::max(worst, max_abs(got.replicas[ud].pair, want[ud].replicas[0].pair));
  }
  const std::size_t n = want[0].workers[0].grads.size();
  for (const WorkerReport& w : got.workers) {
    for (std::size_t i = 0; i < n; ++i) {
      const HostArray& g = w.grads[i];
      for (std::size_t e = 0; e < g.data.size(); ++e) {
        double mean = 0.0;
        for (const ParallelResult& r : want) mean += r.workers[0].grads[i].data[e];
        mean /= static_cast<double>(grid.dp);
        worst = std::max(worst, std::abs(g.data[e] - mean));
      }
    }
  }
  return worst;
}

SuiteResult bounded(std::string name, double worst, double tol, std::string detail = {}) {
  return {std::move(name), worst <= tol, worst, tol, std::move(detail)};
}

SuiteResult exact(std::string name, bool ok, std::string detail = {}) {
  return {std::move(name), ok, 0.0, 0.0, std::move(detail)};
}

// Fused vs reference over 20 random shapes: forward absolute, backward
// relative to each gradient's largest entry.
SuiteResult fused_attention(const RunConfig& cfg, double scale) {
  SplitMix64 rng(cfg.plan.seed + 100);
  double fwd = 0.0, bwd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t H = 1 + static_cast<std::int64_t>(rng.next() % 3);
    const std::int64_t c = 2 + static_cast<std::int64_t>(rng.next() % 3);
    const std::int64_t S = 1 + static_cast<std::int64_t>(rng.next() % 4);
    const std::int64_t R = 2 + static_cast<std::int64_t>(rng.next() % 6);
    const bool bias = trial % 3 != 2;
    AttentionParams p = AttentionParams::init(H * c, H, rng, "att");
    AttentionInput in;
    in.x = Var(uniform({1, S, R, H * c}, rng, 1.0f), true);
    in.mask = key_mask({1, S, R}, rng);
    if (bias) in.bias = Var(uniform({H, R, R}, rng, 1.0f), true);
    const Tensor probe = uniform({1, S, R, H * c}, rng, 1.0f);
    std::vector<Var> leaves = p.vars();
    leaves.push_back(in.x);
    std::vector<Tensor> out[2], grads[2];
    for (int k = 0; k < 2; ++k) {
      Tape tape;
      TapeGuard g(&tape);
      Var y = gated_attention(in, p, k == 0 ? AttentionImpl::kReference : AttentionImpl::kFused);
      out[k].push_back(y.value().shared());
      grads[k] = tape.backward(fn::sum(fn::mul(y, Var(probe.shared()))), leaves);
    }
    fwd = std::max(fwd, max_abs(out[0][0].data(), out[1][0].data()));
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const double ref = std::max(peak(grads[0][i].data()), 1e-30);
      bwd = std::max(bwd, max_abs(grads[0][i].data(), grads[1][i].data()) / ref);
    }
  }
  std::ostringstream d;
  d << "20 shapes, forward " << fwd << " (<= " << 1e-5 * scale << "), grads " << bwd
    << " (<= " << 1e-4 * scale << ")";
  SuiteResult r = bounded("fused_attention", fwd / 1e-5, scale, d.str());
  r.passed = fwd <= 1e-5 * scale && bwd <= 1e-4 * scale;
  r.worst = std::max(fwd / 1e-5, bwd / 1e-4);
  return r;
}

SuiteResult strategy(const std::string& name, const Setup& s, std::vector<ProcessGrid> grids,
                     double scale) {
  double worst = 0.0;
  std::ostringstream d;
  for (const ProcessGrid& g : grids) {
    const double w = deviation(s, g);
    d << "dp" << g.dp << "xbp" << g.bp << "xdap" << g.dap << " " << w << "; ";
    worst = std::max(worst, w);
  }
  return bounded(name, worst, 1e-5 * scale, d.str());
}

SuiteResult fusion(const RunConfig& cfg) {
  RunConfig a = cfg;
  a.plan.steps = 10;
  a.plan.fuse_tensors = true;
  RunConfig b = a;
  b.plan.fuse_tensors = false;
  TrainResult fa = train(a), fb = train(b);
  const auto n = static_cast<std::int64_t>(fa.params.size());
  bool launches = true;
  for (std::size_t i = 0; i < fa.steps.size(); ++i) {
    launches = launches && fa.steps[i].launches == LaunchCounter{1, 2, 1, 1} &&
               fb.steps[i].launches == LaunchCounter{n, 2 * n, n, n};
  }
  const bool bits = same_bits(fa.params, fb.params) && same_bits(fa.shadow, fb.shadow);
  return exact("fusion", bits && launches,
               std::string("10 steps, parameters ") + (bits ? "bitwise equal" : "differ") +
                   ", launches " + (launches ? "(1,2,1,1) vs (n,2n,n,n)" : "off the law") +
                   " with n=" + std::to_string(n));
}

SuiteResult recompute(const Setup& s) {
  ParallelOptions o = s.base;
  o.n_recycles = 2;
  ParallelResult plain = serial(s, 0, o);
  o.exec.recompute = true;
  ParallelResult re = serial(s, 0, o);
  const bool ok = same_bits(plain.workers[0].grads, re.workers[0].grads) &&
                  plain.replicas[0].loss == re.replicas[0].loss;
  return exact("recompute", ok, ok ? "gradients bitwise equal" : "gradients differ");
}

// Outputs must be bitwise equal. Weight gradients add the chunks' partial
// sums in a different order, so they are held to a tolerance.
SuiteResult subbatch(const Setup& s, double scale) {
  ParallelOptions o = s.base;
  o.exec.chunk = 0;
  ParallelResult whole = serial(s, 0, o);
  bool bits = true;
  double worst = 0.0;
  for (std::int64_t chunk : {1, 2, 3}) {
    o.exec.chunk = chunk;
    ParallelResult part = serial(s, 0, o);
    bits = bits && same_bits({part.replicas[0].msa, part.replicas[0].pair},
                             {whole.replicas[0].msa, whole.replicas[0].pair});
    for (std::size_t i = 0; i < whole.workers[0].grads.size(); ++i) {
      worst = std::max(worst, max_abs(part.workers[0].grads[i], whole.workers[0].grads[i]));
    }
  }
  SuiteResult r = bounded("subbatch", worst, 1e-6 * scale,
                          std::string("chunks 1,2,3: outputs ") + (bits ? "bitwise equal" : "differ") +
                              ", gradients " + num(worst));
  r.passed = r.passed && bits;
  return r;
}

SuiteResult grad_checks(const RunConfig& cfg, double scale) {
  SplitMix64 rng(cfg.plan.seed + 200);
  double worst = 0.0;
  for (AttentionImpl impl : {AttentionImpl::kReference, AttentionImpl::kFused}) {
    AttentionParams p = AttentionParams::init(6, 2, rng, "att");
    // O(1) weights; at init scale the query gradients sit near the float
    // central-difference noise floor.
    for (const Var& v : p.vars()) {
      for (float& t : Var(v).mutable_value().data()) t = rng.uniform(-1.0f, 1.0f);
    }
    AttentionInput in;
    in.x = Var(uniform({1, 2, 4, 6}, rng, 1.0f), true);
    in.mask = key_mask({1, 2, 4}, rng);
    in.bias = Var(uniform({2, 4, 4}, rng, 1.0f), true);
    const Tensor probe = uniform({1, 2, 4, 6}, rng, 1.0f);
    auto f = [&] { return fn::sum(fn::mul(gated_attention(in, p, impl), Var(probe.shared()))); };
    std::vector<Var> leaves = p.vars();
    leaves.push_back(in.x);
    leaves.push_back(in.bias);
    for (const Var& leaf : leaves) worst = std::max(worst, grad_check_leaf(f, leaf).max_rel_error);
  }
  const Tensor gamma = uniform({5}, rng, 1.0f), beta = uniform({5}, rng, 1.0f);
  const Tensor probe = uniform({3, 5}, rng, 1.0f);
  std::vector<std::function<Var(const Var&)>> ops = {
      [&](const Var& x) { return fn::sum(fn::mul(fn::softmax_lastdim(x), Var(probe.shared()))); },
      [&](const Var& x) {
        return fn::sum(fn::mul(fn::layer_norm(x, Var(gamma.shared()), Var(beta.shared())),
                               Var(probe.shared())));
      },
      [&](const Var& x) { return fn::sum(fn::mul(fn::sigmoid(x), Var(probe.shared()))); },
      [&](const Var& x) { return fn::mean_square(fn::matmul(x, fn::transpose(x, 0, 1))); },
  };
  for (const auto& op : ops) worst = std::max(worst, grad_check(op, uniform({3, 5}, rng, 1.0f)).max_rel_error);
  return bounded("grad_check", worst, 1e-3 * scale, "worst relative error " + num(worst));
}

SuiteResult counts(const Setup& s) {
  std::vector<std::string> bad;
  const LayoutSummary layout = summarize_layout(model_inventory(s.model), 256);
  const std::int64_t n = layout.tensors;
  if (!(layout.fused == LaunchCounter{1, 2, 1, 1})) bad.push_back("fused launches");
  if (!(layout.unfused == LaunchCounter{n, 2 * n, n, n})) bad.push_back("unfused launches");
  if (comm_count_table(Inventory::kPaperFull, Axis::kDap).total() != 24) bad.push_back("DAP table");
  if (comm_count_table(Inventory::kPaperFull, Axis::kBp).total() != 4) bad.push_back("BP table");

  SplitMix64 rng(11);
  AttentionParams p = AttentionParams::init(8, 2, rng, "att");
  AttentionInput in{Var(uniform({1, 2, 4, 8}, rng, 1.0f), true), key_mask({1, 2, 4}, rng), Var()};
  {
    Tape tape;
    TapeGuard g(&tape);
    gated_attention_fused(in, p);
    auto kept = tape.retained_buffers(0, tape.size());
    for (const Var& v : p.vars()) kept.erase(v.value().buffer_id());
    kept.erase(in.x.value().buffer_id());
    if (kept.size() != 5) bad.push_back("fused retains " + std::to_string(kept.size()));
  }

  ModelConfig one = s.model;
  one.n_blocks = 1;
  ParallelOptions o = s.base;
  o.grid = {1, 2, 1};
  ParallelResult bp = run_parallel(ModelParams::init(one, 5), {Features::synthesize(one, 6)}, o);
  std::size_t bc = 0, ar = 0;
  for (const CommRecord& r : bp.trace.calls()) {
    if (r.module == "evoformer" || r.phase == Phase::kGradSync) continue;
    bc += r.primitive == Primitive::kBroadcast;
    ar += r.primitive == Primitive::kAllReduce;
  }
  if (bc != 3 || ar != 1) bad.push_back("BP block comms " + std::to_string(bc) + "+" + std::to_string(ar));

  std::string detail = "n=" + std::to_string(n) + " tensors";
  for (const std::string& b : bad) detail += "; " + b;
  return exact("counts", bad.empty(), detail);
}

SuiteResult planner_ledger(const RunConfig& cfg) {
  std::string detail;
  bool ok = true;
  for (bool fused : {true, false}) {
    ExecutionPlan plan = cfg.plan;
    plan.fuse_ops = fused;
    plan.activation = DType::kF32;
    LedgerCrossCheck c = ledger_crosscheck(cfg.model, plan);
    ok = ok && c.matches();
    detail += std::string(fused ? "fused " : "reference ") + std::to_string(c.predicted_logits_peak) +
              "/" + std::to_string(c.measured_logits_peak) + "; ";
  }
  return exact("planner_ledger", ok, detail);
}

SuiteResult guarded(const std::string& name, const std::function<SuiteResult()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {name, false, 0.0, 0.0, std::string("error: ") + e.what()};
  }
}

}  // namespace

std::vector<SuiteResult> run_verify(const RunConfig& cfg, double tolerance_scale) {
  const Setup s = make_setup(cfg);
  const double k = tolerance_scale;
  std::vector<int> daps;
  for (int d : {2, 4}) {
    if (s.model.n_seq % d == 0 && s.model.n_res % d == 0) daps.push_back(d);
  }
  std::vector<ProcessGrid> dap_grids;
  for (int d : daps) dap_grids.push_back({1, 1, d});
  std::vector<SuiteResult> out;
  out.push_back(guarded("fused_attention", [&] { return fused_attention(cfg, k); }));
  out.push_back(guarded("bp", [&] { return strategy("bp", s, {{1, 2, 1}}, k); }));
  out.push_back(guarded("dap", [&] {
    if (dap_grids.empty()) throw ConfigError("model.n_seq", "no DAP degree divides the extents");
    return strategy("dap", s, dap_grids, k);
  }));
  out.push_back(guarded("dp", [&] { return strategy("dp", s, {{2, 1, 1}, {2, 2, 1}}, k); }));
  out.push_back(guarded("fusion", [&] { return fusion(cfg); }));
  out.push_back(guarded("recompute", [&] { return recompute(s); }));
  out.push_back(guarded("subbatch", [&] { return subbatch(s, k); }));
  out.push_back(guarded("grad_check", [&] { return grad_checks(cfg, k); }));
  out.push_back(guarded("counts", [&] { return counts(s); }));
  out.push_back(guarded("planner_ledger", [&] { return planner_ledger(cfg); }));
  return out;
}

nlohmann::json verify_summary(const std::vector<SuiteResult>& results) {
  nlohmann::json failures = nlohmann::json::array();
  for (const SuiteResult& r : results) {
    if (!r.passed) failures.push_back(r.name);
  }
  return {{"passed", failures.empty()}, {"suites", results.size()}, {"failures", failures}};
}

}  // namespace evo
