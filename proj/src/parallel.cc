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

#include "evo/parallel.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <sstream>
#include <thread>

#include "evo/autodiff.h"
#include "evo/bf16.h"
#include "evo/errors.h"
#include "evo/functional.h"
#include "evo/ledger.h"
#include "evo/op_counter.h"
#include "evo/ops.h"

namespace evo {

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::kBroadcast: return "Broadcast";
    case Primitive::kAllReduce: return "AllReduce";
    case Primitive::kAllGather: return "AllGather";
    case Primitive::kReduceScatter: return "ReduceScatter";
    case Primitive::kAllToAll: return "AllToAll";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kFwd: return "fwd";
    case Phase::kBwd: return "bwd";
    case Phase::kGradSync: return "grad-sync";
  }
  return "?";
}

std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::kDp: return "dp";
    case Axis::kBp: return "bp";
    case Axis::kDap: return "dap";
  }
  return "?";
}

// ---- grid ----

int ProcessGrid::rank_of(int dp_idx, int bp_idx, int dap_idx) const {
  return dp_idx * (bp * dap) + bp_idx * dap + dap_idx;
}

std::array<int, 3> ProcessGrid::coords(int rank) const {
  const int rem = rank % (bp * dap);
  return {rank / (bp * dap), rem / dap, rem % dap};
}

int ProcessGrid::degree(Axis a) const {
  switch (a) {
    case Axis::kDp: return dp;
    case Axis::kBp: return bp;
    case Axis::kDap: return dap;
  }
  return 1;
}

int ProcessGrid::index(Axis a, int rank) const {
  const auto c = coords(rank);
  return c[static_cast<std::size_t>(a)];
}

Group ProcessGrid::group(Axis a, int rank) const {
  auto c = coords(rank);
  Group g;
  g.axis = a;
  g.index = c[static_cast<std::size_t>(a)];
  switch (a) {
    case Axis::kDp: g.id = c[1] * dap + c[2]; break;
    case Axis::kBp: g.id = c[0] * dap + c[2]; break;
    case Axis::kDap: g.id = c[0] * bp + c[1]; break;
  }
  for (int i = 0; i < degree(a); ++i) {
    c[static_cast<std::size_t>(a)] = i;
    g.members.push_back(rank_of(c[0], c[1], c[2]));
  }
  return g;
}

void ProcessGrid::validate(const ModelConfig& cfg) const {
  if (dp < 1) throw ConfigError("plan.dp", "must be >= 1");
  if (dap < 1) throw ConfigError("plan.dap", "must be >= 1");
  if (bp != 1 && bp != 2) {
    throw ConfigError("plan.bp", "branch parallelism supports 1 or 2 ranks (one per branch), got " +
                                     std::to_string(bp));
  }
  if (dap > 1 && (cfg.n_seq % dap != 0 || cfg.n_res % dap != 0)) {
    throw ConfigError("plan.dap", "degree " + std::to_string(dap) + " must divide n_seq=" +
                                      std::to_string(cfg.n_seq) + " and n_res=" +
                                      std::to_string(cfg.n_res));
  }
}

// ---- trace ----

std::vector<CommRecord> CommTrace::calls() const {
  std::vector<CommRecord> out;
  std::map<std::pair<int, int>, int> first;
  for (const CommRecord& r : records_) {
    auto [it, fresh] = first.emplace(std::pair{static_cast<int>(r.axis), r.group_id}, r.rank);
    if (it->second == r.rank) out.push_back(r);
  }
  return out;
}

std::size_t CommTrace::count(Primitive p, std::optional<Phase> phase,
                             std::optional<std::string_view> module) const {
  std::size_t n = 0;
  for (const CommRecord& r : calls()) {
    if (r.primitive != p) continue;
    if (phase && r.phase != *phase) continue;
    if (module && r.module != *module) continue;
    ++n;
  }
  return n;
}

std::string CommTrace::csv() const {
  std::ostringstream os;
  os << "step,phase,group_axis,group_id,seq,primitive,bytes,module\n";
  for (const CommRecord& r : calls()) {
    os << r.step << ',' << to_string(r.phase) << ',' << to_string(r.axis) << ',' << r.group_id << ','
       << r.seq << ',' << to_string(r.primitive) << ',' << r.bytes << ',' << r.module << '\n';
  }
  return os.str();
}

void CommTrace::check_consistency(const ProcessGrid& grid) const {
  std::map<std::pair<int, int>, std::vector<std::vector<const CommRecord*>>> seen;
  for (const CommRecord& r : records_) {
    auto& per_member = seen[{static_cast<int>(r.axis), r.group_id}];
    per_member.resize(static_cast<std::size_t>(grid.degree(r.axis)));
    per_member[static_cast<std::size_t>(grid.index(r.axis, r.rank))].push_back(&r);
  }
  for (const auto& [key, members] : seen) {
    for (std::size_t m = 1; m < members.size(); ++m) {
      const auto& a = members[0];
      const auto& b = members[m];
      const bool same = a.size() == b.size() &&
                        std::equal(a.begin(), a.end(), b.begin(), [](auto* x, auto* y) {
                          return x->seq == y->seq && x->primitive == y->primitive &&
                                 x->bytes == y->bytes && x->module == y->module &&
                                 x->phase == y->phase && x->step == y->step;
                        });
      if (!same) {
        throw ProtocolError("trace divergence in " + std::string(to_string(static_cast<Axis>(key.first))) +
                            " group " + std::to_string(key.second) + " between members 0 and " +
                            std::to_string(m));
      }
    }
  }
}

HostArray HostArray::of(const Tensor& t) {
  auto d = t.data();
  return {t.shape(), std::vector<float>(d.begin(), d.end()), t.dtype()};
}

Tensor HostArray::tensor() const { return Tensor(shape, data, dtype); }

// ---- bus ----

std::string Bus::Site::describe(const Group& g) const {
  return "rank " + std::to_string(rank) + " " + std::string(to_string(primitive)) + " #" +
         std::to_string(seq) + " " + shape_str(shape) + " [" + module + "] on " +
         std::string(to_string(g.axis)) + " group " + std::to_string(g.id);
}

Bus::Bus(ProcessGrid grid)
    : grid_(grid),
      exited_(static_cast<std::size_t>(grid.world()), false),
      waiting_(static_cast<std::size_t>(grid.world())) {}

void Bus::check_deadlock_locked() {
  if (!error_.empty()) return;
  std::string sites;
  for (std::size_t r = 0; r < exited_.size(); ++r) {
    if (exited_[r]) continue;
    if (!waiting_[r]) return;
    sites += "\n  " + *waiting_[r];
  }
  if (sites.empty()) return;
  error_ = "deadlock: every live rank is blocked" + sites;
  cv_.notify_all();
}

std::vector<HostArray> Bus::exchange(const Group& g, const Site& site, HostArray payload) {
  std::unique_lock lk(mu_);
  Round& round = rounds_[{static_cast<int>(g.axis), g.id}];
  cv_.wait(lk, [&] { return !error_.empty() || !round.complete; });
  if (!error_.empty()) throw ProtocolError(error_);
  const auto n = static_cast<std::size_t>(g.size());
  if (round.sites.empty()) {
    round.sites.resize(n);
    round.payloads.resize(n);
  }
  for (const auto& other : round.sites) {
    if (other && (other->primitive != site.primitive || other->seq != site.seq ||
                  other->shape != site.shape)) {
      error_ = "collective mismatch: " + other->describe(g) + " vs " + site.describe(g);
      cv_.notify_all();
      throw ProtocolError(error_);
    }
  }
  const auto me = static_cast<std::size_t>(g.index);
  round.sites[me] = site;
  round.payloads[me] = std::move(payload);
  if (++round.arrived == g.size()) {
    round.complete = true;
    // Woken members are no longer blocked, even before they reacquire the lock.
    for (int m : g.members) waiting_[static_cast<std::size_t>(m)].reset();
    cv_.notify_all();
  } else {
    waiting_[static_cast<std::size_t>(site.rank)] = site.describe(g);
    check_deadlock_locked();
    cv_.wait(lk, [&] { return round.complete || !error_.empty(); });
    waiting_[static_cast<std::size_t>(site.rank)].reset();
    if (!error_.empty()) throw ProtocolError(error_);
  }
  std::vector<HostArray> out;
  out.reserve(n);
  for (const auto& p : round.payloads) out.push_back(*p);
  if (++round.departed == g.size()) {
    round = Round{};
    cv_.notify_all();
  }
  return out;
}

void Bus::exited(int rank) {
  std::lock_guard lk(mu_);
  exited_[static_cast<std::size_t>(rank)] = true;
  check_deadlock_locked();
}

void Bus::fail(const std::string& why) {
  std::lock_guard lk(mu_);
  if (error_.empty()) error_ = why;
  cv_.notify_all();
}

// ---- comm ----

namespace {
thread_local std::optional<Phase> phase_override;

Tensor from_host(const HostArray& h, DType dtype) {
  Tensor t(h.shape, h.data, dtype);
  t.canonicalize();
  return t;
}

void add_into(std::vector<float>& acc, const std::vector<float>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}
}  // namespace

PhaseScope::PhaseScope(Phase phase) : previous_(phase_override) { phase_override = phase; }
PhaseScope::~PhaseScope() { phase_override = previous_; }

Phase current_phase() {
  if (phase_override) return *phase_override;
  return in_backward() ? Phase::kBwd : Phase::kFwd;
}

Comm::Comm(Bus& bus, const ProcessGrid& grid, int rank) : bus_(bus), grid_(grid), rank_(rank) {}

std::vector<Tensor> Comm::exchange(Primitive p, const Group& g, const Tensor& x,
                                   std::string_view module) {
  const std::int64_t seq = seq_[g.axis]++;
  const DType wire = x.dtype() == DType::kBF16 ? DType::kBF16 : transport_;
  HostArray payload = HostArray::of(x);
  payload.dtype = wire;
  if (wire == DType::kBF16) {
    for (float& v : payload.data) v = bf16::round(v);
  }
  log_.push_back({step_, current_phase(), g.axis, g.id, seq, p,
                  x.numel() * static_cast<std::int64_t>(dtype_size(wire)), std::string(module),
                  rank_});
  auto all = bus_.exchange(g, {p, seq, x.shape(), std::string(module), rank_}, std::move(payload));
  std::vector<Tensor> out;
  out.reserve(all.size());
  for (const HostArray& h : all) out.push_back(from_host(h, x.dtype()));
  return out;
}

Tensor Comm::broadcast(Axis a, const Tensor& x, int root, std::string_view module) {
  const Group g = grid_.group(a, rank_);
  if (g.size() == 1) return x.shared();
  if (root < 0 || root >= g.size()) throw ContractError("broadcast root out of range");
  return exchange(Primitive::kBroadcast, g, x, module)[static_cast<std::size_t>(root)];
}

Tensor Comm::all_reduce(Axis a, const Tensor& x, std::string_view module, bool average) {
  const Group g = grid_.group(a, rank_);
  if (g.size() == 1) return x.shared();
  auto all = exchange(Primitive::kAllReduce, g, x, module);
  // Fixed ascending-rank order, so every member gets identical bits.
  HostArray acc = HostArray::of(all[0]);
  for (std::size_t i = 1; i < all.size(); ++i) add_into(acc.data, HostArray::of(all[i]).data);
  if (average) {
    const auto n = static_cast<float>(g.size());
    for (float& v : acc.data) v /= n;
  }
  return from_host(acc, x.dtype());
}

Tensor Comm::all_gather(Axis a, const Tensor& x, int dim, std::string_view module) {
  const Group g = grid_.group(a, rank_);
  if (g.size() == 1) return x.shared();
  auto all = exchange(Primitive::kAllGather, g, x, module);
  OpCountSuspend quiet;
  return ops::concat(all, dim);
}

Tensor Comm::reduce_scatter(Axis a, const Tensor& x, int dim, std::string_view module) {
  const Group g = grid_.group(a, rank_);
  if (g.size() == 1) return x.shared();
  const std::int64_t extent = x.dim(dim);
  if (extent % g.size() != 0) {
    throw DimensionError("reduce_scatter extent " + std::to_string(extent) + " not divisible by " +
                         std::to_string(g.size()));
  }
  auto all = exchange(Primitive::kReduceScatter, g, x, module);
  HostArray acc = HostArray::of(all[0]);
  for (std::size_t i = 1; i < all.size(); ++i) add_into(acc.data, HostArray::of(all[i]).data);
  OpCountSuspend quiet;
  const std::int64_t part = extent / g.size();
  return ops::slice(from_host(acc, x.dtype()), dim, g.index * part, part);
}

Tensor Comm::all_to_all(Axis a, const Tensor& x, int split_dim, int concat_dim,
                        std::string_view module) {
  const Group g = grid_.group(a, rank_);
  if (g.size() == 1) return x.shared();
  const std::int64_t extent = x.dim(split_dim);
  if (extent % g.size() != 0) {
    throw DimensionError("all_to_all extent " + std::to_string(extent) + " not divisible by " +
                         std::to_string(g.size()));
  }
  auto all = exchange(Primitive::kAllToAll, g, x, module);
  OpCountSuspend quiet;
  const std::int64_t part = extent / g.size();
  std::vector<Tensor> blocks;
  blocks.reserve(all.size());
  for (const Tensor& t : all) blocks.push_back(ops::slice(t, split_dim, g.index * part, part));
  return ops::concat(blocks, concat_dim);
}

CommTrace run_workers(const ProcessGrid& grid, const std::function<void(Comm&)>& body,
                      DType transport) {
  const int world = grid.world();
  Bus bus(grid);
  std::vector<std::vector<CommRecord>> logs(static_cast<std::size_t>(world));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
  std::atomic<int> first_failure{-1};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(world));
  for (int r = 0; r < world; ++r) {
    threads.emplace_back([&, r] {
      const auto slot = static_cast<std::size_t>(r);
      try {
        MemoryLedger ledger;
        LedgerBinding bind(ledger);
        OpCounter::current().reset();
        Comm comm(bus, grid, r);
        comm.set_transport(transport);
        try {
          body(comm);
        } catch (...) {
          logs[slot] = comm.log();
          throw;
        }
        logs[slot] = comm.log();
      } catch (const std::exception& e) {
        errors[slot] = std::current_exception();
        int expected = -1;
        first_failure.compare_exchange_strong(expected, r);
        bus.fail("rank " + std::to_string(r) + " failed: " + e.what());
      }
      bus.exited(r);
    });
  }
  for (std::thread& t : threads) t.join();
  if (first_failure.load() >= 0) std::rethrow_exception(errors[static_cast<std::size_t>(first_failure.load())]);
  std::vector<CommRecord> all;
  for (auto& l : logs) all.insert(all.end(), l.begin(), l.end());
  return CommTrace(std::move(all));
}

// ---- differentiable collectives ----

namespace {

using GradFn = std::function<Tensor(const Tensor&)>;

// The node always runs in backward so every group member reaches the
// matching collective, whether or not a gradient arrived locally.
Var collective_var(Tensor out, const Var& x, std::string kind, GradFn grad) {
  Shape shape = out.shape();
  const Var in[] = {x};
  auto vars = record_multi(tensor_list(std::move(out)), std::move(kind), in, {},
                           [grad = std::move(grad), shape](BackwardContext& bc) {
    const Tensor* g = bc.grad_output(0);
    Tensor dx = grad(g != nullptr ? *g : Tensor(shape));
    if (bc.needs_grad(0)) bc.accumulate(0, std::move(dx));
  }, true, true);
  return vars[0];
}

}  // namespace

int DapComm::size() const { return comm_.size(Axis::kDap); }
int DapComm::rank() const { return comm_.index(Axis::kDap); }

Var DapComm::all_gather(const Var& x, int dim, std::string_view module) {
  std::string m(module);
  return collective_var(comm_.all_gather(Axis::kDap, x.value(), dim, m), x, "all_gather",
                        [this, dim, m](const Tensor& g) {
                          return comm_.reduce_scatter(Axis::kDap, g, dim, m);
                        });
}

Var DapComm::reduce_scatter(const Var& x, int dim, std::string_view module) {
  std::string m(module);
  return collective_var(comm_.reduce_scatter(Axis::kDap, x.value(), dim, m), x, "reduce_scatter",
                        [this, dim, m](const Tensor& g) {
                          return comm_.all_gather(Axis::kDap, g, dim, m);
                        });
}

Var DapComm::all_to_all(const Var& x, int split_dim, int concat_dim, std::string_view module) {
  std::string m(module);
  return collective_var(comm_.all_to_all(Axis::kDap, x.value(), split_dim, concat_dim, m), x,
                        "all_to_all", [this, split_dim, concat_dim, m](const Tensor& g) {
                          return comm_.all_to_all(Axis::kDap, g, concat_dim, split_dim, m);
                        });
}

bool BpHooks::runs(Branch b) const {
  return comm_.index(Axis::kBp) == (b == Branch::kMsa ? 0 : 1);
}

// Both branches read the block-input pair (bias on one side, stack input on
// the other); their gradient contributions are summed.
Var BpHooks::pair_in(const Var& pair) {
  return collective_var(pair.value().shared(), pair, "bp_pair_in", [this](const Tensor& g) {
    return comm_.all_reduce(Axis::kBp, g, "pair_stack");
  });
}

Var BpHooks::opm_out(const Var& update) {
  return collective_var(comm_.broadcast(Axis::kBp, update.value(), 0, "outer_product_mean"), update,
                        "bp_opm_out", [this](const Tensor& g) {
                          return comm_.broadcast(Axis::kBp, g, 1, "msa_stack");
                        });
}

Var BpHooks::pair_out(const Var& pair) {
  const bool root = comm_.index(Axis::kBp) == 1;
  return collective_var(comm_.broadcast(Axis::kBp, pair.value(), 1, "pair_stack"), pair,
                        "bp_pair_out", [root](const Tensor& g) {
                          return root ? g.shared() : Tensor(g.shape());
                        });
}

Var BpHooks::msa_entry(const Var& msa) {
  return collective_var(msa.value().shared(), msa, "bp_msa_entry", [this](const Tensor& g) {
    return comm_.broadcast(Axis::kBp, g, 0, "evoformer");
  });
}

Var BpHooks::msa_exit(const Var& msa) {
  const bool root = comm_.index(Axis::kBp) == 0;
  return collective_var(comm_.broadcast(Axis::kBp, msa.value(), 0, "evoformer"), msa,
                        "bp_msa_exit", [root](const Tensor& g) {
                          return root ? g.shared() : Tensor(g.shape());
                        });
}

// ---- strategies ----

void sync_gradients(Comm& comm, std::vector<Tensor>& grads, const std::vector<Branch>& owners,
                    bool fused) {
  PhaseScope phase(Phase::kGradSync);
  auto reduce = [&](Axis a, bool average) {
    if (comm.size(a) == 1) return;
    if (!fused) {
      for (Tensor& g : grads) g = comm.all_reduce(a, g, "grad_sync", average);
      return;
    }
    std::int64_t total = 0;
    for (const Tensor& g : grads) total += g.numel();
    Tensor flat({total});
    auto dst = flat.data();
    std::size_t at = 0;
    for (const Tensor& g : grads) {
      std::copy(g.data().begin(), g.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(at));
      at += static_cast<std::size_t>(g.numel());
    }
    Tensor synced = comm.all_reduce(a, flat, "grad_sync", average);
    auto src = synced.data();
    at = 0;
    for (Tensor& g : grads) {
      Tensor out(g.shape());
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(at), g.numel(), out.data().begin());
      at += static_cast<std::size_t>(g.numel());
      g = std::move(out);
    }
  };
  if (comm.size(Axis::kBp) > 1) {
    // Each parameter's gradient is complete on its owning rank only.
    const Branch mine = comm.index(Axis::kBp) == 0 ? Branch::kMsa : Branch::kPair;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (owners[i] != mine) grads[i] = Tensor(grads[i].shape());
    }
    reduce(Axis::kBp, false);
  }
  reduce(Axis::kDap, false);
  reduce(Axis::kDp, true);
}

Var local_loss_share(const Reps& out, const ProcessGrid& grid, int bp_index) {
  auto term = [&](const Var& y) {
    if (grid.dap == 1) return fn::mean_square(y);
    // Local share of the global mean.
    const double total = static_cast<double>(y.value().numel()) * grid.dap;
    return fn::scale(fn::sum(fn::mul(y, y)), static_cast<float>(1.0 / total));
  };
  if (grid.bp == 1) return fn::add(term(out.msa), term(out.pair));
  // Each branch rank differentiates only the output it owns; the driver
  // recomputes the full loss from the assembled replicas.
  return bp_index == 0 ? term(out.msa) : term(out.pair);
}

ParallelResult run_parallel(const ModelParams& params, const std::vector<Features>& features,
                            const ParallelOptions& options) {
  const ProcessGrid& grid = options.grid;
  if (features.empty()) throw ConfigError("plan.dp", "no features");
  ModelConfig shape_cfg;
  shape_cfg.n_seq = features[0].msa_mask.dim(1);
  shape_cfg.n_res = features[0].msa_mask.dim(2);
  grid.validate(shape_cfg);
  if (static_cast<int>(features.size()) != grid.dp) {
    throw ConfigError("plan.dp", "batch of " + std::to_string(features.size()) +
                                     " proteins does not match dp=" + std::to_string(grid.dp));
  }
  const auto world = static_cast<std::size_t>(grid.world());
  std::vector<WorkerReport> reports(world);
  std::vector<HostArray> msa_parts(world), pair_parts(world);

  CommTrace trace = run_workers(grid, [&](Comm& comm) {
    const int r = comm.rank();
    const auto c = grid.coords(r);
    comm.set_step(options.step);
    ModelParams local = params.clone();
    DapComm dap(comm);
    BpHooks bp(comm);
    ExecContext ctx = options.exec;
    ctx.features = &features[static_cast<std::size_t>(c[0])];
    ctx.axial = grid.dap > 1 ? &dap : nullptr;
    ctx.branch = grid.bp > 1 ? &bp : nullptr;
    const std::vector<Var> vars = local.vars();
    Tape tape;
    Var loss;
    {
      TapeGuard on(&tape);
      Reps out = model_forward(local, ctx, options.n_recycles);
      loss = local_loss_share(out, grid, c[1]);
      msa_parts[static_cast<std::size_t>(r)] = HostArray::of(out.msa.value());
      pair_parts[static_cast<std::size_t>(r)] = HostArray::of(out.pair.value());
    }
    std::vector<Tensor> grads = tape.backward(loss, vars);
    sync_gradients(comm, grads, local.owners(), options.fused_grad_sync);
    WorkerReport& rep = reports[static_cast<std::size_t>(r)];
    rep.rank = r;
    rep.local_loss = loss.value().item();
    for (const Tensor& g : grads) rep.grads.push_back(HostArray::of(g));
    rep.ops = OpCounter::current().total();
    rep.op_kinds = OpCounter::current().by_kind();
    rep.peak_bytes = MemoryLedger::current().peak_bytes();
    rep.logits_peak = MemoryLedger::current().segment_peak("logits");
  }, options.exec.activation);

  ParallelResult result;
  for (int d = 0; d < grid.dp; ++d) {
    std::vector<Tensor> m, z;
    for (int a = 0; a < grid.dap; ++a) {
      const auto r = static_cast<std::size_t>(grid.rank_of(d, 0, a));
      m.push_back(msa_parts[r].tensor());
      z.push_back(pair_parts[r].tensor());
    }
    OpCountSuspend quiet;
    Tensor msa = ops::concat(m, 1), pair = ops::concat(z, 1);
    TapeGuard no_grad(nullptr);
    ReplicaOutput rep;
    rep.loss = synthetic_loss(Var(msa.shared()), Var(pair.shared())).value().item();
    rep.msa = HostArray::of(msa);
    rep.pair = HostArray::of(pair);
    result.replicas.push_back(std::move(rep));
  }
  result.workers = std::move(reports);
  result.trace = std::move(trace);
  return result;
}

ParallelResult run_bp(const ModelParams& params, const Features& features, ParallelOptions options) {
  if (options.grid.bp != 2) {
    throw ConfigError("plan.bp", "branch parallelism needs exactly 2 ranks, one per branch");
  }
  return run_parallel(params, {features}, options);
}

ParallelResult run_dap(const ModelParams& params, const Features& features, ParallelOptions options) {
  if (options.grid.dap < 2) throw ConfigError("plan.dap", "DAP needs a degree of at least 2");
  return run_parallel(params, {features}, options);
}

ParallelResult run_hybrid(const ModelParams& params, const std::vector<Features>& features,
                          const ParallelOptions& options) {
  return run_parallel(params, features, options);
}

}  // namespace evo
