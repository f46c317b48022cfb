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

#include <array>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evo/evoformer.h"
#include "evo/tensor.h"

namespace evo {

enum class Primitive { kBroadcast, kAllReduce, kAllGather, kReduceScatter, kAllToAll };
enum class Phase { kFwd, kBwd, kGradSync };
enum class Axis { kDp, kBp, kDap };

std::string_view to_string(Primitive p);
std::string_view to_string(Phase p);
std::string_view to_string(Axis a);

struct Group {
  Axis axis = Axis::kDp;
  int id = 0;
  // World ranks in ascending order; `index` is the caller's position.
  std::vector<int> members;
  int index = 0;
  int size() const { return static_cast<int>(members.size()); }
};

// rank = dp_idx·(bp·dap) + bp_idx·dap + dap_idx
struct ProcessGrid {
  int dp = 1;
  int bp = 1;
  int dap = 1;

  int world() const { return dp * bp * dap; }
  int rank_of(int dp_idx, int bp_idx, int dap_idx) const;
  // {dp_idx, bp_idx, dap_idx}
  std::array<int, 3> coords(int rank) const;
  Group group(Axis axis, int rank) const;
  int index(Axis axis, int rank) const;
  int degree(Axis axis) const;
  // ConfigError on bp outside {1, 2} or extents not divisible by dap.
  void validate(const ModelConfig& cfg) const;
};

struct CommRecord {
  std::int64_t step = 0;
  Phase phase = Phase::kFwd;
  Axis axis = Axis::kDp;
  int group_id = 0;
  std::int64_t seq = 0;
  Primitive primitive = Primitive::kBroadcast;
  std::int64_t bytes = 0;
  std::string module;
  int rank = 0;
};

class CommTrace {
 public:
  CommTrace() = default;
  explicit CommTrace(std::vector<CommRecord> records) : records_(std::move(records)) {}

  const std::vector<CommRecord>& records() const { return records_; }
  // Calls as seen by each group's first member, in that member's order.
  std::vector<CommRecord> calls() const;
  std::size_t count(Primitive p, std::optional<Phase> phase = {},
                    std::optional<std::string_view> module = {}) const;
  // step,phase,group_axis,group_id,seq,primitive,bytes,module
  std::string csv() const;
  // Every member of a group must have logged the same call sequence.
  void check_consistency(const ProcessGrid& grid) const;

 private:
  std::vector<CommRecord> records_;
};

// Shape and values copied off a worker's ledger, safe to hold after it exits.
struct HostArray {
  Shape shape;
  std::vector<float> data;
  DType dtype = DType::kF32;

  static HostArray of(const Tensor& t);
  Tensor tensor() const;
};

// Rendezvous point shared by all workers. Members of a group deposit their
// payloads; once all have arrived each receives every payload in member order.
class Bus {
 public:
  struct Site {
    Primitive primitive;
    std::int64_t seq;
    Shape shape;
    std::string module;
    int rank;
    std::string describe(const Group& g) const;
  };

  explicit Bus(ProcessGrid grid);
  std::vector<HostArray> exchange(const Group& g, const Site& site, HostArray payload);
  void exited(int rank);
  void fail(const std::string& why);

 private:
  struct Round {
    int arrived = 0;
    int departed = 0;
    bool complete = false;
    std::vector<std::optional<HostArray>> payloads;
    std::vector<std::optional<Site>> sites;
  };
  void check_deadlock_locked();

  ProcessGrid grid_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<int, int>, Round> rounds_;
  std::vector<bool> exited_;
  std::vector<std::optional<std::string>> waiting_;
  std::string error_;
};

// Per-phase override; outside it the phase follows the autodiff sweep.
class PhaseScope {
 public:
  explicit PhaseScope(Phase phase);
  ~PhaseScope();
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  std::optional<Phase> previous_;
};

Phase current_phase();

// A worker's handle on the bus. Groups of size one are no-ops without records.
class Comm {
 public:
  Comm(Bus& bus, const ProcessGrid& grid, int rank);

  int rank() const { return rank_; }
  const ProcessGrid& grid() const { return grid_; }
  int size(Axis a) const { return grid_.degree(a); }
  int index(Axis a) const { return grid_.index(a, rank_); }
  void set_step(std::int64_t step) { step_ = step; }
  // Payloads travel in this dtype (BF16 halves every record's bytes).
  void set_transport(DType dtype) { transport_ = dtype; }
  DType transport() const { return transport_; }

  Tensor broadcast(Axis a, const Tensor& x, int root, std::string_view module);
  Tensor all_reduce(Axis a, const Tensor& x, std::string_view module, bool average = false);
  Tensor all_gather(Axis a, const Tensor& x, int dim, std::string_view module);
  Tensor reduce_scatter(Axis a, const Tensor& x, int dim, std::string_view module);
  Tensor all_to_all(Axis a, const Tensor& x, int split_dim, int concat_dim,
                    std::string_view module);

  const std::vector<CommRecord>& log() const { return log_; }

 private:
  std::vector<Tensor> exchange(Primitive p, const Group& g, const Tensor& x,
                               std::string_view module);

  Bus& bus_;
  ProcessGrid grid_;
  int rank_;
  std::int64_t step_ = 0;
  DType transport_ = DType::kF32;
  std::map<Axis, std::int64_t> seq_;
  std::vector<CommRecord> log_;
};

// Runs `body` once per world rank, each on its own thread with its own
// ledger, tape and op counter. Rethrows the first worker failure.
CommTrace run_workers(const ProcessGrid& grid, const std::function<void(Comm&)>& body,
                      DType transport = DType::kF32);

// Differentiable sharded collectives over the DAP group.
class DapComm : public AxialComm {
 public:
  explicit DapComm(Comm& comm) : comm_(comm) {}
  int size() const override;
  int rank() const override;
  Var all_gather(const Var& x, int dim, std::string_view module) override;
  Var reduce_scatter(const Var& x, int dim, std::string_view module) override;
  Var all_to_all(const Var& x, int split_dim, int concat_dim, std::string_view module) override;

 private:
  Comm& comm_;
};

// Two-way branch split over the BP group: index 0 runs the MSA stack and OPM,
// index 1 the pair stack.
class BpHooks : public BranchHooks {
 public:
  explicit BpHooks(Comm& comm) : comm_(comm) {}
  bool runs(Branch b) const override;
  Var pair_in(const Var& pair) override;
  Var opm_out(const Var& update) override;
  Var pair_out(const Var& pair) override;
  Var msa_entry(const Var& msa) override;
  Var msa_exit(const Var& msa) override;

 private:
  Comm& comm_;
};

struct ParallelOptions {
  ProcessGrid grid;
  // attention, chunk, recompute and activation are taken from here.
  ExecContext exec;
  int n_recycles = 1;
  // One collective over all gradients per group instead of one per tensor.
  bool fused_grad_sync = true;
  std::int64_t step = 0;
};

struct ReplicaOutput {
  HostArray msa;
  HostArray pair;
  double loss = 0.0;
};

struct WorkerReport {
  int rank = 0;
  // Gradients after synchronization, in ModelParams::vars() order.
  std::vector<HostArray> grads;
  double local_loss = 0.0;
  std::int64_t ops = 0;
  std::map<std::string, std::int64_t, std::less<>> op_kinds;
  std::int64_t peak_bytes = 0;
  std::int64_t logits_peak = 0;
};

struct ParallelResult {
  // One entry per DP replica, assembled from the shards.
  std::vector<ReplicaOutput> replicas;
  std::vector<WorkerReport> workers;
  CommTrace trace;
};

// Forward + backward + gradient synchronization of the model on a process
// grid. features.size() must equal grid.dp (one protein per replica).
ParallelResult run_parallel(const ModelParams& params, const std::vector<Features>& features,
                            const ParallelOptions& options);

// Strategy entry points over run_parallel with the matching grid checks.
ParallelResult run_bp(const ModelParams& params, const Features& features,
                      ParallelOptions options);
ParallelResult run_dap(const ModelParams& params, const Features& features,
                       ParallelOptions options);
ParallelResult run_hybrid(const ModelParams& params, const std::vector<Features>& features,
                          const ParallelOptions& options);

// This rank's share of the replica loss. Shares summed over the BP and DAP
// groups give the serial loss.
Var local_loss_share(const Reps& out, const ProcessGrid& grid, int bp_index);

// Synchronizes per-rank gradients: BP (owner-masked sum), DAP (sum), DP
// (mean), one AllReduce per group when fused.
void sync_gradients(Comm& comm, std::vector<Tensor>& grads, const std::vector<Branch>& owners,
                    bool fused);

}  // namespace evo
