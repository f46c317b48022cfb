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

#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "evo/errors.h"
#include "evo/op_counter.h"
#include "evo/parallel.h"
#include "test_util.h"

namespace evo {
namespace {

double max_abs(const HostArray& a, const HostArray& b) {
  EXPECT_EQ(a.shape, b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, double(std::abs(a.data[i] - b.data[i])));
  return m;
}

// ---- grid ----

TEST(GridTest, RankMappingAndGroups) {
  ProcessGrid g{2, 2, 2};
  EXPECT_EQ(g.world(), 8);
  EXPECT_EQ(g.rank_of(1, 0, 1), 5);
  EXPECT_EQ(g.coords(6), (std::array<int, 3>{1, 1, 0}));
  for (Axis a : {Axis::kDp, Axis::kBp, Axis::kDap}) {
    std::map<int, std::set<int>> groups;
    for (int r = 0; r < g.world(); ++r) {
      Group grp = g.group(a, r);
      EXPECT_EQ(grp.members[static_cast<std::size_t>(grp.index)], r);
      groups[grp.id].insert(grp.members.begin(), grp.members.end());
    }
    // Groups partition the world.
    std::size_t covered = 0;
    for (auto& [id, m] : groups) covered += m.size();
    EXPECT_EQ(covered, 8u);
    EXPECT_EQ(groups.size(), 4u);
  }
  EXPECT_EQ(g.group(Axis::kDp, 3).members, (std::vector<int>{3, 7}));
  EXPECT_EQ(g.group(Axis::kBp, 5).members, (std::vector<int>{5, 7}));
  EXPECT_EQ(g.group(Axis::kDap, 2).members, (std::vector<int>{2, 3}));
}

TEST(GridTest, Validation) {
  ModelConfig cfg;
  EXPECT_THROW((ProcessGrid{1, 3, 1}.validate(cfg)), ConfigError);
  EXPECT_THROW((ProcessGrid{1, 1, 3}.validate(cfg)), ConfigError);
  EXPECT_NO_THROW((ProcessGrid{2, 2, 4}.validate(cfg)));
}

// ---- primitives ----

TEST(CollectiveTest, AllReduceOfOneHotsIsOnes) {
  std::vector<HostArray> got(4);
  run_workers({1, 1, 4}, [&](Comm& c) {
    Tensor x({4});
    x.data()[static_cast<std::size_t>(c.rank())] = 1.0f;
    got[static_cast<std::size_t>(c.rank())] = HostArray::of(c.all_reduce(Axis::kDap, x, "t"));
  });
  for (const HostArray& h : got) EXPECT_EQ(h.data, (std::vector<float>{1, 1, 1, 1}));
}

TEST(CollectiveTest, BroadcastAndReduceScatter) {
  std::vector<HostArray> bc(3), rs(3);
  run_workers({3, 1, 1}, [&](Comm& c) {
    const float r = static_cast<float>(c.rank());
    Tensor x({3, 2}, {r, r, r, r, r, r});
    bc[static_cast<std::size_t>(c.rank())] = HostArray::of(c.broadcast(Axis::kDp, x, 2, "t"));
    Tensor y({3, 2}, {1 * r, 2 * r, 3 * r, 4 * r, 5 * r, 6 * r});
    rs[static_cast<std::size_t>(c.rank())] = HostArray::of(c.reduce_scatter(Axis::kDp, y, 0, "t"));
  });
  for (const HostArray& h : bc) EXPECT_EQ(h.data, std::vector<float>(6, 2.0f));
  // Sum over ranks is 3·row; rank r keeps row r.
  EXPECT_EQ(rs[0].data, (std::vector<float>{3, 6}));
  EXPECT_EQ(rs[2].data, (std::vector<float>{15, 18}));
}

TEST(CollectiveTest, AllGatherThenShardIsIdentity) {
  run_workers({1, 1, 4}, [&](Comm& c) {
    SplitMix64 rng(100 + static_cast<std::uint64_t>(c.rank()));
    Tensor x = testing::random_tensor({2, 3, 5}, rng);
    Tensor full = c.all_gather(Axis::kDap, x, 1, "t");
    ASSERT_EQ(full.shape(), (Shape{2, 12, 5}));
    Tensor back = ops::slice(full, 1, 3 * c.rank(), 3);
    ASSERT_TRUE(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
  });
}

TEST(CollectiveTest, AllToAllMatchesBlockPermutation) {
  const int D = 4;
  run_workers({1, 1, D}, [&](Comm& c) {
    const int me = c.rank();
    // x[i, j] = 100·rank + 10·i + j with i split across ranks.
    Tensor x({8, 3});
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 3; ++j) x.data()[static_cast<std::size_t>(i * 3 + j)] = 100.0f * me + 10.0f * i + j;
    Tensor y = c.all_to_all(Axis::kDap, x, 0, 1, "t");
    ASSERT_EQ(y.shape(), (Shape{2, 12}));
    // Block from rank s holds rows [2·me, 2·me+2) of s's tensor.
    for (int s = 0; s < D; ++s)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
          ASSERT_EQ(y.data()[static_cast<std::size_t>(i * 12 + s * 3 + j)], 100.0f * s + 10.0f * (2 * me + i) + j);
        }
    Tensor z = c.all_to_all(Axis::kDap, y, 1, 0, "t");
    ASSERT_TRUE(std::equal(z.data().begin(), z.data().end(), x.data().begin()));
  });
}

TEST(CollectiveTest, MismatchIsAProtocolError) {
  try {
    run_workers({2, 1, 1}, [&](Comm& c) {
      Tensor x({2});
      if (c.rank() == 0) c.all_reduce(Axis::kDp, x, "a");
      else c.broadcast(Axis::kDp, x, 0, "b");
    });
    FAIL();
  } catch (const ProtocolError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("AllReduce"), std::string::npos) << what;
    EXPECT_NE(what.find("Broadcast"), std::string::npos) << what;
  }
}

TEST(CollectiveTest, MissingPartnerIsADeadlock) {
  try {
    run_workers({2, 1, 1}, [&](Comm& c) {
      if (c.rank() == 0) c.all_reduce(Axis::kDp, Tensor({2}), "lonely");
    });
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("deadlock"), std::string::npos) << e.what();
  }
}

TEST(CollectiveTest, TraceRecordsEveryMemberAndHalvesInBf16) {
  auto body = [](Comm& c) {
    Tensor x({5, 4});
    c.all_reduce(Axis::kDp, x, "m");
    c.all_gather(Axis::kDp, x, 0, "m");
  };
  CommTrace f32 = run_workers({2, 1, 1}, body);
  CommTrace bf = run_workers({2, 1, 1}, body, DType::kBF16);
  EXPECT_EQ(f32.records().size(), 4u);
  EXPECT_EQ(f32.calls().size(), 2u);
  EXPECT_NO_THROW(f32.check_consistency({2, 1, 1}));
  for (std::size_t i = 0; i < f32.records().size(); ++i) {
    EXPECT_EQ(f32.records()[i].bytes, 80);
    EXPECT_EQ(bf.records()[i].bytes * 2, f32.records()[i].bytes);
  }
  EXPECT_EQ(f32.csv(),
            "step,phase,group_axis,group_id,seq,primitive,bytes,module\n"
            "0,fwd,dp,0,0,AllReduce,80,m\n"
            "0,fwd,dp,0,1,AllGather,80,m\n");
}

// ---- strategies ----

struct Mini {
  ModelConfig cfg;
  ModelParams params;
  Features feat;
};

Mini mini(std::int64_t blocks = 2, std::uint64_t seed = 50) {
  ModelConfig cfg;
  cfg.n_blocks = blocks;
  return {cfg, ModelParams::init(cfg, seed), Features::synthesize(cfg, seed + 1)};
}

ParallelOptions plan(int dp, int bp, int dap) {
  ParallelOptions o;
  o.grid = {dp, bp, dap};
  return o;
}

void expect_matches(const ParallelResult& got, const ParallelResult& serial, double tol) {
  ASSERT_EQ(got.replicas.size(), serial.replicas.size());
  for (std::size_t d = 0; d < got.replicas.size(); ++d) {
    EXPECT_LE(max_abs(got.replicas[d].msa, serial.replicas[d].msa), tol);
    EXPECT_LE(max_abs(got.replicas[d].pair, serial.replicas[d].pair), tol);
  }
  const auto& want = serial.workers[0].grads;
  for (const WorkerReport& w : got.workers) {
    ASSERT_EQ(w.grads.size(), want.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, max_abs(w.grads[i], want[i]));
    EXPECT_LE(worst, tol) << "rank " << w.rank;
  }
}

TEST(BranchParallelTest, MatchesSerial) {
  Mini s = mini();
  ParallelResult serial = run_parallel(s.params, {s.feat}, plan(1, 1, 1));
  ParallelResult bp = run_bp(s.params, s.feat, plan(1, 2, 1));
  expect_matches(bp, serial, 1e-6);
  EXPECT_DOUBLE_EQ(bp.replicas[0].loss, serial.replicas[0].loss);
  EXPECT_NO_THROW(bp.trace.check_consistency({1, 2, 1}));
}

TEST(BranchParallelTest, FourCommsPerBlock) {
  for (std::int64_t blocks : {1, 2}) {
    Mini s = mini(blocks);
    ParallelResult bp = run_bp(s.params, s.feat, plan(1, 2, 1));
    const CommTrace& t = bp.trace;
    std::size_t block_level = 0;
    for (const CommRecord& r : t.calls()) {
      if (r.module != "evoformer" && r.phase != Phase::kGradSync) ++block_level;
    }
    EXPECT_EQ(block_level, 4u * blocks);
    EXPECT_EQ(t.count(Primitive::kBroadcast, {}, "outer_product_mean"), 1u * blocks);
    EXPECT_EQ(t.count(Primitive::kBroadcast, {}, "msa_stack"), 1u * blocks);
    EXPECT_EQ(t.count(Primitive::kBroadcast, {}, "pair_stack"), 1u * blocks);
    EXPECT_EQ(t.count(Primitive::kAllReduce, Phase::kBwd, "pair_stack"), 1u * blocks);
    // The msa output replication and its gradient broadcast, once each.
    EXPECT_EQ(t.count(Primitive::kBroadcast, Phase::kFwd, "evoformer"), 1u);
    EXPECT_EQ(t.count(Primitive::kBroadcast, Phase::kBwd, "evoformer"), 1u);
    EXPECT_EQ(t.count(Primitive::kAllReduce, Phase::kGradSync), 1u);
  }
}

TEST(BranchParallelTest, WorkersPartitionTheSerialOps) {
  Mini s = mini();
  ParallelResult serial = run_parallel(s.params, {s.feat}, plan(1, 1, 1));
  ParallelResult bp = run_bp(s.params, s.feat, plan(1, 2, 1));
  const auto& all = serial.workers[0].op_kinds;
  const auto& w0 = bp.workers[0].op_kinds;
  const auto& w1 = bp.workers[1].op_kinds;
  auto get = [](const auto& m, const std::string& k) {
    auto it = m.find(k);
    return it == m.end() ? std::int64_t{0} : it->second;
  };
  // Both ranks embed the pair features (forward matmul, weight-gradient
  // matmul, bias-gradient reduce). The serial loss add is the one op no
  // rank runs. Every other kernel executes on exactly one rank.
  for (const auto& [kind, n] : all) {
    if (kind.rfind(kEventPrefix, 0) == 0) continue;
    std::int64_t dup = kind == "matmul" ? 2 : kind == "reduce" ? 1 : kind == "add" ? -2 : 0;
    EXPECT_EQ(get(w0, kind) + get(w1, kind), n + dup) << kind;
  }
  // The msa stack holds the attention with pair bias, the transition and
  // the outer product mean, so rank 0 carries the larger share.
  const double base = static_cast<double>(serial.workers[0].ops);
  const double r0 = bp.workers[0].ops / base, r1 = bp.workers[1].ops / base;
  RecordProperty("rank0_share", std::to_string(r0));
  RecordProperty("rank1_share", std::to_string(r1));
  EXPECT_LT(r0, 0.65);
  EXPECT_LT(r1, 0.40);
}

TEST(BranchParallelTest, RejectsOtherDegrees) {
  Mini s = mini(1);
  EXPECT_THROW(run_bp(s.params, s.feat, plan(1, 1, 1)), ConfigError);
  EXPECT_THROW(run_parallel(s.params, {s.feat}, plan(1, 3, 1)), ConfigError);
}

TEST(AxialParallelTest, MatchesSerial) {
  Mini s = mini();
  ParallelResult serial = run_parallel(s.params, {s.feat}, plan(1, 1, 1));
  for (int d : {2, 4}) {
    ParallelResult dap = run_dap(s.params, s.feat, plan(1, 1, d));
    expect_matches(dap, serial, 1e-5);
    EXPECT_NEAR(dap.replicas[0].loss, serial.replicas[0].loss, 1e-6);
    EXPECT_NO_THROW(dap.trace.check_consistency({1, 1, d}));
  }
}

TEST(AxialParallelTest, PerModuleCommCounts) {
  Mini s = mini(1);
  ParallelResult dap = run_dap(s.params, s.feat, plan(1, 1, 2));
  const CommTrace& t = dap.trace;
  EXPECT_EQ(t.count(Primitive::kAllToAll, {}, "msa_stack"), 4u);
  EXPECT_EQ(t.count(Primitive::kAllGather, {}, "msa_stack"), 1u);
  EXPECT_EQ(t.count(Primitive::kReduceScatter, {}, "msa_stack"), 1u);
  EXPECT_EQ(t.count(Primitive::kAllToAll, {}, "pair_stack"), 4u);
  EXPECT_EQ(t.count(Primitive::kAllGather, {}, "pair_stack"), 2u);
  EXPECT_EQ(t.count(Primitive::kReduceScatter, {}, "pair_stack"), 2u);
  EXPECT_EQ(t.count(Primitive::kReduceScatter, Phase::kFwd, "outer_product_mean"), 1u);
  EXPECT_EQ(t.count(Primitive::kAllGather, Phase::kBwd, "outer_product_mean"), 1u);
  std::size_t model = 0;
  for (const CommRecord& r : t.calls()) model += r.phase != Phase::kGradSync;
  EXPECT_EQ(model, 16u);
  EXPECT_EQ(t.count(Primitive::kAllReduce, Phase::kGradSync), 1u);
}

TEST(AxialParallelTest, RejectsIndivisibleExtents) {
  Mini s = mini(1);
  EXPECT_THROW(run_dap(s.params, s.feat, plan(1, 1, 3)), ConfigError);
}

TEST(HybridTest, DataParallelAveragesGradients) {
  Mini s = mini();
  Features other = Features::synthesize(s.cfg, 99);
  ParallelResult a = run_parallel(s.params, {s.feat}, plan(1, 1, 1));
  ParallelResult b = run_parallel(s.params, {other}, plan(1, 1, 1));
  for (auto [bp, tol] : {std::pair{1, 0.0}, std::pair{2, 1e-6}}) {
    ParallelResult dp = run_hybrid(s.params, {s.feat, other}, plan(2, bp, 1));
    for (const WorkerReport& w : dp.workers) {
      double worst = 0.0;
      for (std::size_t i = 0; i < w.grads.size(); ++i) {
        const auto& ga = a.workers[0].grads[i].data;
        const auto& gb = b.workers[0].grads[i].data;
        for (std::size_t k = 0; k < ga.size(); ++k) {
          worst = std::max(worst, double(std::abs(w.grads[i].data[k] - (ga[k] + gb[k]) / 2.0f)));
        }
      }
      EXPECT_LE(worst, tol) << "bp=" << bp << " rank " << w.rank;
    }
    // One fused AllReduce per DP group.
    std::set<int> groups;
    std::size_t dp_syncs = 0;
    for (const CommRecord& r : dp.trace.calls()) {
      if (r.axis == Axis::kDp && r.phase == Phase::kGradSync) {
        ++dp_syncs;
        groups.insert(r.group_id);
      }
    }
    EXPECT_EQ(dp_syncs, groups.size());
    EXPECT_EQ(groups.size(), static_cast<std::size_t>(bp));
  }
  EXPECT_THROW(run_hybrid(s.params, {s.feat}, plan(2, 1, 1)), ConfigError);
}

TEST(HybridTest, UnfusedSyncIsOneCollectivePerTensorAndSameBits) {
  Mini s = mini(1);
  Features other = Features::synthesize(s.cfg, 98);
  ParallelOptions o = plan(2, 1, 1);
  ParallelResult fused = run_hybrid(s.params, {s.feat, other}, o);
  o.fused_grad_sync = false;
  ParallelResult unfused = run_hybrid(s.params, {s.feat, other}, o);
  EXPECT_EQ(unfused.trace.count(Primitive::kAllReduce, Phase::kGradSync), s.params.vars().size());
  EXPECT_EQ(fused.trace.count(Primitive::kAllReduce, Phase::kGradSync), 1u);
  for (std::size_t i = 0; i < fused.workers[0].grads.size(); ++i) {
    EXPECT_EQ(fused.workers[0].grads[i].data, unfused.workers[0].grads[i].data);
  }
}

TEST(HybridTest, RunsAreDeterministic) {
  Mini s = mini(1);
  ParallelResult a = run_parallel(s.params, {s.feat}, plan(1, 2, 2));
  ParallelResult b = run_parallel(s.params, {s.feat}, plan(1, 2, 2));
  EXPECT_EQ(a.trace.csv(), b.trace.csv());
  for (std::size_t w = 0; w < a.workers.size(); ++w)
    for (std::size_t i = 0; i < a.workers[w].grads.size(); ++i)
      ASSERT_EQ(a.workers[w].grads[i].data, b.workers[w].grads[i].data);
  ParallelResult serial = run_parallel(s.params, {s.feat}, plan(1, 1, 1));
  expect_matches(a, serial, 1e-5);
}

TEST(HybridTest, RecomputeAndRecyclingUnderParallelism) {
  Mini s = mini();
  ParallelOptions base = plan(1, 1, 1);
  base.n_recycles = 2;
  ParallelResult serial = run_parallel(s.params, {s.feat}, base);
  for (auto [bp, dap] : {std::pair{2, 1}, std::pair{1, 2}}) {
    ParallelOptions o = base;
    o.grid = {1, bp, dap};
    ParallelResult plain = run_parallel(s.params, {s.feat}, o);
    o.exec.recompute = true;
    ParallelResult re = run_parallel(s.params, {s.feat}, o);
    expect_matches(plain, serial, 1e-5);
    for (std::size_t w = 0; w < re.workers.size(); ++w)
      for (std::size_t i = 0; i < re.workers[w].grads.size(); ++i)
        ASSERT_EQ(re.workers[w].grads[i].data, plain.workers[w].grads[i].data) << bp << dap;
  }
}

TEST(HybridTest, Bf16TransportHalvesEveryRecord) {
  Mini s = mini(1);
  ParallelOptions o = plan(1, 2, 1);
  ParallelResult f32 = run_bp(s.params, s.feat, o);
  o.exec.activation = DType::kBF16;
  ParallelResult bf = run_bp(s.params, s.feat, o);
  const auto a = f32.trace.records(), b = bf.trace.records();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i].bytes * 2, a[i].bytes) << i;
}

}  // namespace
}  // namespace evo
