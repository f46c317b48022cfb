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
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "evo/tensor.h"

namespace evo {

struct VarNode {
  Tensor value;
  std::int64_t id = 0;
  bool requires_grad = false;
  std::string name;
};

// Handle to a value that may participate in differentiation. Copies of a Var
// share the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Raw access for optimizers and finite-difference probing; never recorded.
  Tensor& mutable_value() { return node_->value; }
  std::int64_t id() const { return node_->id; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::string& name() const { return node_->name; }
  // Same buffer, cut from the tape.
  Var detach() const;

 private:
  std::shared_ptr<VarNode> node_;
};

class Tape;

class BackwardContext {
 public:
  // Gradient reaching output `k`, or nullptr if none did.
  const Tensor* grad_output(std::size_t k = 0) const;
  const Tensor& saved(std::size_t i) const;
  // Drops saved tensor `i` early; later saved(i) calls see an empty tensor.
  void release(std::size_t i);
  bool needs_grad(std::size_t input) const;
  void accumulate(std::size_t input, Tensor grad);
  // Routes a gradient for a leaf that is not an input of this node (the
  // parameters touched inside a recomputed region).
  void accumulate_leaf(std::int64_t leaf_id, Tensor grad);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::size_t node_;
  std::vector<const Tensor*> grads_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

struct TapeNode {
  std::string kind;
  std::vector<std::int64_t> inputs;
  std::vector<bool> input_requires_grad;
  std::vector<std::int64_t> outputs;
  // Buffers retained for the backward pass.
  std::vector<Tensor> saved;
  BackwardFn backward;
  // Collective nodes must run their backward on every group member even when
  // no gradient reached them locally.
  bool always_run = false;
};

// Eager reverse-mode tape. Nodes are appended in execution order; backward
// walks them in exact reverse order and consumes the tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeNode node);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  bool consumed() const { return consumed_; }

  // Scalar loss; returns gradients of `params` (zeros where unreached).
  std::vector<Tensor> backward(const Var& loss, std::span<const Var> params);
  // Multi-seed form: each (output, upstream gradient) pair starts the sweep.
  void backward_from(std::span<const std::pair<Var, Tensor>> seeds);

  const Tensor* grad(std::int64_t id) const;
  Tensor take_grad(std::int64_t id);
  // Leaves not listed here, and not produced on this tape, forward their
  // gradients to `sink` instead of the local store.
  void set_leaf_sink(std::function<void(std::int64_t, Tensor)> sink,
                     std::unordered_set<std::int64_t> local_leaves);

  // Distinct retained buffers of nodes [begin, end).
  std::unordered_set<std::uint64_t> retained_buffers(std::size_t begin, std::size_t end) const;

  static Tape* current();

 private:
  friend class BackwardContext;
  friend class TapeGuard;
  void accumulate(std::int64_t id, Tensor grad);
  void sweep();

  std::vector<TapeNode> nodes_;
  std::unordered_set<std::int64_t> produced_;
  std::unordered_map<std::int64_t, Tensor> grads_;
  std::function<void(std::int64_t, Tensor)> sink_;
  std::unordered_set<std::int64_t> local_leaves_;
  bool consumed_ = false;
  static Tape*& bound();
};

// Makes `tape` (or no tape: nullptr, i.e. no recording) current for the
// calling thread within this object's lifetime.
class TapeGuard {
 public:
  explicit TapeGuard(Tape* tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

// True while the calling thread is inside a backward sweep.
bool in_backward();

// True when the calling thread records and any of `inputs` requires grad.
bool should_record(std::initializer_list<const Var*> inputs);
bool should_record(std::span<const Var> inputs);

// Wraps `out` in a Var and, when recording, appends a node for it.
Var record_op(Tensor out, std::string kind, std::span<const Var> inputs,
              std::vector<Tensor> saved, BackwardFn backward, bool always_run = false);

// Multi-output form. `force` records even when no input requires grad (used
// by collectives, whose backward must run on every group member).
std::vector<Var> record_multi(std::vector<Tensor> outs, std::string kind,
                              std::span<const Var> inputs, std::vector<Tensor> saved,
                              BackwardFn backward, bool always_run = false, bool force = false);

struct GradCheckOptions {
  float step = 1e-3f;
  // Coordinates probed; tensors with more elements are randomly subsampled.
  std::size_t max_coords = 64;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  // max_i |fd_i - ad_i| / max(max_j |ad_j|, max_j |fd_j|), over the probed
  // coordinates.
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  // Probes whose ±h evaluations took different relu branches; replaced by
  // further coordinates.
  std::size_t kinks_skipped = 0;
};

// Central-difference check of d f / d x against the tape gradient. `f` must
// return a scalar.
GradCheckResult grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                           const GradCheckOptions& options = {});
// Same, probing a leaf captured by `f` by perturbing its value in place.
GradCheckResult grad_check_leaf(const std::function<Var()>& f, Var leaf,
                                const GradCheckOptions& options = {});

}  // namespace evo
