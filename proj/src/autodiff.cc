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

#include "evo/autodiff.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "evo/errors.h"
#include "evo/ops.h"
#include "evo/prng.h"

namespace evo {
namespace {

std::int64_t next_var_id() {
  static std::atomic<std::int64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

Var::Var(Tensor value, bool requires_grad, std::string name)
    : node_(std::make_shared<VarNode>()) {
  node_->value = std::move(value);
  node_->id = next_var_id();
  node_->requires_grad = requires_grad;
  node_->name = std::move(name);
}

Var Var::detach() const { return Var(node_->value.shared(), false, node_->name); }

const Tensor* BackwardContext::grad_output(std::size_t k) const { return grads_.at(k); }

const Tensor& BackwardContext::saved(std::size_t i) const {
  return tape_.nodes_[node_].saved.at(i);
}

void BackwardContext::release(std::size_t i) { tape_.nodes_[node_].saved.at(i) = Tensor(); }

bool BackwardContext::needs_grad(std::size_t input) const {
  return tape_.nodes_[node_].input_requires_grad.at(input);
}

void BackwardContext::accumulate(std::size_t input, Tensor grad) {
  const TapeNode& n = tape_.nodes_[node_];
  if (!n.input_requires_grad.at(input)) return;
  tape_.accumulate(n.inputs[input], std::move(grad));
}

void BackwardContext::accumulate_leaf(std::int64_t leaf_id, Tensor grad) {
  tape_.accumulate(leaf_id, std::move(grad));
}

namespace {
thread_local int backward_depth = 0;

struct BackwardDepth {
  BackwardDepth() { ++backward_depth; }
  ~BackwardDepth() { --backward_depth; }
};
}  // namespace

bool in_backward() { return backward_depth > 0; }

Tape*& Tape::bound() {
  thread_local Tape* ptr = nullptr;
  return ptr;
}

Tape* Tape::current() { return bound(); }

void Tape::record(TapeNode node) {
  if (consumed_) throw ContractError("recording onto a consumed tape");
  for (std::int64_t id : node.outputs) produced_.insert(id);
  nodes_.push_back(std::move(node));
}

void Tape::accumulate(std::int64_t id, Tensor grad) {
  if (grad.dtype() != DType::kF32) grad = ops::widen(grad);
  if (sink_ && !produced_.contains(id) && !local_leaves_.contains(id)) {
    sink_(id, std::move(grad));
    return;
  }
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    grads_.emplace(id, std::move(grad));
  } else {
    if (it->second.shape() != grad.shape()) {
      throw DimensionError("gradient shape " + shape_str(grad.shape()) + " does not match " +
                           shape_str(it->second.shape()));
    }
    // Stored gradients may alias another node's buffer; never write through.
    if (it->second.buffer().use_count() > 1) {
      Tensor own(it->second);
      it->second = std::move(own);
    }
    ops::add_inplace(it->second, grad);
  }
}

void Tape::set_leaf_sink(std::function<void(std::int64_t, Tensor)> sink,
                         std::unordered_set<std::int64_t> local_leaves) {
  sink_ = std::move(sink);
  local_leaves_ = std::move(local_leaves);
}

std::vector<Tensor> Tape::backward(const Var& loss, std::span<const Var> params) {
  if (loss.value().numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  std::pair<Var, Tensor> seed{loss, Tensor::full(loss.shape(), 1.0f)};
  backward_from(std::span(&seed, 1));
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params) {
    auto it = grads_.find(p.id());
    if (it != grads_.end()) {
      out.push_back(std::move(it->second));
      grads_.erase(it);
    } else {
      out.push_back(Tensor(p.shape()));
    }
  }
  return out;
}

void Tape::backward_from(std::span<const std::pair<Var, Tensor>> seeds) {
  if (consumed_) throw ContractError("tape already consumed by a previous backward");
  consumed_ = true;
  BackwardDepth depth;
  TapeGuard no_record(nullptr);
  LedgerScope scope("backward");
  for (const auto& [var, g] : seeds) {
    if (!var.defined() || !var.requires_grad()) continue;
    if (g.shape() != var.shape()) {
      throw DimensionError("seed gradient " + shape_str(g.shape()) + " for output " +
                           shape_str(var.shape()));
    }
    Tensor copy(g.shape());
    std::copy(g.data().begin(), g.data().end(), copy.data().begin());
    accumulate(var.id(), std::move(copy));
  }
  sweep();
}

void Tape::sweep() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    TapeNode& node = nodes_[i];
    BackwardContext ctx(*this, i);
    bool any = false;
    for (std::int64_t out : node.outputs) {
      auto it = grads_.find(out);
      ctx.grads_.push_back(it == grads_.end() ? nullptr : &it->second);
      any = any || it != grads_.end();
    }
    if (any || node.always_run) node.backward(ctx);
    for (std::int64_t out : node.outputs) grads_.erase(out);
    node.saved.clear();
    node.backward = nullptr;
  }
}

const Tensor* Tape::grad(std::int64_t id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor Tape::take_grad(std::int64_t id) {
  auto it = grads_.find(id);
  if (it == grads_.end()) return {};
  Tensor g = std::move(it->second);
  grads_.erase(it);
  return g;
}

std::unordered_set<std::uint64_t> Tape::retained_buffers(std::size_t begin,
                                                         std::size_t end) const {
  std::unordered_set<std::uint64_t> ids;
  for (std::size_t i = begin; i < end && i < nodes_.size(); ++i) {
    for (const Tensor& t : nodes_[i].saved) {
      if (t.defined()) ids.insert(t.buffer_id());
    }
  }
  return ids;
}

TapeGuard::TapeGuard(Tape* tape) : previous_(Tape::bound()) { Tape::bound() = tape; }

TapeGuard::~TapeGuard() { Tape::bound() = previous_; }

bool should_record(std::initializer_list<const Var*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Var* v) { return v != nullptr && v->requires_grad(); });
}

bool should_record(std::span<const Var> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Var& v) { return v.requires_grad(); });
}

Var record_op(Tensor out, std::string kind, std::span<const Var> inputs,
              std::vector<Tensor> saved, BackwardFn backward, bool always_run) {
  if (!should_record(inputs)) return Var(std::move(out), false);
  Var result(std::move(out), true);
  TapeNode node;
  node.kind = std::move(kind);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    node.inputs.push_back(v.defined() ? v.id() : 0);
    node.input_requires_grad.push_back(v.requires_grad());
  }
  node.outputs.push_back(result.id());
  node.saved = std::move(saved);
  node.backward = std::move(backward);
  node.always_run = always_run;
  Tape::current()->record(std::move(node));
  return result;
}

std::vector<Var> record_multi(std::vector<Tensor> outs, std::string kind,
                              std::span<const Var> inputs, std::vector<Tensor> saved,
                              BackwardFn backward, bool always_run, bool force) {
  const bool rec = Tape::current() != nullptr && (force || should_record(inputs));
  std::vector<Var> result;
  result.reserve(outs.size());
  for (Tensor& t : outs) result.emplace_back(std::move(t), rec);
  if (!rec) return result;
  TapeNode node;
  node.kind = std::move(kind);
  for (const Var& v : inputs) {
    node.inputs.push_back(v.defined() ? v.id() : 0);
    node.input_requires_grad.push_back(v.requires_grad());
  }
  for (const Var& v : result) node.outputs.push_back(v.id());
  node.saved = std::move(saved);
  node.backward = std::move(backward);
  node.always_run = always_run;
  Tape::current()->record(std::move(node));
  return result;
}

namespace {

std::vector<std::size_t> probe_coords(std::int64_t numel, const GradCheckOptions& options) {
  std::vector<std::size_t> coords(static_cast<std::size_t>(numel));
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() <= options.max_coords) return coords;
  // Reproducible shuffle. The first max_coords are the primary probes (in
  // index order); the rest replace probes rejected at a kink.
  SplitMix64 rng(options.seed);
  for (std::size_t i = 0; i + 1 < coords.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (coords.size() - i));
    std::swap(coords[i], coords[j]);
  }
  std::sort(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(options.max_coords));
  return coords;
}

GradCheckResult compare(const std::vector<double>& fd, const std::vector<double>& ad) {
  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    scale = std::max({scale, std::fabs(fd[i]), std::fabs(ad[i])});
    worst = std::max(worst, std::fabs(fd[i] - ad[i]));
  }
  GradCheckResult r;
  r.coords = fd.size();
  r.max_rel_error = scale == 0.0 ? worst : worst / scale;
  if (std::isnan(worst) || std::isnan(scale)) r.max_rel_error = std::nan("");
  return r;
}

}  // namespace

GradCheckResult grad_check_leaf(const std::function<Var()>& f, Var leaf,
                                const GradCheckOptions& options) {
  if (!(options.step > 0.0f)) throw ContractError("grad_check step must be positive");
  Tensor analytic;
  {
    Tape tape;
    TapeGuard guard(&tape);
    Var loss = f();
    Var params[] = {leaf};
    analytic = std::move(tape.backward(loss, params)[0]);
  }
  const auto coords = probe_coords(leaf.value().numel(), options);
  std::vector<double> fd, ad;
  TapeGuard no_record(nullptr);
  auto values = leaf.mutable_value().data();
  ops::KinkWatch watch;
  std::size_t kinks = 0;
  for (std::size_t c : coords) {
    if (fd.size() == options.max_coords) break;
    const float original = values[c];
    const float up = original + options.step;
    const float down = original - options.step;
    values[c] = up;
    watch.reset();
    const double plus = f().value().item();
    const std::uint64_t up_branch = watch.digest();
    values[c] = down;
    watch.reset();
    const double minus = f().value().item();
    const std::uint64_t down_branch = watch.digest();
    values[c] = original;
    // A relu flipped between x-h and x+h: the difference quotient spans a
    // kink and says nothing about the derivative at x.
    if (up_branch != down_branch) {
      ++kinks;
      continue;
    }
    fd.push_back((plus - minus) / (static_cast<double>(up) - static_cast<double>(down)));
    ad.push_back(analytic.data()[c]);
  }
  GradCheckResult r = compare(fd, ad);
  r.kinks_skipped = kinks;
  return r;
}

GradCheckResult grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                           const GradCheckOptions& options) {
  Var leaf(Tensor(x), true);
  return grad_check_leaf([&] { return f(leaf); }, leaf, options);
}

}  // namespace evo
