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

#include "evo/ledger.h"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "evo/errors.h"

namespace evo {

int LedgerProbe::count(const Shape& shape) const {
  return static_cast<int>(std::count(live_shapes.begin(), live_shapes.end(), shape));
}

const std::vector<int>* MemoryLedger::segments_for(const std::string& path) {
  auto it = path_cache_.find(path);
  if (it != path_cache_.end()) return &it->second;
  std::vector<int> ids;
  std::size_t start = 0;
  while (start <= path.size() && !path.empty()) {
    std::size_t slash = path.find('/', start);
    if (slash == std::string::npos) slash = path.size();
    std::string seg = path.substr(start, slash - start);
    if (!seg.empty()) {
      auto [pos, inserted] =
          segment_index_.emplace(seg, static_cast<int>(segment_stats_.size()));
      if (inserted) segment_stats_.emplace_back();
      if (std::find(ids.begin(), ids.end(), pos->second) == ids.end()) {
        ids.push_back(pos->second);
      }
    }
    start = slash + 1;
  }
  return &path_cache_.emplace(path, std::move(ids)).first->second;
}

std::uint64_t MemoryLedger::on_alloc(std::int64_t bytes, const Shape& shape) {
  std::lock_guard lock(mu_);
  const std::uint64_t id = next_id_++;
  std::string path = scope_path();
  const std::vector<int>* segs = segments_for(path);
  live_ += bytes;
  peak_ = std::max(peak_, live_);
  for (int s : *segs) {
    SegmentStat& st = segment_stats_[s];
    st.live += bytes;
    st.peak = std::max(st.peak, st.live);
  }
  live_map_.emplace(id, Live{bytes, shape, segs});
  if (record_events_) {
    events_.push_back({LedgerEventKind::kAlloc, id, bytes, std::move(path), step_});
  }
  return id;
}

void MemoryLedger::on_free(std::uint64_t id) {
  std::lock_guard lock(mu_);
  auto it = live_map_.find(id);
  if (it == live_map_.end()) {
    throw LedgerError("free of unknown buffer id " + std::to_string(id));
  }
  const Live& entry = it->second;
  live_ -= entry.bytes;
  for (int s : *entry.segments) segment_stats_[s].live -= entry.bytes;
  if (record_events_) {
    events_.push_back({LedgerEventKind::kFree, id, entry.bytes, scope_path(), step_});
  }
  live_map_.erase(it);
}

void MemoryLedger::reattribute(std::uint64_t id) {
  std::lock_guard lock(mu_);
  auto it = live_map_.find(id);
  if (it == live_map_.end()) {
    throw LedgerError("reattribute of unknown buffer id " + std::to_string(id));
  }
  Live& entry = it->second;
  for (int s : *entry.segments) segment_stats_[s].live -= entry.bytes;
  entry.segments = segments_for(scope_path());
  for (int s : *entry.segments) {
    SegmentStat& st = segment_stats_[s];
    st.live += entry.bytes;
    st.peak = std::max(st.peak, st.live);
  }
}

std::int64_t MemoryLedger::live_bytes() const {
  std::lock_guard lock(mu_);
  return live_;
}

std::int64_t MemoryLedger::peak_bytes() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::int64_t MemoryLedger::segment_live(std::string_view segment) const {
  std::lock_guard lock(mu_);
  auto it = segment_index_.find(segment);
  return it == segment_index_.end() ? 0 : segment_stats_[it->second].live;
}

std::int64_t MemoryLedger::segment_peak(std::string_view segment) const {
  std::lock_guard lock(mu_);
  auto it = segment_index_.find(segment);
  return it == segment_index_.end() ? 0 : segment_stats_[it->second].peak;
}

std::size_t MemoryLedger::live_buffers() const {
  std::lock_guard lock(mu_);
  return live_map_.size();
}

int MemoryLedger::live_count(const Shape& shape) const {
  std::lock_guard lock(mu_);
  int n = 0;
  for (const auto& [id, entry] : live_map_) n += entry.shape == shape ? 1 : 0;
  return n;
}

std::int64_t MemoryLedger::allocations() const {
  std::lock_guard lock(mu_);
  return static_cast<std::int64_t>(next_id_ - 1);
}

void MemoryLedger::reset_peak() {
  std::lock_guard lock(mu_);
  peak_ = live_;
  for (SegmentStat& st : segment_stats_) st.peak = st.live;
}

void MemoryLedger::set_step(std::int64_t step) {
  std::lock_guard lock(mu_);
  step_ = step;
}

void MemoryLedger::push_scope(std::string name) { scopes_.push_back(std::move(name)); }

void MemoryLedger::pop_scope() {
  if (scopes_.empty()) throw LedgerError("scope stack underflow");
  scopes_.pop_back();
}

std::string MemoryLedger::scope_path() const {
  std::string path;
  for (const std::string& s : scopes_) {
    if (!path.empty()) path += '/';
    path += s;
  }
  return path;
}

void MemoryLedger::write_jsonl(std::ostream& os) const {
  std::lock_guard lock(mu_);
  for (const LedgerEvent& ev : events_) {
    nlohmann::ordered_json j;
    j["ev"] = ev.kind == LedgerEventKind::kAlloc ? "alloc" : "free";
    j["id"] = ev.id;
    j["bytes"] = ev.bytes;
    j["scope"] = ev.scope;
    j["step"] = ev.step;
    os << j.dump() << '\n';
  }
}

void MemoryLedger::probe(std::string label) {
  if (!probes_enabled_) return;
  std::lock_guard lock(mu_);
  LedgerProbe p{std::move(label), scope_path(), {}};
  p.live_shapes.reserve(live_map_.size());
  for (const auto& [id, entry] : live_map_) p.live_shapes.push_back(entry.shape);
  probes_.push_back(std::move(p));
}

MemoryLedger*& MemoryLedger::bound() {
  thread_local MemoryLedger* ptr = nullptr;
  return ptr;
}

MemoryLedger& MemoryLedger::current() {
  MemoryLedger* ptr = bound();
  if (ptr != nullptr) return *ptr;
  thread_local MemoryLedger fallback;
  return fallback;
}

LedgerBinding::LedgerBinding(MemoryLedger& ledger) : previous_(MemoryLedger::bound()) {
  MemoryLedger::bound() = &ledger;
}

LedgerBinding::~LedgerBinding() { MemoryLedger::bound() = previous_; }

LedgerScope::LedgerScope(std::string name) : ledger_(&MemoryLedger::current()) {
  ledger_->push_scope(std::move(name));
}

LedgerScope::~LedgerScope() { ledger_->pop_scope(); }

}  // namespace evo
