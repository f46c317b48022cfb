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
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evo {

using Shape = std::vector<std::int64_t>;

enum class LedgerEventKind : std::uint8_t { kAlloc, kFree };

struct LedgerEvent {
  LedgerEventKind kind;
  std::uint64_t id;
  std::int64_t bytes;
  std::string scope;
  std::int64_t step;
};

// Snapshot of the live buffer shapes at a named point of execution.
struct LedgerProbe {
  std::string label;
  std::string scope;
  std::vector<Shape> live_shapes;

  int count(const Shape& shape) const;
};

// Records every buffer allocation and release of one worker. Buffers are
// attributed to the scope path active at allocation time ("a/b/c"); each path
// segment keeps its own live and peak byte counters so per-module peaks can
// be read back (segment "logits" covers every buffer allocated under any
// scope named "logits").
class MemoryLedger {
 public:
  MemoryLedger() = default;
  MemoryLedger(const MemoryLedger&) = delete;
  MemoryLedger& operator=(const MemoryLedger&) = delete;

  std::uint64_t on_alloc(std::int64_t bytes, const Shape& shape);
  void on_free(std::uint64_t id);
  // Moves a live buffer to the current scope path, for a buffer that is
  // reused in place for a different role.
  void reattribute(std::uint64_t id);

  std::int64_t live_bytes() const;
  std::int64_t peak_bytes() const;
  std::int64_t segment_live(std::string_view segment) const;
  std::int64_t segment_peak(std::string_view segment) const;
  std::size_t live_buffers() const;
  int live_count(const Shape& shape) const;
  // Buffers allocated since construction.
  std::int64_t allocations() const;

  // Peaks restart from the current live values.
  void reset_peak();
  void set_step(std::int64_t step);
  std::int64_t step() const { return step_; }

  void push_scope(std::string name);
  void pop_scope();
  std::string scope_path() const;

  void set_record_events(bool on) { record_events_ = on; }
  const std::vector<LedgerEvent>& events() const { return events_; }
  void clear_events() { events_.clear(); }
  // One JSON object per line: {"ev","id","bytes","scope","step"}.
  void write_jsonl(std::ostream& os) const;

  void set_probes_enabled(bool on) { probes_enabled_ = on; }
  bool probes_enabled() const { return probes_enabled_; }
  void probe(std::string label);
  const std::vector<LedgerProbe>& probes() const { return probes_; }
  void clear_probes() { probes_.clear(); }

  // Ledger bound to the calling thread. Each thread starts with its own.
  static MemoryLedger& current();

 private:
  struct Live {
    std::int64_t bytes;
    Shape shape;
    const std::vector<int>* segments;
  };
  struct SegmentStat {
    std::int64_t live = 0;
    std::int64_t peak = 0;
  };

  const std::vector<int>* segments_for(const std::string& path);

  mutable std::mutex mu_;
  std::uint64_t next_id_ = 1;
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
  std::int64_t step_ = 0;
  std::vector<std::string> scopes_;
  std::unordered_map<std::uint64_t, Live> live_map_;
  std::map<std::string, int, std::less<>> segment_index_;
  std::vector<SegmentStat> segment_stats_;
  std::unordered_map<std::string, std::vector<int>> path_cache_;
  std::vector<LedgerEvent> events_;
  bool record_events_ = false;
  bool probes_enabled_ = false;
  std::vector<LedgerProbe> probes_;

  friend class LedgerBinding;
  static MemoryLedger*& bound();
};

// Binds `ledger` as the calling thread's current ledger for this object's
// lifetime.
class LedgerBinding {
 public:
  explicit LedgerBinding(MemoryLedger& ledger);
  ~LedgerBinding();
  LedgerBinding(const LedgerBinding&) = delete;
  LedgerBinding& operator=(const LedgerBinding&) = delete;

 private:
  MemoryLedger* previous_;
};

class LedgerScope {
 public:
  explicit LedgerScope(std::string name);
  ~LedgerScope();
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

 private:
  MemoryLedger* ledger_;
};

}  // namespace evo
