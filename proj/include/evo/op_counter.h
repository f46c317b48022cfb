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
#include <string>
#include <string_view>

namespace evo {

// Per-thread tally of executed operator calls. One worker runs on one thread,
// so each worker's counts are independent.
class OpCounter {
 public:
  void count(std::string_view kind, std::int64_t n = 1);
  std::int64_t total() const { return total_; }
  std::int64_t get(std::string_view kind) const;
  const std::map<std::string, std::int64_t, std::less<>>& by_kind() const { return by_kind_; }
  void reset();

  static OpCounter& current();

 private:
  friend class OpCountSuspend;
  int suspended_ = 0;
  std::int64_t total_ = 0;
  std::map<std::string, std::int64_t, std::less<>> by_kind_;
};

// Events tallied in the counter but not counted as compute (block entries,
// recycling iterations).
inline constexpr std::string_view kEventPrefix = "event:";

void count_event(std::string_view name);

// Kernels called inside a fused operator are not tallied separately; the
// fused operator counts itself once.
class OpCountSuspend {
 public:
  OpCountSuspend() { ++OpCounter::current().suspended_; }
  ~OpCountSuspend() { --OpCounter::current().suspended_; }
  OpCountSuspend(const OpCountSuspend&) = delete;
  OpCountSuspend& operator=(const OpCountSuspend&) = delete;
};

}  // namespace evo
