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

#include "evo/op_counter.h"

namespace evo {

void OpCounter::count(std::string_view kind, std::int64_t n) {
  if (suspended_ > 0) return;
  if (kind.substr(0, kEventPrefix.size()) != kEventPrefix) total_ += n;
  auto it = by_kind_.find(kind);
  if (it == by_kind_.end()) {
    by_kind_.emplace(std::string(kind), n);
  } else {
    it->second += n;
  }
}

std::int64_t OpCounter::get(std::string_view kind) const {
  auto it = by_kind_.find(kind);
  return it == by_kind_.end() ? 0 : it->second;
}

void OpCounter::reset() {
  total_ = 0;
  by_kind_.clear();
}

OpCounter& OpCounter::current() {
  thread_local OpCounter counter;
  return counter;
}

void count_event(std::string_view name) {
  std::string key(kEventPrefix);
  key += name;
  OpCounter::current().count(key);
}

}  // namespace evo
