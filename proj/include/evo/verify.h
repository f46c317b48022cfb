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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evo/config.h"

namespace evo {

struct SuiteResult {
  std::string name;
  bool passed = false;
  // Worst observed value against its bound; both 0 for exact suites.
  double worst = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Every tolerance is multiplied by `tolerance_scale`; the CLI's self-test
// passes 0 so that toleranced suites must fail.
std::vector<SuiteResult> run_verify(const RunConfig& cfg, double tolerance_scale = 1.0);

// {"passed": bool, "failures": [names]}
nlohmann::json verify_summary(const std::vector<SuiteResult>& results);

}  // namespace evo
