/*
 * Copyright 2026 The secpart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Canned runs: the four-row attack suite and the step-count benchmarks.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "secpart/harness/runner.hpp"

namespace secpart::harness {

/// Scenario text for one attack row, injected into the untrusted domain.
std::string attack_scenario_text(Attack attack, std::uint64_t seed = 0);

/// One verdict per row, named after the attack, with detail "Contained" or
/// the failed checks. Per-row reports are kept in `rows`.
struct AttackSuiteReport {
  RunReport summary;
  std::vector<RunReport> rows;
};
AttackSuiteReport attack_suite(std::uint64_t seed = 0);

inline const std::vector<std::string> kBenchKinds{"ipc", "uds", "transition", "throughput"};

/// Throws Error(Errc::Validation) for an unknown kind.
RunReport bench(const std::string& kind, std::uint64_t seed = 0);

}  // namespace secpart::harness
