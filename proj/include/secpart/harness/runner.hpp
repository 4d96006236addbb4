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

// Scenario execution and the structured report every run produces.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "secpart/harness/scenario.hpp"

namespace secpart::harness {

struct Verdict {
  std::string name;
  std::string check;
  bool pass = false;
  std::string detail;
};

/// All step counts are simulated machine steps, never wall-clock time.
struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  Step steps = 0;
  std::vector<Verdict> verdicts;
  std::map<std::string, std::map<std::string, Step>> phases;
  std::map<std::string, std::uint64_t> throughput;
  std::vector<Fault> faults;
  std::vector<std::string> errors;
  /// Extra numbers produced by benchmarks.
  std::map<std::string, double> metrics;
  /// CSV trace records, one per line.
  std::vector<std::string> trace;

  bool all_pass() const;
  const Verdict* verdict(const std::string& name) const;
  std::string to_json(int indent = 2) const;
  std::string trace_csv() const;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the scenario seed
  Step max_steps = 100'000'000;
};

RunReport run_scenario(const Scenario& scenario, const RunOptions& options = {});

/// Judges the scenario's assertions again from a stored trace alone, without
/// the machine. Verdict lines in the trace are ignored.
std::vector<Verdict> replay_verdicts(const Scenario& scenario, const std::vector<std::string>& trace);

/// Attacks an injected fault can mount from inside an open domain.
enum class Attack : std::uint8_t { AppBug, AppVirus, DriverBug, DriverVirus };

std::string_view to_string(Attack a);
Attack parse_attack(std::string_view text);

}  // namespace secpart::harness
