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

// Scenario files: a platform, domains, processes, a timed event script and
// the assertions judged at the end of the run.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "secpart/harness/platform.hpp"

namespace secpart::harness {

enum class ScenarioMode : std::uint8_t { Amp, Smp, Ipc };

std::string_view to_string(ScenarioMode m);

/// Verb or check arguments, scalars as text, sequences comma-joined.
using Args = std::map<std::string, std::string>;

struct Event {
  std::optional<Step> at;  // run the machine up to this step first
  std::string verb;
  std::string label;
  Args args;
  int line = 0;
};

struct Assertion {
  std::string name;
  std::string check;
  Args args;
  int line = 0;
};

struct ProcessSpec {
  std::string name;
  ProcessorId proc;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  ScenarioMode mode = ScenarioMode::Amp;
  PlatformSpec platform;
  std::vector<ProcessSpec> processes;
  std::vector<Event> events;
  std::vector<Assertion> assertions;
};

/// Throws Error(Errc::Parse) with "line L, column C" for malformed text and
/// Error(Errc::Validation) naming the offending entity.
Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
Scenario load_scenario(const std::string& path);
/// Semantic checks shared by the parser and programmatic scenarios.
void validate(const Scenario& s);

std::uint64_t arg_u64(const Args& a, const std::string& key);
std::uint64_t arg_u64(const Args& a, const std::string& key, std::uint64_t fallback);
std::string arg_str(const Args& a, const std::string& key, const std::string& fallback = {});
std::vector<std::string> arg_list(const Args& a, const std::string& key);

}  // namespace secpart::harness
