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

// sim: run scenario files, the attack suite and the benchmarks.

#include <fstream>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "secpart/harness/scenario.hpp"
#include "secpart/harness/suite.hpp"

using namespace secpart;
using namespace secpart::harness;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  out << text;
}

int emit(const RunReport& r, const std::string& trace, const std::string& report) {
  for (const auto& v : r.verdicts)
    std::cout << fmt::format("{} {}: {}\n", v.pass ? "PASS" : "FAIL", v.name, v.detail);
  for (const auto& e : r.errors) std::cout << "error: " << e << "\n";
  for (const auto& [k, v] : r.metrics) std::cout << fmt::format("{} = {:.2f}\n", k, v);
  std::cout << fmt::format("{} simulated steps, {}\n", r.steps, r.all_pass() ? "all assertions pass" : "FAILED");
  if (!trace.empty()) write_file(trace, r.trace_csv());
  if (!report.empty()) write_file(report, r.to_json(2) + "\n");
  return r.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"secpart machine simulator"};
  app.require_subcommand(1);

  std::string scenario, trace, report, kind;
  std::optional<std::uint64_t> seed;
  std::uint64_t max_steps = RunOptions{}.max_steps;
  std::uint64_t suite_seed = 0;

  auto* run = app.add_subcommand("run", "Run a scenario file");
  run->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--max-steps", max_steps, "Step budget");
  run->add_option("--trace", trace, "Write the CSV trace here");
  run->add_option("--report", report, "Write the JSON report here");

  auto* attack = app.add_subcommand("attack", "Run the four-row attack suite");
  attack->add_option("--seed", suite_seed, "Seed");
  attack->add_option("--trace", trace, "Write the CSV trace here");
  attack->add_option("--report", report, "Write the JSON report here");

  auto* bench_cmd = app.add_subcommand("bench", "Step-count benchmarks");
  bench_cmd->add_option("kind", kind, "ipc, uds, transition or throughput")
      ->required()
      ->check(CLI::IsMember(kBenchKinds));
  bench_cmd->add_option("--seed", suite_seed, "Seed");
  bench_cmd->add_option("--report", report, "Write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      RunOptions opts;
      opts.seed = seed;
      opts.max_steps = max_steps;
      return emit(run_scenario(load_scenario(scenario), opts), trace, report);
    }
    if (*attack) return emit(attack_suite(suite_seed).summary, trace, report);
    return emit(bench(kind, suite_seed), trace, report);
  } catch (const Error& e) {
    std::cerr << fmt::format("{}: {}\n", to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}
