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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include <fmt/format.h>

#include "json.hpp"
#include "secpart/harness/suite.hpp"

using namespace secpart;
using namespace secpart::harness;

namespace {

const std::filesystem::path kRoot{SECPART_SOURCE_DIR};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::filesystem::path> scenario_files() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(kRoot / "scenarios"))
    if (e.path().extension() == ".yaml") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string error_text(const std::string& yaml) {
  try {
    parse_scenario(yaml, "t.yaml");
  } catch (const Error& e) {
    return fmt::format("{}|{}", to_string(e.code()), e.what());
  }
  return "accepted";
}

const char* kMinimal = R"(scenario: minimal
platform: {mode: amp, processors: 2}
domains:
  - {name: base, kind: base}
  - {name: A, kind: trusted}
events:
  - {verb: run, steps: 100}
assertions:
  - {name: clean, check: no_faults}
)";

}  // namespace

TEST_CASE("malformed file reports line and column") {
  const auto text = error_text(slurp(kRoot / "tests/data/malformed.yaml"));
  CHECK(text.rfind("ParseError|", 0) == 0);
  CHECK(text.find("t.yaml: line ") != std::string::npos);
  CHECK(text.find("column") != std::string::npos);
  CHECK_THROWS_AS(load_scenario((kRoot / "tests/data/missing.yaml").string()), Error);
}

TEST_CASE("validation names the offending entity") {
  CHECK(error_text(kMinimal) == "accepted");
  auto with = [](const std::string& from, const std::string& to) {
    std::string s = kMinimal;
    s.replace(s.find(from), from.size(), to);
    return error_text(s);
  };
  CHECK(with("{verb: run, steps: 100}", "{verb: switch, proc: 1, domain: Z}").find("'Z'") != std::string::npos);
  CHECK(with("{verb: run, steps: 100}", "{verb: explode}").find("explode") != std::string::npos);
  CHECK(with("{verb: run, steps: 100}", "{verb: switch, proc: 7, domain: A}").find("7") != std::string::npos);
  CHECK(with("{name: A, kind: trusted}", "{name: A, kind: base}").rfind("ValidationError|", 0) == 0);
  CHECK(with("{name: A, kind: trusted}", "{name: A, kind: royal}").find("royal") != std::string::npos);
  CHECK(with("check: no_faults", "check: vibes").find("vibes") != std::string::npos);
  CHECK(with("scenario: minimal", "scenario: minimal\nextras: 1").find("extras") != std::string::npos);
  CHECK(with("{verb: run, steps: 100}", "{verb: sem_up, process: p, key: 1}").rfind("ValidationError|", 0) == 0);
}

TEST_CASE("every bundled scenario passes and replays from its trace") {
  const auto files = scenario_files();
  REQUIRE(files.size() >= 10);
  for (const auto& f : files) {
    CAPTURE(f.filename().string());
    const auto sc = load_scenario(f.string());
    const auto rep = run_scenario(sc);
    for (const auto& v : rep.verdicts) {
      CAPTURE(v.name);
      CAPTURE(v.detail);
      CHECK(v.pass);
    }
    REQUIRE(rep.verdicts.size() == sc.assertions.size());
    const auto replayed = replay_verdicts(sc, rep.trace);
    for (std::size_t i = 0; i < replayed.size(); ++i) {
      CAPTURE(replayed[i].name);
      CHECK(replayed[i].pass == rep.verdicts[i].pass);
    }
  }
}

TEST_CASE("replay disagrees with a tampered trace") {
  const auto sc = load_scenario((kRoot / "scenarios/attack_driver_bug.yaml").string());
  auto rep = run_scenario(sc);
  auto trace = rep.trace;
  for (auto& line : trace)
    if (line.rfind("fault,", 0) == 0) line.replace(line.find(",3,"), 3, ",0,");
  const auto replayed = replay_verdicts(sc, trace);
  bool base_flagged = false;
  for (const auto& v : replayed)
    if (v.name == "base_unfaulted") base_flagged = !v.pass;
  CHECK(base_flagged);
}

TEST_CASE("seeds only perturb declared-random choices") {
  for (const char* name : {"switching.yaml", "uds_transfer.yaml", "ipc_semaphore.yaml", "throughput.yaml"}) {
    CAPTURE(name);
    const auto sc = load_scenario((kRoot / "scenarios" / name).string());
    const auto a = run_scenario(sc, RunOptions{.seed = 1});
    const auto b = run_scenario(sc, RunOptions{.seed = 99});
    REQUIRE(a.verdicts.size() == b.verdicts.size());
    for (std::size_t i = 0; i < a.verdicts.size(); ++i) CHECK(a.verdicts[i].pass == b.verdicts[i].pass);
    const auto again = run_scenario(sc, RunOptions{.seed = 1});
    CHECK(again.trace == a.trace);
  }
}

TEST_CASE("report serializes the documented fields") {
  const auto rep = run_scenario(load_scenario((kRoot / "scenarios/lending.yaml").string()));
  const auto j = nlohmann::json::parse(rep.to_json());
  for (const char* k : {"scenario", "seed", "steps", "verdicts", "phases", "throughput", "faults"})
    CHECK(j.contains(k));
  CHECK(j["step_unit"] == "simulated steps");
  CHECK(j["verdicts"].size() == rep.verdicts.size());
  CHECK(j["phases"].contains("separate"));
  CHECK(j["phases"]["merge"]["total"].get<Step>() > 0);
}

TEST_CASE("step budget stops the run and fails the slow assertion") {
  auto sc = load_scenario((kRoot / "scenarios/attack_app_bug.yaml").string());
  const auto rep = run_scenario(sc, RunOptions{.max_steps = 5000});
  CHECK(rep.steps == 5000);
  CHECK_FALSE(rep.all_pass());
  CHECK_FALSE(rep.verdict("base_complete")->pass);
  CHECK_FALSE(rep.errors.empty());
}

TEST_CASE("bundled attack files match the suite's rows") {
  for (auto a : {Attack::AppBug, Attack::AppVirus, Attack::DriverBug, Attack::DriverVirus}) {
    CAPTURE(to_string(a));
    CHECK(slurp(kRoot / "scenarios" / fmt::format("attack_{}.yaml", to_string(a))) == attack_scenario_text(a));
  }
  CHECK(parse_attack("driver_virus") == Attack::DriverVirus);
  CHECK_THROWS_AS(parse_attack("worm"), Error);
}

TEST_CASE("attack suite is contained for every seed") {
  for (std::uint64_t seed : {0ULL, 1ULL, 7ULL, 12345ULL}) {
    const auto r = attack_suite(seed);
    REQUIRE(r.summary.verdicts.size() == 4);
    for (const auto& v : r.summary.verdicts) {
      CAPTURE(v.name);
      CHECK(v.pass);
      CHECK(v.detail == "Contained");
    }
  }
}

TEST_CASE("benches") {
  const auto ipc = bench("ipc");
  CHECK(ipc.all_pass());
  CHECK(ipc.metrics.at("semop_ratio") > 1.0);
  const auto tr = bench("transition");
  CHECK(tr.all_pass());
  CHECK(tr.phases.at("separate").at("total") < tr.phases.at("merge").at("total"));
  CHECK(tr.phases.at("merge").count("rejoin_at") == 1);
  CHECK(bench("throughput").all_pass());
  CHECK_THROWS_AS(bench("lmbench"), Error);
}
