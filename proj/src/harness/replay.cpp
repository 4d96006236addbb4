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

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "secpart/harness/runner.hpp"

namespace secpart::harness {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

struct SwitchLine {
  std::uint32_t proc = 0;
  bool ok = false, ordering = false, restored = false;
};

struct FaultLine {
  std::string kind;
  std::uint32_t proc = 0;
};

// What the trace says, indexed for the checks.
struct Facts {
  std::vector<FaultLine> faults;
  std::vector<SwitchLine> switches;
  std::set<std::string> statuses;  // event outcomes
  std::size_t errors = 0;
  std::map<std::string, std::string> matrix;
  std::map<std::uint32_t, std::uint64_t> base_progress;
  std::map<std::string, std::uint64_t> throughput;
  std::map<std::string, std::uint64_t> reboot;
  std::map<std::uint32_t, std::string> occupant;
  std::map<std::uint32_t, std::string> attempt, state;
  std::set<std::uint32_t> members, lent;
  std::map<std::string, std::uint64_t> window;  // label.domain
  std::map<std::string, std::uint64_t> mailbox;
  std::optional<std::uint64_t> ipi_deferred;
  std::map<std::string, std::string> results;  // op label -> status
  std::map<std::string, std::uint64_t> sems;
  bool ipc_ok = false;
  std::map<std::string, bool> residue;
  std::map<std::string, std::string> proxies;
  std::map<std::string, std::uint64_t> uds_recv;  // path|process
  std::map<std::string, std::vector<std::vector<std::string>>> streams;
};

Facts read(const std::vector<std::string>& trace) {
  Facts f;
  for (const auto& line : trace) {
    const auto c = split(line);
    const auto& tag = c[0];
    auto n = [&](std::size_t i) { return std::stoull(c.at(i)); };
    if (tag == "fault") {
      f.faults.push_back({c.at(1), static_cast<std::uint32_t>(n(3))});
    } else if (tag == "switch") {
      f.switches.push_back({static_cast<std::uint32_t>(n(1)), c.at(5) == "1", c.at(6) == "1", c.at(7) == "1"});
    } else if (tag == "event") {
      f.statuses.insert(c.at(4));
    } else if (tag == "op") {
      if (!c.at(5).empty()) f.results[c[5]] = c.at(4);
    } else if (tag == "final" && c.at(1) == "base_progress") {
      f.base_progress[static_cast<std::uint32_t>(n(2))] = n(3);
    } else if (tag == "final" && c.at(1) == "throughput") {
      f.throughput[c.at(2)] = n(3);
    } else if (tag == "fact") {
      const auto& k = c.at(1);
      if (k == "matrix") f.matrix[c.at(2)] = c.at(3);
      else if (k == "reboot") f.reboot[c.at(2)] = n(3);
      else if (k == "occupant") f.occupant[static_cast<std::uint32_t>(n(2))] = c.at(3);
      else if (k == "attempt") f.attempt[static_cast<std::uint32_t>(n(2))] = c.at(3);
      else if (k == "state") f.state[static_cast<std::uint32_t>(n(2))] = c.at(3);
      else if (k == "member") f.members.insert(static_cast<std::uint32_t>(n(2)));
      else if (k == "lent") f.lent.insert(static_cast<std::uint32_t>(n(2)));
      else if (k == "window") f.window[c.at(2) + "." + c.at(3)] = n(4);
      else if (k == "mailbox") f.mailbox[c.at(2)] = n(3);
      else if (k == "ipi_guard") f.ipi_deferred = n(3);
      else if (k == "sem") f.sems[c.at(2)] = n(3);
      else if (k == "ipc_health") f.ipc_ok = c.at(2) == "1" && c.at(3) == "0";
      else if (k == "uds_residue") f.residue[c.at(2)] = c.at(3) == "1";
      else if (k == "proxies") f.proxies[c.at(2)] = c.at(3);
      else if (k == "uds_recv") f.uds_recv[c.at(2) + "|" + c.at(3)] = n(4);
      else if (k == "uds_stream") f.streams[c.at(2)].push_back(c);
      else if (k == "error") ++f.errors;
    }
  }
  return f;
}

std::uint32_t proc_of(const Args& a, const std::string& key = "proc") {
  return static_cast<std::uint32_t>(arg_u64(a, key));
}

bool judge(const Scenario& s, const Facts& f, const Assertion& as) {
  const auto& a = as.args;
  const auto& c = as.check;
  auto count_faults = [&](auto pred) {
    return static_cast<std::size_t>(std::count_if(f.faults.begin(), f.faults.end(), pred));
  };
  auto window = [&](const std::string& ref) {
    auto it = f.window.find(ref);
    return it == f.window.end() ? std::uint64_t{0} : it->second;
  };
  auto base_member = [&](std::uint32_t p) { return s.platform.base_members.count(ProcessorId{p}) > 0; };

  if (c == "no_faults") {
    const auto procs = arg_list(a, "procs");
    if (procs.empty()) return f.faults.empty();
    return count_faults([&](const FaultLine& x) {
             return std::find(procs.begin(), procs.end(), std::to_string(x.proc)) != procs.end();
           }) == 0;
  }
  if (c == "error") return f.statuses.count(a.at("code")) > 0;
  if (c == "no_errors") return f.errors == 0;
  if (c == "base_progress") {
    auto it = f.base_progress.find(proc_of(a));
    return it != f.base_progress.end() && it->second >= arg_u64(a, "at_least");
  }
  if (c == "base_complete") {
    for (auto p : s.platform.base_members) {
      auto it = f.base_progress.find(p.value);
      if (it == f.base_progress.end() || it->second < *s.platform.base_units) return false;
    }
    return true;
  }
  if (c == "no_base_faults") return count_faults([&](const FaultLine& x) { return base_member(x.proc); }) == 0;
  if (c == "fault") {
    return count_faults([&](const FaultLine& x) {
             return x.proc == proc_of(a) && (!a.count("kind") || x.kind == a.at("kind"));
           }) > 0;
  }
  if (c == "matrix_unchanged") return f.matrix.count("boot") && f.matrix.at("boot") == f.matrix.at("end");
  if (c == "domain_progress") {
    const auto& d = a.at("domain");
    const auto total = f.throughput.count(d) ? f.throughput.at(d) : 0;
    const auto since = f.reboot.count(d) ? f.reboot.at(d) : 0;
    return total - since >= arg_u64(a, "at_least");
  }
  if (c == "occupant") {
    auto it = f.occupant.find(proc_of(a));
    return (it == f.occupant.end() ? std::string("none") : it->second) == a.at("domain");
  }
  if (c == "switches_ok")
    return std::all_of(f.switches.begin(), f.switches.end(),
                       [](const SwitchLine& x) { return x.ok && x.ordering && x.restored; });
  if (c == "switch_failed")
    return std::any_of(f.switches.begin(), f.switches.end(),
                       [&](const SwitchLine& x) { return !x.ok && (!a.count("proc") || x.proc == proc_of(a)); });
  if (c == "no_partial_apply") {
    const auto p = proc_of(a);
    return f.attempt.count(p) && f.state.count(p) && f.attempt.at(p) == f.state.at(p);
  }
  if (c == "conservation") {
    for (auto p : f.lent)
      if (f.members.count(p)) return false;
    return f.members.size() + f.lent.size() == s.platform.processors;
  }
  if (c == "base_members") return f.members.size() >= arg_u64(a, "at_least");
  if (c == "lent") return (f.lent.count(proc_of(a)) > 0) == (a.at("equals") == "true");
  if (c == "throughput") {
    const auto got = window(a.at("label") + "." + a.at("domain"));
    return a.count("equals") ? got == arg_u64(a, "equals") : got >= arg_u64(a, "at_least", 1);
  }
  if (c == "throughput_ratio") {
    const auto& ratio = a.at("equals");
    const auto slash = ratio.find('/');
    const std::uint64_t p = std::stoull(ratio.substr(0, slash));
    const std::uint64_t q = slash == std::string::npos ? 1 : std::stoull(ratio.substr(slash + 1));
    return window(a.at("num")) * q == window(a.at("den")) * p;
  }
  if (c == "idc_delivered") {
    auto it = f.mailbox.find(a.at("domain"));
    return (it == f.mailbox.end() ? 0 : it->second) == arg_u64(a, "count");
  }
  if (c == "ipis_deferred") return f.ipi_deferred.value_or(0) >= arg_u64(a, "at_least");
  if (c == "result") {
    auto it = f.results.find(a.at("label"));
    return it != f.results.end() && it->second == a.at("equals");
  }
  if (c == "sem_count") {
    auto it = f.sems.find(a.at("key"));
    return it != f.sems.end() && it->second == arg_u64(a, "equals");
  }
  if (c == "ipc_invariants") return f.ipc_ok;
  if (c == "uds_received") {
    auto it = f.uds_recv.find(a.at("path") + "|" + a.at("process"));
    return (it == f.uds_recv.end() ? 0 : it->second) == arg_u64(a, "bytes");
  }
  if (c == "uds_identical") {
    auto it = f.streams.find(a.at("path"));
    if (it == f.streams.end()) return false;
    bool any = false;
    for (const auto& row : it->second) {
      if (row.at(5) != row.at(6)) return false;
      any = any || row.at(4) != "0";
    }
    return any;
  }
  if (c == "uds_residue_free") {
    auto it = f.residue.find(a.at("path"));
    return it == f.residue.end() || !it->second;
  }
  if (c == "proxies") {
    auto it = f.proxies.find(a.at("path"));
    std::string got = it == f.proxies.end() ? "" : it->second;
    std::replace(got.begin(), got.end(), '+', ',');
    return got == a.at("equals");
  }
  throw Error(Errc::Validation, fmt::format("check '{}' cannot be replayed", c));
}

}  // namespace

std::vector<Verdict> replay_verdicts(const Scenario& scenario, const std::vector<std::string>& trace) {
  const auto facts = read(trace);
  std::vector<Verdict> out;
  for (const auto& as : scenario.assertions) {
    Verdict v{as.name, as.check, false, "replayed"};
    try {
      v.pass = judge(scenario, facts, as);
    } catch (const std::exception& e) {
      v.detail = e.what();
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace secpart::harness
