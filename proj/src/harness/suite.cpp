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

#include "secpart/harness/suite.hpp"

#include <fmt/format.h>

#include "secpart/ipc/ipc.hpp"
#include "secpart/uds/transfer.hpp"

namespace secpart::harness {

namespace {

using machine::Machine;
using machine::Pid;
using machine::Task;
using machine::ThreadContext;
using machine::ThreadState;

constexpr const char* kAttackTemplate = R"(scenario: attack_{attack}
seed: {seed}
platform:
  mode: amp
  processors: 4
  base_units: 600
  boot: {{1: A, 2: B, 3: C}}
domains:
  - {{name: base, kind: base}}
  - {{name: A, kind: operator}}
  - {{name: B, kind: trusted}}
  - {{name: C, kind: untrusted}}
events:
  - {{at: 2000, verb: inject, proc: 3, attack: {attack}}}
  - {{at: 12000, verb: reboot, proc: 3, domain: C}}
  - {{verb: run, steps: 30000}}
assertions:
  - {{name: crashed, check: fault, proc: 3, kind: {fault}}}
  - {{name: base_complete, check: base_complete}}
  - {{name: base_unfaulted, check: no_base_faults}}
  - {{name: neighbours_unfaulted, check: no_faults, procs: [1, 2]}}
  - {{name: matrix_intact, check: matrix_unchanged}}
  - {{name: rebooted, check: occupant, proc: 3, domain: C}}
  - {{name: recovered, check: domain_progress, domain: C, at_least: 50}}
)";

Verdict verdict(std::string name, std::string check, bool pass, std::string detail) {
  return Verdict{std::move(name), std::move(check), pass, std::move(detail)};
}

// -- ipc ---------------------------------------------------------------------------------

struct SemopSample {
  Step start = 0;
  Step returned = 0;
  Step woke = 0;
};

Task<void> make_sem(ThreadContext& c, ipc::IpcSystem* ipc, Word* id) {
  *id = (co_await ipc->semget(c, 1, 0)).value;
}

Task<void> sem_down(ThreadContext& c, ipc::IpcSystem* ipc, Word id, Machine* m, SemopSample* s) {
  co_await ipc->semop(c, id, -1);
  s->woke = m->now();
}

Task<void> sem_up(ThreadContext& c, ipc::IpcSystem* ipc, Word id, Machine* m, SemopSample* s) {
  s->start = m->now();
  co_await ipc->semop(c, id, +1);
  s->returned = m->now();
}

Task<void> shm_cycle(ThreadContext& c, ipc::IpcSystem* ipc, Machine* m, std::map<std::string, Step>* out) {
  Step t = m->now();
  auto seg = co_await ipc->shmget(c, 7, 4096);
  (*out)["shmget"] = m->now() - t;
  t = m->now();
  auto at = co_await ipc->shmat(c, seg.value);
  (*out)["shmat"] = m->now() - t;
  t = m->now();
  co_await ipc->shmdt(c, at.value);
  (*out)["shmdt"] = m->now() - t;
}

bool done(Machine& m, Pid p) { return m.thread_state(p) == ThreadState::Done; }

// Average semop(+1) call length and waiter wake latency, waiter on `waiter_cpu`.
std::pair<double, double> semop_steps(ProcessorId waiter_cpu, std::uint64_t seed, int rounds) {
  auto m = ipc::make_ipc_machine(3, seed);
  ipc::IpcSystem ipc(*m, ipc::kDefaultRegion);
  Word id = 0;
  const Pid mk = ipc.spawn(ProcessorId{0}, "mk", [&](ThreadContext& c) { return make_sem(c, &ipc, &id); });
  m->run_until([&] { return done(*m, mk); }, 100000);
  Step call = 0, wake = 0;
  for (int i = 0; i < rounds; ++i) {
    SemopSample s;
    const Pid down = ipc.spawn(waiter_cpu, "down", [&](ThreadContext& c) { return sem_down(c, &ipc, id, m.get(), &s); });
    m->run_until([&] { return ipc.sem_waiters(id) == 1 && m->pending_ipis(waiter_cpu) == 0; }, 100000);
    m->run(200);
    const Pid up = ipc.spawn(ProcessorId{0}, "up", [&](ThreadContext& c) { return sem_up(c, &ipc, id, m.get(), &s); });
    m->run_until([&] { return done(*m, down) && done(*m, up); }, 100000);
    if (!done(*m, down) || !done(*m, up)) throw Error(Errc::Timeout, "semop bench did not settle");
    call += s.returned - s.start;
    wake += s.woke - s.start;
  }
  return {static_cast<double>(call) / rounds, static_cast<double>(wake) / rounds};
}

RunReport bench_ipc(std::uint64_t seed) {
  RunReport r;
  r.scenario = "bench_ipc";
  r.seed = seed;
  constexpr int kRounds = 16;
  const auto [local_call, local_wake] = semop_steps(ProcessorId{0}, seed, kRounds);
  const auto [remote_call, remote_wake] = semop_steps(ProcessorId{2}, seed, kRounds);
  r.metrics["semop_local"] = local_call;
  r.metrics["semop_remote"] = remote_call;
  r.metrics["semop_ratio"] = remote_call / local_call;
  r.metrics["wake_local"] = local_wake;
  r.metrics["wake_remote"] = remote_wake;
  r.metrics["wake_ratio"] = remote_wake / local_wake;

  auto m = ipc::make_ipc_machine(3, seed);
  ipc::IpcSystem ipc(*m, ipc::kDefaultRegion);
  std::map<std::string, Step> shm;
  const Pid p = ipc.spawn(ProcessorId{1}, "shm", [&](ThreadContext& c) { return shm_cycle(c, &ipc, m.get(), &shm); });
  m->run_until([&] { return done(*m, p); }, 100000);
  for (const auto& [op, steps] : shm) r.metrics[op] = static_cast<double>(steps);

  r.verdicts.push_back(verdict("remote_semop_slower", "semop_remote > semop_local", remote_call > local_call,
                               fmt::format("{:.1f} vs {:.1f} steps, ratio {:.2f}", remote_call, local_call,
                                           remote_call / local_call)));
  r.verdicts.push_back(verdict("remote_wake_slower", "wake_remote > wake_local", remote_wake > local_wake,
                               fmt::format("{:.1f} vs {:.1f} steps, ratio {:.2f}", remote_wake, local_wake,
                                           remote_wake / local_wake)));
  r.steps = m->now();
  return r;
}

// -- uds ---------------------------------------------------------------------------------

RunReport bench_uds(std::uint64_t seed) {
  RunReport r;
  r.scenario = "bench_uds";
  r.seed = seed;
  for (std::size_t frag : {1024u, 4096u, 16384u}) {
    uds::TransferSpec spec;
    spec.fragment = frag;
    spec.seed = seed;
    const auto res = uds::run_transfer(spec);
    const auto kb = fmt::format("{}k", frag / 1024);
    r.metrics["steps_" + kb] = static_cast<double>(res.steps);
    r.metrics["bytes_" + kb] = static_cast<double>(res.bytes_delivered);
    r.throughput["bytes_" + kb] = res.bytes_delivered;
    r.steps += res.steps;
    r.verdicts.push_back(verdict("delivered_" + kb, "bytes delivered = 1048576",
                                 res.completed && res.bytes_delivered == spec.bytes && res.byte_identical(),
                                 fmt::format("{} bytes in {} steps", res.bytes_delivered, res.steps)));
  }
  return r;
}

// -- transition --------------------------------------------------------------------------

Step total(const std::map<std::string, Step>& phases) {
  auto it = phases.find("total");
  return it == phases.end() ? 0 : it->second;
}

RunReport bench_transition(std::uint64_t seed) {
  RunReport r;
  r.scenario = "bench_transition";
  r.seed = seed;
  auto spec = PlatformSpec::smp(4, {{"A", DomainKind::Trusted}, {"B", DomainKind::Untrusted}});
  spec.seed = seed;
  Platform pf(spec);
  auto& m = pf.machine();
  const ProcessorId k{3};
  m.run(4000);
  pf.partitioner().separate(k, pf.domain("A"));
  m.run(2000);
  pf.partitioner().switch_open(k, pf.domain("B"));
  m.run(2000);
  pf.partitioner().merge(k);
  m.run(2000);
  for (const char* kind : {"separate", "switch", "merge"}) {
    r.phases[kind] = pf.partitioner().last_phases(kind);
    r.metrics[std::string(kind) + "_total"] = static_cast<double>(total(r.phases[kind]));
  }
  for (const auto& t : pf.partitioner().transitions())
    r.trace.push_back(fmt::format("transition,{},{},{},{},{}", t.kind, t.proc.value, t.domain, t.phase, t.steps));
  const auto sep = total(r.phases["separate"]), mrg = total(r.phases["merge"]);
  r.verdicts.push_back(verdict("separate_shorter_than_merge", "separate < merge", sep < mrg,
                               fmt::format("{} vs {} steps", sep, mrg)));
  r.verdicts.push_back(verdict("no_faults", "no_faults", m.faults().empty(), fmt::format("{} faults", m.faults().size())));
  r.faults = m.faults();
  r.steps = m.now();
  return r;
}

// -- throughput --------------------------------------------------------------------------

RunReport bench_throughput(std::uint64_t seed) {
  RunReport r;
  r.scenario = "bench_throughput";
  r.seed = seed;
  auto spec = PlatformSpec::smp(4, {{"A", DomainKind::Trusted}});
  spec.seed = seed;
  Platform pf(spec);
  auto& m = pf.machine();
  auto& probe = pf.probe();
  const ProcessorId k{3};
  // A window is a whole number of units on every processor in both layouts.
  const Step window = 12 * spec.work_unit_ops * 100;
  m.run(window);
  const auto before = probe.measure(window);
  pf.partitioner().separate(k, pf.domain("A"));
  m.run(window);
  const auto lent = probe.measure(window);
  pf.partitioner().merge(k);
  m.run(window);
  const auto after = probe.measure(window);
  auto get = [](const std::map<std::string, std::uint64_t>& c, const char* d) {
    auto it = c.find(d);
    return it == c.end() ? std::uint64_t{0} : it->second;
  };
  const auto b4 = get(before, "base"), b3 = get(lent, "base"), a3 = get(lent, "A"), b4b = get(after, "base");
  r.throughput = {{"before.base", b4}, {"lent.base", b3}, {"lent.A", a3}, {"after.base", b4b}};
  r.verdicts.push_back(verdict("base_ratio", "before.base : lent.base = 4 : 3", b4 * 3 == b3 * 4,
                               fmt::format("{}:{}", b4, b3)));
  r.verdicts.push_back(verdict("lent_share", "lent.A = lent.base / 3", a3 * 3 == b3, fmt::format("{} vs {}/3", a3, b3)));
  r.verdicts.push_back(verdict("restored", "after.base = before.base", b4b == b4, fmt::format("{} vs {}", b4b, b4)));
  r.faults = m.faults();
  r.steps = m.now();
  return r;
}

}  // namespace

std::string attack_scenario_text(Attack attack, std::uint64_t seed) {
  const char* fault = attack == Attack::AppBug ? "PageFault" : "BusError";
  return fmt::format(kAttackTemplate, fmt::arg("attack", to_string(attack)), fmt::arg("seed", seed),
                     fmt::arg("fault", fault));
}

AttackSuiteReport attack_suite(std::uint64_t seed) {
  AttackSuiteReport out;
  out.summary.scenario = "attack_suite";
  out.summary.seed = seed;
  for (auto a : {Attack::AppBug, Attack::AppVirus, Attack::DriverBug, Attack::DriverVirus}) {
    const auto name = std::string(to_string(a));
    auto row = run_scenario(parse_scenario(attack_scenario_text(a, seed), "attack_" + name));
    std::string failed;
    for (const auto& v : row.verdicts)
      if (!v.pass) failed += (failed.empty() ? "" : ", ") + v.name + " (" + v.detail + ")";
    out.summary.verdicts.push_back(verdict(name, "contained", failed.empty(), failed.empty() ? "Contained" : failed));
    out.summary.steps += row.steps;
    out.summary.faults.insert(out.summary.faults.end(), row.faults.begin(), row.faults.end());
    for (const auto& line : row.trace) out.summary.trace.push_back(name + "," + line);
    for (const auto& [d, n] : row.throughput) out.summary.throughput[name + "." + d] = n;
    out.rows.push_back(std::move(row));
  }
  return out;
}

RunReport bench(const std::string& kind, std::uint64_t seed) {
  if (kind == "ipc") return bench_ipc(seed);
  if (kind == "uds") return bench_uds(seed);
  if (kind == "transition") return bench_transition(seed);
  if (kind == "throughput") return bench_throughput(seed);
  throw Error(Errc::Validation, fmt::format("unknown bench '{}'", kind));
}

}  // namespace secpart::harness
