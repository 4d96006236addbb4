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

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <chrono>
#include <functional>
#include <iostream>
#include <random>

#include <fmt/format.h>

#include "secpart/bmu/bmu.hpp"
#include "secpart/harness/platform.hpp"
#include "secpart/harness/suite.hpp"
#include "secpart/ipc/buddy.hpp"
#include "secpart/ipc/reference.hpp"
#include "secpart/uds/transfer.hpp"
#include "support/oracles.hpp"

#ifndef SECPART_SOURCE_DIR
#define SECPART_SOURCE_DIR "."
#endif

using namespace secpart;
using namespace secpart::harness;
using machine::Pid;
using machine::Task;
using machine::ThreadContext;
using machine::ThreadState;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr AccessKind kKinds[] = {AccessKind::Read, AccessKind::Write, AccessKind::Fetch, AccessKind::Swap};

// -- 1 -----------------------------------------------------------------------------------

Outcome bmu_oracle() {
  const auto ex = bmu::four_domain_example();
  const auto compiled = bmu::compile_policy(ex.policy, ex.assignment);
  // The live matrix of a booted four-processor platform, same policy shape.
  Platform pf(PlatformSpec::amp(4, {{"A", DomainKind::Operator}, {"B", DomainKind::Trusted}, {"C", DomainKind::Untrusted}}));
  const auto& live = pf.machine().matrix();

  auto addrs = oracle::boundary_samples(ex.policy.regions, 10000, 2026);
  std::vector<bmu::PolicyRegion> live_regions;
  for (const auto& r : pf.policy().regions) live_regions.push_back(r);
  const auto more = oracle::boundary_samples(live_regions, 10000, 2027);

  // Samples within 4 KB of each edge, counted per boundary.
  std::size_t min_per_boundary = SIZE_MAX;
  for (const auto& r : ex.policy.regions) {
    for (std::uint64_t edge : {std::uint64_t{r.range.base}, r.range.end()}) {
      std::size_t n = 0;
      for (Addr a : addrs)
        if (a + 0x1000ULL >= edge && a <= edge + 0x1000ULL) ++n;
      min_per_boundary = std::min(min_per_boundary, n);
    }
  }

  std::size_t checks = 0, bad = 0;
  auto sweep = [&](const bmu::AccessMatrix& m, const std::vector<Addr>& samples) {
    for (std::uint32_t p = 0; p < m.processor_count(); ++p) {
      const auto entries = m.entries(ProcessorId{p});
      const bool ctl = m.is_controller(ProcessorId{p});
      for (auto k : kKinds)
        for (Addr a : samples) {
          ++checks;
          const bool blocked = m.check(machine::BusAccess::make(ProcessorId{p}, k, a)) == bmu::Decision::Blocked;
          if (blocked != oracle::bmu_blocks(entries, ctl, k, a)) ++bad;
        }
    }
  };
  sweep(compiled, addrs);
  sweep(live, more);
  return {bad == 0 && min_per_boundary >= 10000,
          fmt::format("{} checks, {} disagreements, >= {} samples per boundary", checks, bad, min_per_boundary)};
}

// -- 2 -----------------------------------------------------------------------------------

Outcome attacks() {
  const auto r = attack_suite(0);
  std::string rows;
  bool ok = r.summary.verdicts.size() == 4;
  for (const auto& v : r.summary.verdicts) {
    rows += fmt::format("{}={} ", v.name, v.pass ? "Contained" : "Breached");
    ok = ok && v.pass;
  }
  for (const auto& row : r.rows)
    for (const auto& f : row.faults) ok = ok && f.proc != ProcessorId{0};
  return {ok, rows + "; no faults on the base processor"};
}

// -- 3 -----------------------------------------------------------------------------------

Outcome switching() {
  auto spec = PlatformSpec::amp(3, {{"A", DomainKind::Operator},
                                    {"B", DomainKind::Trusted},
                                    {"C", DomainKind::Untrusted},
                                    {"D", DomainKind::Manufacturer}});
  spec.boot = {{ProcessorId{1}, "A"}, {ProcessorId{2}, "B"}};
  spec.seed = 5;
  Platform pf(spec);
  auto& m = pf.machine();
  auto& vmm = pf.vmm();
  // Independent record of each domain's last saved context.
  std::map<std::string, machine::DomainContext> saved;
  for (const auto& d : {"C", "D"}) saved[d] = pf.pristine_context(d);
  std::mt19937_64 rng(77);
  std::size_t bad_restore = 0, bad_order = 0, bad_save = 0, bad_store = 0;
  m.run(1000);
  for (int i = 0; i < 200; ++i) {
    const ProcessorId p{1 + static_cast<std::uint32_t>(rng() % 2)};
    std::vector<std::string> dormant;
    for (const auto& name : pf.open_domain_names())
      if (vmm.store().at(pf.domain(name)).dormant()) dormant.push_back(name);
    const auto target = dormant[rng() % dormant.size()];
    const auto from = pf.domain_name(*vmm.occupant(p));
    if (vmm.store().at(pf.domain(target)).context != saved.at(target)) ++bad_store;
    const auto prev = vmm.switch_domain(pf.domain(target), p);
    const auto& rec = vmm.records().back();
    if (!rec.restored_exact) ++bad_restore;
    if (!rec.ordering_ok()) ++bad_order;
    if (!rec.saved_exact) ++bad_save;
    saved[from] = prev;
    saved.erase(target);
    m.run(200 + rng() % 800);
  }
  const bool ok = bad_restore + bad_order + bad_save + bad_store == 0 && m.faults().empty() && vmm.records().size() == 200;
  return {ok, fmt::format("{} switches; restore mismatches {}, ordering violations {}, save mismatches {}, "
                          "store drift {}, faults {}",
                          vmm.records().size(), bad_restore, bad_order, bad_save, bad_store, m.faults().size())};
}

// -- 4 -----------------------------------------------------------------------------------

Outcome throughput() {
  const auto r = bench("throughput");
  const auto& t = r.throughput;
  return {r.all_pass() && r.faults.empty(),
          fmt::format("base {} -> {} -> {} units per window, lent processor {} units", t.at("before.base"),
                      t.at("lent.base"), t.at("after.base"), t.at("lent.A"))};
}

// -- 5 -----------------------------------------------------------------------------------

Outcome hazard() {
  const std::string dir = std::string(SECPART_SOURCE_DIR) + "/scenarios/";
  const auto bad = load_scenario(dir + "hazard_unmapped.yaml");
  const auto good = load_scenario(dir + "hazard_installed.yaml");
  const auto b1 = run_scenario(bad), b2 = run_scenario(bad);
  const auto g1 = run_scenario(good), g2 = run_scenario(good);
  bool flow = false;
  for (const auto& f : b1.faults) flow = flow || f.kind == FaultKind::UnexpectedFlow;
  const bool det = b1.trace == b2.trace && g1.trace == g2.trace;
  return {b1.all_pass() && g1.all_pass() && flow && det,
          fmt::format("omitted: {} ({}), installed: {}, deterministic {}", flow ? "UnexpectedFlow" : "no fault",
                      b1.verdict("nothing_applied")->detail, g1.all_pass() ? "completes" : "fails", det)};
}

// -- 6 -----------------------------------------------------------------------------------

Outcome ipc_equivalence() {
  std::mt19937_64 rng(6);
  constexpr int kPrograms = 300;
  constexpr int kSeeds = 8;
  std::size_t divergences = 0, runs = 0, reachable = 0, seen = 0, states = 0, timeouts = 0;
  for (int i = 0; i < kPrograms; ++i) {
    const auto prog = ipc::random_program(rng);
    std::size_t explored = 0;
    const auto finals = ipc::reachable_outcomes(prog, &explored);
    states += explored;
    reachable += finals.size();
    std::set<std::string> observed;
    for (int s = 0; s < kSeeds; ++s) {
      ++runs;
      try {
        const auto key = ipc::run_distributed(prog, static_cast<std::uint64_t>(i * 100 + s)).key();
        if (!finals.count(key)) ++divergences;
        observed.insert(key);
      } catch (const Error&) {
        ++timeouts;
      }
    }
    seen += observed.size();
  }
  return {divergences == 0 && timeouts == 0,
          fmt::format("{} programs x {} seeds: {} divergences, {} timeouts; {} reference states, "
                      "{} of {} reachable finals observed",
                      kPrograms, kSeeds, divergences, timeouts, states, seen, reachable)};
}

// -- 7 -----------------------------------------------------------------------------------

// Pending wake IPIs per processor, rebuilt from machine events.
class WakeWatch : public machine::MachineObserver {
 public:
  void on_event(const machine::MachineEvent& ev) override {
    using machine::EventKind;
    if (ev.vector != ipc::kWakeVector) return;
    if (ev.kind == EventKind::IpiPosted || ev.kind == EventKind::IpiCollapsed) {
      peak = std::max(peak, ++pending[ev.other.value]);
      ++posted;
    } else if (ev.kind == EventKind::IrqTaken) {
      pending[ev.proc.value] = 0;
    }
  }
  std::map<std::uint32_t, int> pending;
  int peak = 0;
  int posted = 0;
};

Task<void> make_sem(ThreadContext& c, ipc::IpcSystem* ipc, Word* id) { *id = (co_await ipc->semget(c, 5, 0)).value; }

Task<void> down(ThreadContext& c, ipc::IpcSystem* ipc, const Word* id, int* woke) {
  if ((co_await ipc->semop(c, *id, -1)).ok()) ++*woke;
}

Task<void> post(ThreadContext& c, ipc::IpcSystem* ipc, const Word* id) { co_await ipc->semop(c, *id, +1); }

Outcome coalescing() {
  auto m = ipc::make_ipc_machine(3, 7);
  ipc::IpcSystem ipc(*m, ipc::kDefaultRegion);
  WakeWatch watch;
  m->add_observer(&watch);
  Word id = 0;
  int woke = 0;
  const Pid mk = ipc.spawn(ProcessorId{0}, "mk", [&](ThreadContext& c) { return make_sem(c, &ipc, &id); });
  m->run_until([&] { return m->thread_state(mk) == ThreadState::Done; }, 100000);
  std::vector<Pid> downs;
  for (int i = 0; i < 10; ++i)
    downs.push_back(ipc.spawn(ProcessorId{1}, "down",
                              [&](ThreadContext& c) { return down(c, &ipc, &id, &woke); }));
  m->run_until([&] { return ipc.sem_waiters(id) == 10; }, 100000);
  // Ten posters on two processors, all started in the same step.
  std::vector<Pid> all = downs;
  for (int i = 0; i < 10; ++i)
    all.push_back(ipc.spawn(ProcessorId{i % 2 == 0 ? 0u : 2u}, "post",
                            [&](ThreadContext& c) { return post(c, &ipc, &id); }));
  int peak_bits = 0;
  for (Step s = 0; s < 200000; ++s) {
    m->run(1);
    for (std::uint32_t p = 0; p < 3; ++p) peak_bits = std::max(peak_bits, int(m->pending_ipis(ProcessorId{p})[ipc::kWakeVector]));
    if (std::all_of(all.begin(), all.end(), [&](Pid d) { return m->thread_state(d) == ThreadState::Done; }))
      break;
  }
  m->remove_observer(&watch);
  const auto& st = ipc.stats();
  const bool ok = woke == 10 && watch.peak <= 1 && peak_bits <= 1 && st.wake_ipis + st.linked_without_ipi == 10 &&
                  st.wake_ipis < 10 && ipc.control_list(ProcessorId{1}).empty() && ipc.control_list(ProcessorId{2}).empty();
  return {ok, fmt::format("{} of 10 wakes delivered with {} IPIs ({} linked without one); peak pending per processor {}",
                          woke, st.wake_ipis, st.linked_without_ipi, watch.peak)};
}

// -- 8 -----------------------------------------------------------------------------------

Outcome buddy() {
  constexpr std::uint32_t cap = 1u << 16, min_block = 32;
  ipc::BuddyAllocator heap(cap, min_block);
  oracle::IntervalHeap model(cap, min_block);
  std::mt19937_64 rng(8);
  std::size_t bad = 0, refusals = 0;
  for (int i = 0; i < 10000; ++i) {
    if (model.live().empty() || rng() % 3 != 0) {
      const auto size = static_cast<std::uint32_t>(1 + rng() % 3000);
      const bool servable = model.can_serve(size);
      std::uint32_t off = 0;
      try {
        off = heap.alloc(size);
      } catch (const Error&) {
        ++refusals;
        if (servable) ++bad;
        continue;
      }
      const auto block = heap.live_size(off);
      if (!servable || block != model.block_for(size) || off % block != 0 || off + block > cap ||
          model.overlaps(off, block))
        ++bad;
      model.add(off, block);
    } else {
      auto it = model.live().begin();
      std::advance(it, static_cast<long>(rng() % model.live().size()));
      const auto off = it->first;
      heap.free(off);
      model.remove(off);
    }
    if (heap.free_bytes() + model.used() != cap) ++bad;
  }
  std::vector<std::uint32_t> rest;
  for (const auto& [o, l] : model.live()) rest.push_back(o);
  std::shuffle(rest.begin(), rest.end(), rng);
  for (auto o : rest) heap.free(o);
  const bool pristine = heap.pristine();
  return {bad == 0 && pristine && refusals > 0,
          fmt::format("10000 ops, {} mismatches, {} refusals all justified, pristine after free-all: {}", bad, refusals,
                      pristine)};
}

// -- 9 -----------------------------------------------------------------------------------

Outcome uds_transparency() {
  std::string detail;
  bool ok = true;
  for (std::size_t frag : {1024u, 4096u, 16384u}) {
    uds::TransferSpec remote;
    remote.fragment = frag;
    remote.seed = 9;
    auto local = remote;
    local.clients = {ProcessorId{0}};
    const auto r = uds::run_transfer(remote);
    const auto l = uds::run_transfer(local);
    const bool same = r.observed == l.observed;
    const bool row = r.byte_identical() && l.byte_identical() && same && r.proxies_ok && r.residue_free &&
                     r.bytes_delivered == (1u << 20);
    ok = ok && row;
    detail += fmt::format("{}K: {} bytes, identical {}; ", frag / 1024, r.bytes_delivered, same);
  }
  return {ok, detail + "per-sender order kept"};
}

// -- 10 ----------------------------------------------------------------------------------

Outcome floor_and_conservation() {
  std::size_t violations = 0, applied = 0, refused = 0, verbs = 0, guards = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = PlatformSpec::smp(4, {{"A", DomainKind::Trusted}, {"B", DomainKind::Untrusted}, {"C", DomainKind::Operator}});
    spec.seed = seed;
    Platform pf(spec);
    auto& part = pf.partitioner();
    std::mt19937_64 rng(seed * 31 + 1);
    pf.machine().run(1000);
    const auto names = pf.open_domain_names();
    for (int i = 0; i < 100; ++i, ++verbs) {
      const ProcessorId p{static_cast<std::uint32_t>(rng() % 4)};
      const auto d = pf.domain(names[rng() % names.size()]);
      try {
        switch (rng() % 3) {
          case 0: part.separate(p, d); break;
          case 1: part.switch_open(p, d); break;
          default: part.merge(p); break;
        }
        ++applied;
      } catch (const Error&) {
        ++refused;
      }
      pf.machine().run(100 + rng() % 400);
      if (pf.base().members().empty() || !part.conservation_holds()) ++violations;
    }
    // Scripted: lend everything but the context manager, then ask for it too.
    for (std::uint32_t p = 1; p < 4; ++p)
      if (!part.lent(ProcessorId{p})) {
        for (const auto& n : names)
          if (pf.vmm().store().at(pf.domain(n)).dormant()) {
            part.separate(ProcessorId{p}, pf.domain(n));
            break;
          }
      }
    try {
      part.separate(ProcessorId{0}, pf.domain(names[0]));
    } catch (const Error& e) {
      if (e.code() == Errc::LastProcessor) ++guards;
    }
    if (pf.base().members().size() != 1 || !part.conservation_holds() || !pf.machine().faults().empty()) ++violations;
  }
  return {violations == 0 && guards == 10 && applied > 0,
          fmt::format("{} verbs ({} applied, {} refused), {} violations, LastProcessor fired {}/10", verbs, applied,
                      refused, violations, guards)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {"bmu oracle equivalence", 5, bmu_oracle},
      {"attack containment", 10, attacks},
      {"five domains, 200 switches", 10, switching},
      {"throughput 4:3 and restore", 10, throughput},
      {"unified mapping hazard", 0, hazard},
      {"ipc reference equivalence", 60, ipc_equivalence},
      {"wake IPI coalescing", 0, coalescing},
      {"buddy allocator", 5, buddy},
      {"uds transparency", 30, uds_transparency},
      {"base floor and conservation", 10, floor_and_conservation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = all[i].limit_s == 0 || s < all[i].limit_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << fmt::format("{} {:>2} {}: {} [{:.2f}s{}]\n", pass ? "PASS" : "FAIL", i + 1, all[i].name, o.detail, s,
                             all[i].limit_s > 0 ? fmt::format(" < {:.0f}s", all[i].limit_s) : "")
              << std::flush;
  }
  std::cout << fmt::format("{} of {} criteria pass\n", all.size() - failed, all.size());
  return failed == 0 ? 0 : 1;
}
