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

#include <random>

#include "doctest.h"
#include "support/oracles.hpp"

using namespace secpart;
using namespace secpart::bmu;
using machine::BusAccess;

namespace {

constexpr AccessKind kKinds[] = {AccessKind::Read, AccessKind::Write, AccessKind::Fetch, AccessKind::Swap};

Decision at(const AccessMatrix& m, std::uint32_t p, AccessKind k, Addr a) {
  return m.check(BusAccess::make(ProcessorId{p}, k, a));
}

std::size_t disagreements(const AccessMatrix& m, const std::vector<Addr>& addrs) {
  std::size_t bad = 0;
  for (std::uint32_t p = 0; p < m.processor_count(); ++p) {
    const auto entries = m.entries(ProcessorId{p});
    const bool ctl = m.is_controller(ProcessorId{p});
    for (auto k : kKinds)
      for (Addr a : addrs)
        if ((at(m, p, k, a) == Decision::Blocked) != oracle::bmu_blocks(entries, ctl, k, a)) ++bad;
  }
  return bad;
}

}  // namespace

TEST_CASE("four-domain policy reproduces the permission cells") {
  const auto ex = four_domain_example();
  const auto m = compile_policy(ex.policy, ex.assignment);
  const Addr r0 = 0x00001000, sa = 0x10000010, sb = 0x10010010, r1 = 0x10020010;
  for (std::uint32_t p : {1u, 2u}) {
    for (Addr base : {r0, sa}) {
      CHECK(at(m, p, AccessKind::Read, base) == Decision::Allowed);
      CHECK(at(m, p, AccessKind::Write, base) == Decision::Blocked);
    }
    for (Addr shared : {sb, r1})
      for (auto k : kKinds) CHECK(at(m, p, k, shared) == Decision::Allowed);
  }
  for (Addr base : {r0, sa})
    for (auto k : kKinds) CHECK(at(m, 3, k, base) == Decision::Blocked);
  for (Addr shared : {sb, r1}) {
    CHECK(at(m, 3, AccessKind::Read, shared) == Decision::Allowed);
    CHECK(at(m, 3, AccessKind::Write, shared) == Decision::Blocked);
  }
  for (Addr a : {r0, sa, sb, r1})
    for (auto k : kKinds) CHECK(at(m, 0, k, a) == Decision::Allowed);
  CHECK(m.entries(ProcessorId{0}).empty());
}

TEST_CASE("check agrees with a linear scan on boundary samples") {
  const auto ex = four_domain_example();
  const auto m = compile_policy(ex.policy, ex.assignment);
  const auto addrs = oracle::boundary_samples(ex.policy.regions, 10000, 3);
  const AccessMatrix before = m;
  CHECK(disagreements(m, addrs) == 0);
  CHECK(m == before);
}

TEST_CASE("random reachable matrices agree with the scan") {
  std::mt19937_64 rng(99);
  AccessMatrix m(4, {ProcessorId{0}});
  std::vector<PolicyRegion> regions;
  for (int step = 0; step < 200; ++step) {
    const ProcessorId target{static_cast<std::uint32_t>(1 + rng() % 3)};
    const auto slot = rng() % m.entries_per_processor();
    if (rng() % 4 == 0) {
      m.set_entry(ProcessorId{0}, target, slot, std::nullopt);
    } else {
      const Addr base = static_cast<Addr>(rng() % 0x20000) * 16;
      const auto len = static_cast<std::uint32_t>(1 + rng() % 0x4000);
      const auto denied = KindSet::from_bits(static_cast<std::uint8_t>(1 + rng() % 7));
      m.set_entry(ProcessorId{0}, target, slot, RangeEntry{{base, len}, denied});
      regions.push_back({"r", {base, len}});
    }
    if (step % 20 == 19) {
      const auto addrs = oracle::boundary_samples(regions, 20, static_cast<std::uint64_t>(step));
      REQUIRE(disagreements(m, addrs) == 0);
    }
  }
}

TEST_CASE("only controllers reconfigure the matrix") {
  AccessMatrix m(4, {ProcessorId{0}});
  const RangeEntry deny_write{{0x1000, 0x1000}, KindSet::writes()};
  CHECK(!m.set_entry(ProcessorId{0}, ProcessorId{1}, 0, deny_write));
  CHECK(at(m, 1, AccessKind::Write, 0x1800) == Decision::Blocked);
  CHECK(at(m, 1, AccessKind::Read, 0x1800) == Decision::Allowed);

  const AccessMatrix snapshot = m;
  auto f = m.set_entry(ProcessorId{1}, ProcessorId{1}, 0, std::nullopt);
  REQUIRE(f);
  CHECK(f->kind == FaultKind::BusError);
  CHECK(m == snapshot);
  CHECK_THROWS_AS(m.set_entry(ProcessorId{0}, ProcessorId{1}, 8, deny_write), Error);
  CHECK_THROWS_AS(m.set_entry(ProcessorId{0}, ProcessorId{1}, 1, RangeEntry{{0, 0}, KindSet::writes()}), Error);

  CHECK(!m.set_entry(ProcessorId{0}, ProcessorId{1}, 0, std::nullopt));
  CHECK(at(m, 1, AccessKind::Write, 0x1800) == Decision::Allowed);

  CHECK(m.set_controllers(ProcessorId{2}, {ProcessorId{2}}));
  CHECK_THROWS_AS(m.set_controllers(ProcessorId{0}, {}), Error);
  m.set_entry(ProcessorId{0}, ProcessorId{3}, 0, RangeEntry{{0, 0x100}, KindSet::all()});
  CHECK(!m.set_controllers(ProcessorId{0}, {ProcessorId{0}, ProcessorId{3}}));
  CHECK(m.entries(ProcessorId{3}).empty());
  CHECK(at(m, 3, AccessKind::Write, 0x10) == Decision::Allowed);
}

TEST_CASE("execute-only entries let fetches through") {
  AccessMatrix m(2, {ProcessorId{0}});
  m.set_entry(ProcessorId{0}, ProcessorId{1}, 0, RangeEntry{{0x8000, 0x1000}, KindSet::data()});
  CHECK(at(m, 1, AccessKind::Fetch, 0x8004) == Decision::Allowed);
  CHECK(at(m, 1, AccessKind::Read, 0x8004) == Decision::Blocked);
  CHECK(at(m, 1, AccessKind::Swap, 0x8004) == Decision::Blocked);
  CHECK(denied_kinds(Permission::ExecuteOnly) == KindSet::data());
}

TEST_CASE("policy compilation edge cases") {
  DomainPolicy open;
  open.regions = {{"x", {0x0, 0x1000}}};
  const auto m = compile_policy(open, {{ProcessorId{0}, "base"}, {ProcessorId{1}, "guest"}});
  CHECK(m.entries(ProcessorId{1}).empty());

  DomainPolicy tight;
  for (int i = 0; i < 9; ++i) {
    const std::string name = "r" + std::to_string(i);
    tight.regions.push_back({name, {static_cast<Addr>(i) * 0x2000, 0x1000}});
    tight.set("guest", name, Permission::Prohibited);
  }
  CHECK_THROWS_AS(compile_policy(tight, {{ProcessorId{0}, "base"}, {ProcessorId{1}, "guest"}}), Error);
  CHECK(parse_permission("read-only") == Permission::ReadOnly);
}
