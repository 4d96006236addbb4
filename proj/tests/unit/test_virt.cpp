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

#include "doctest.h"
#include "secpart/harness/platform.hpp"

using namespace secpart;
using namespace secpart::harness;

namespace {

std::vector<DomainDecl> four_domains() {
  return {{"A", DomainKind::Operator},
          {"B", DomainKind::Trusted},
          {"C", DomainKind::Untrusted},
          {"D", DomainKind::Manufacturer}};
}

PlatformSpec amp3_spec() {
  auto s = PlatformSpec::amp(3, four_domains());
  s.boot = {{ProcessorId{1}, "A"}, {ProcessorId{2}, "B"}};
  return s;
}

}  // namespace

TEST_CASE("switch saves the displaced context and restores the target") {
  Platform pf(amp3_spec());
  auto& m = pf.machine();
  auto& vmm = pf.vmm();
  m.run(3000);
  const ProcessorId k{1};
  const auto a = pf.domain("A");
  const auto c = pf.domain("C");
  auto displaced = vmm.switch_domain(c, k);
  const auto& r = vmm.records().back();
  CHECK(r.ok);
  CHECK(r.ordering_ok());
  CHECK(r.restored_exact);
  CHECK(r.saved_exact);
  CHECK(displaced == vmm.store().at(a).context);
  CHECK(vmm.store().at(a).dormant());
  CHECK(vmm.occupant(k) == c);
  CHECK(m.faults().empty());

  // Back to A: it resumes with exactly the registers it was displaced with.
  m.run(1000);
  vmm.switch_domain(a, k);
  CHECK(vmm.records().back().restored_exact);
  CHECK(vmm.records().back().ordering_ok());
  m.run(2000);
  CHECK(m.faults().empty());
}

TEST_CASE("identity switch and guards") {
  Platform pf(amp3_spec());
  auto& vmm = pf.vmm();
  const auto a = pf.domain("A");
  const auto before = vmm.records().size();
  vmm.switch_domain(a, ProcessorId{1});
  CHECK(vmm.records().size() == before);
  CHECK_THROWS_AS(vmm.switch_domain(DomainId{99}, ProcessorId{1}), Error);
  CHECK_THROWS_AS(vmm.switch_domain(a, ProcessorId{0}), Error);
  try {
    vmm.switch_domain(a, ProcessorId{2});
    FAIL("running elsewhere");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Protocol);
  }
}

TEST_CASE("untrusted domain cannot write base RAM or the handler text") {
  auto s = amp3_spec();
  s.boot[ProcessorId{2}] = "C";
  Platform pf(s);
  auto& m = pf.machine();
  const ProcessorId k{2};
  CHECK_FALSE(m.access(k, 0x100, AccessKind::Write, 7).ok());
  CHECK(m.peek(0x100) == 0);
  const Addr text = pf.switch_layout().shared_vaddr;
  const Word word = m.peek(pf.switch_layout().common_text.base);
  CHECK_FALSE(m.access(k, text, AccessKind::Write, 0).ok());
  CHECK_FALSE(m.access(k, text, AccessKind::Read).ok());
  CHECK(m.peek(pf.switch_layout().common_text.base) == word);
  // Reads of slave B are permitted, writes are not.
  CHECK(m.access(k, layout::kSlaveB.base, AccessKind::Read).ok());
  CHECK_FALSE(m.access(k, layout::kSlaveB.base, AccessKind::Write, 1).ok());
  // The text stays executable: switches still work.
  pf.vmm().switch_domain(pf.domain("D"), k);
  CHECK(pf.vmm().records().back().ok);
}

TEST_CASE("idc direct and via master") {
  Platform pf(amp3_spec());
  auto& vmm = pf.vmm();
  auto rep = vmm.idc_send(pf.domain("A"), pf.domain("B"), {1, 2, 3});
  CHECK(rep.path == virt::IdcPath::Direct);
  rep = vmm.idc_send(pf.domain("A"), pf.domain("C"), {4, 5});
  CHECK(rep.path == virt::IdcPath::ViaMaster);
  CHECK(rep.activated_on == ProcessorId{2});
  CHECK(vmm.occupant(ProcessorId{2}) == pf.domain("C"));
  CHECK(vmm.take_message(pf.domain("C")) == std::vector<std::uint8_t>{4, 5});
  CHECK_THROWS_AS(vmm.idc_send(pf.domain("A"), pf.domain("B"), {}), Error);
}

TEST_CASE("separate, switch and merge keep the base floor") {
  auto s = PlatformSpec::smp(4, four_domains());
  Platform pf(s);
  auto& m = pf.machine();
  auto& part = pf.partitioner();
  m.run(4000);
  const ProcessorId k{3};
  part.separate(k, pf.domain("A"));
  CHECK(part.lent(k));
  CHECK(pf.base().members().size() == 3);
  CHECK(part.conservation_holds());
  auto buf = part.base_buffer(k);
  REQUIRE(buf.has_value());
  CHECK(buf->pc == pf.switch_program().label("hotadd"));
  CHECK_FALSE(m.matrix().is_controller(k));
  m.run(2000);
  part.switch_open(k, pf.domain("B"));
  m.run(2000);
  part.merge(k);
  CHECK_FALSE(part.lent(k));
  CHECK(pf.base().members().size() == 4);
  CHECK(m.matrix().is_controller(k));
  CHECK_FALSE(part.base_buffer(k).has_value());
  CHECK(pf.vmm().store().at(pf.domain("B")).dormant());
  CHECK(part.conservation_holds());
  m.run(4000);
  CHECK(m.faults().empty());
  CHECK_THROWS_AS(part.merge(k), Error);
}
