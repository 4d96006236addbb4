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

#include <sstream>

#include "doctest.h"
#include "secpart/machine/machine.hpp"

using namespace secpart;
using namespace secpart::machine;

namespace {

std::unique_ptr<Machine> identity_machine(std::uint32_t cpus = 2) {
  MachineConfig cfg;
  cfg.processor_count = cpus;
  auto m = Machine::build(cfg);
  Word t = m->add_page_table(PageTable::identity(4096, {0, 1u << 20}));
  for (std::uint32_t i = 0; i < cpus; ++i) {
    auto ctx = m->snapshot_context(ProcessorId{i});
    ctx.system.translation_base = t;
    m->restore_context(ProcessorId{i}, ctx);
  }
  return m;
}

struct Recorder : MachineObserver {
  std::vector<MachineEvent> events;
  void on_event(const MachineEvent& e) override { events.push_back(e); }
};

Task<void> writer_body(ThreadContext& ctx, Addr a, Word v) {
  co_await ctx.write(a, v);
  co_await ctx.block();
  co_await ctx.write(a, v + 1);
}

}  // namespace

TEST_CASE("build rejects bad configs") {
  MachineConfig cfg;
  cfg.processor_count = 1;
  CHECK_THROWS_AS(Machine::build(cfg), Error);
  cfg.processor_count = 3;
  cfg.page_size = 3000;
  CHECK_THROWS_AS(Machine::build(cfg), Error);
  cfg.page_size = 4096;
  cfg.slaves = {{"a", {0x1000, 0x2000}}, {"b", {0x2000, 0x1000}}};
  CHECK_THROWS_AS(Machine::build(cfg), Error);
}

TEST_CASE("reference platforms build halted") {
  auto amp = Machine::build(MachineConfig::amp3());
  CHECK(amp->processor_count() == 3);
  auto smp = Machine::build(MachineConfig::smp4());
  CHECK(smp->processor_count() == 4);
  for (std::uint32_t i = 0; i < 4; ++i) {
    CHECK(smp->processor(ProcessorId{i}).run_state == RunState::Halted);
    CHECK(smp->snapshot_context(ProcessorId{i}) == DomainContext{});
  }
  CHECK(smp->now() == 0);
  auto rep = smp->step();
  CHECK(rep.idle());
}

TEST_CASE("access round trip, page fault and swap") {
  auto m = identity_machine();
  ProcessorId p0{0};
  CHECK(m->access(p0, 0x100, AccessKind::Write, 42).ok());
  CHECK(m->access(p0, 0x100, AccessKind::Read).value == 42);
  auto pf = m->access(p0, 2u << 20, AccessKind::Read);
  REQUIRE(pf.fault);
  CHECK(pf.fault->kind == FaultKind::PageFault);
  CHECK(pf.fault->step == m->now());
  CHECK(m->atomic_swap(p0, 0x200, 1).value == 0);
  CHECK(m->atomic_swap(p0, 0x200, 1).value == 1);
  CHECK(m->peek(0x200) == 1);
}

TEST_CASE("blocked write leaves RAM unchanged") {
  auto m = identity_machine();
  m->poke(0x3000, 7);
  CHECK_FALSE(m->bmu_set_controllers(ProcessorId{0}, {ProcessorId{0}}));
  CHECK_FALSE(m->bmu_set_entry(ProcessorId{0}, ProcessorId{1}, 0, bmu::RangeEntry{{0x3000, 0x1000}, bmu::KindSet::writes()}));
  auto r = m->access(ProcessorId{1}, 0x3000, AccessKind::Write, 9);
  REQUIRE(r.fault);
  CHECK(r.fault->kind == FaultKind::BusError);
  CHECK(r.fault->address == 0x3000);
  CHECK(m->peek(0x3000) == 7);
  CHECK(m->access(ProcessorId{1}, 0x3000, AccessKind::Read).value == 7);
}

TEST_CASE("two processors swapping the same word: exactly one sees zero") {
  for (int order = 0; order < 2; ++order) {
    auto m = identity_machine();
    ProcessorId first{static_cast<std::uint32_t>(order)}, second{static_cast<std::uint32_t>(1 - order)};
    Word a = m->atomic_swap(first, 0x40, 1).value;
    Word b = m->atomic_swap(second, 0x40, 1).value;
    CHECK((a == 0) + (b == 0) == 1);
  }
}

TEST_CASE("ipi vectors collapse and are delivered lowest first") {
  auto m = identity_machine();
  ProcessorId p1{1};
  std::vector<std::uint32_t> seen;
  m->set_irq_handler(p1, 3, [&](ProcessorId, std::uint32_t v) { seen.push_back(v); });
  m->set_irq_handler(p1, 5, [&](ProcessorId, std::uint32_t v) { seen.push_back(v); });
  m->post_ipi(ProcessorId{0}, p1, 5);
  m->post_ipi(ProcessorId{0}, p1, 3);
  m->post_ipi(ProcessorId{0}, p1, 5);
  CHECK(m->pending_ipis(p1).count() == 2);
  // p1 has no script: give it a thread so it is a live kernel.
  auto body = [](ThreadContext& ctx) -> Task<void> { return [](ThreadContext& c) -> Task<void> { co_await c.block(); }(ctx); };
  m->spawn(p1, "idle", body);
  m->run(10);
  CHECK(seen == std::vector<std::uint32_t>{3, 5});
}

TEST_CASE("masked processor keeps ipi pending until unmasked") {
  auto m = identity_machine();
  ProcessorId p1{1};
  std::vector<Word> prog_words;
  ProgramBuilder b(7);
  b.label("top").mask().nop().nop().unmask().label("spin").nop().branch("spin");
  auto loaded = load_program(*m, b.build(), 0x10000, 0x10000);
  int delivered = 0;
  Step when = 0;
  m->set_irq_handler(p1, 2, [&](ProcessorId, std::uint32_t) { ++delivered; when = m->now(); });
  auto ctx = m->snapshot_context(p1);
  ctx.pc = loaded.entry();
  m->start(p1, ctx);
  m->step();  // mask
  m->post_ipi(ProcessorId{0}, p1, 2);
  m->run(2);
  CHECK(delivered == 0);
  m->run(4);
  CHECK(delivered == 1);
  CHECK(m->processor(p1).run_state == RunState::Running);
}

TEST_CASE("script interrupt entry and return") {
  auto m = identity_machine();
  ProcessorId p1{1};
  ProgramBuilder main(1);
  main.label("loop").store_imm(MemOperand::at(0x8000), 1).wfi().branch("loop");
  auto lm = load_program(*m, main.build(), 0x10000, 0x10000);
  ProgramBuilder handler(2);
  handler.store_imm(MemOperand::at(0x8004), 0xbeef).reti();
  auto lh = load_program(*m, handler.build(), 0x20000 + 4 * kVectorStride, 0x20000 + 4 * kVectorStride);
  auto ctx = m->snapshot_context(p1);
  ctx.pc = lm.entry();
  ctx.system.vector_base = 0x20000;
  m->start(p1, ctx);
  m->run(5);
  CHECK(m->processor(p1).run_state == RunState::WaitingForInterrupt);
  m->post_ipi(ProcessorId{0}, p1, 4);
  CHECK(m->processor(p1).run_state == RunState::Running);
  m->run(4);
  CHECK(m->peek(0x8004) == 0xbeef);
  CHECK(m->faults().empty());
  CHECK_FALSE(m->processor(p1).interrupt_mask());
  (void)lh;
}

TEST_CASE("page-table switch to a table without the code raises UnexpectedFlow") {
  auto m = identity_machine();
  ProcessorId p1{1};
  PageTable other(4096);
  other.map({0x10000, 0x50000, 0x1000});  // same vaddr, different bytes
  Word t2 = m->add_page_table(other);
  ProgramBuilder b(3);
  b.set_ptb(t2).nop().halt();
  auto l = load_program(*m, b.build(), 0x10000, 0x10000);
  auto ctx = m->snapshot_context(p1);
  ctx.pc = l.entry();
  m->start(p1, ctx);
  m->run(5);
  REQUIRE(m->faults().size() == 1);
  CHECK(m->faults()[0].kind == FaultKind::UnexpectedFlow);
  CHECK(m->faults()[0].address == 0x10020);
  CHECK(m->processor(p1).run_state == RunState::Halted);
}

TEST_CASE("snapshot and restore round trip") {
  auto m = identity_machine();
  DomainContext c;
  for (std::size_t i = 0; i < 8; ++i) c.general[i] = static_cast<Word>(i * 3 + 1);
  c.banked5[1][4] = 99;
  c.banked2[5][1] = 77;
  c.status_current = 0x1d3;
  c.pc = 0x0ffb0000;
  c.system.translation_base = 1;
  m->restore_context(ProcessorId{0}, c);
  CHECK(m->snapshot_context(ProcessorId{0}) == c);
  auto w = c.to_words();
  CHECK(DomainContext::from_words(w) == c);
  CHECK(w[DomainContext::kPcWord] == c.pc);
  CHECK(w[DomainContext::kStatusCurrentWord] == c.status_current);
  CHECK(w[DomainContext::kTranslationBaseWord] == c.system.translation_base);
}

TEST_CASE("threads block, latch wakes and run round robin") {
  auto m = identity_machine();
  ThreadBody body = [](ThreadContext& ctx) { return writer_body(ctx, 0x500, 10); };
  Pid pid = m->spawn(ProcessorId{1}, "w", body);
  m->run(5);
  CHECK(m->peek(0x500) == 10);
  CHECK(m->thread_state(pid) == ThreadState::Blocked);
  m->wake(pid);
  m->run(5);
  CHECK(m->peek(0x500) == 11);
  CHECK(m->thread_state(pid) == ThreadState::Done);
}

TEST_CASE("identical runs produce identical traces") {
  auto once = [] {
    auto m = identity_machine(3);
    std::ostringstream out;
    CsvTraceWriter w(out);
    m->add_observer(&w);
    for (std::uint32_t p = 1; p < 3; ++p) {
      ThreadBody body = [p](ThreadContext& ctx) -> Task<void> {
        return [](ThreadContext& c, std::uint32_t k) -> Task<void> {
          for (int i = 0; i < 20; ++i) co_await c.swap(0x900, k);
        }(ctx, p);
      };
      m->spawn(ProcessorId{p}, "s", body);
    }
    m->run(100);
    return out.str();
  };
  CHECK(once() == once());
}
