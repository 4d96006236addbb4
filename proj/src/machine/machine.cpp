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

#include "secpart/machine/machine.hpp"

#include <algorithm>
#include <ostream>

#include <fmt/format.h>

namespace secpart::machine {

namespace {

constexpr std::uint32_t kFrameShift = 12;
constexpr std::uint32_t kFrameWords = 1024;

Addr effective(const Instruction& ins, const ProcessorState& st) {
  Addr a = ins.a + st.id.value * ins.stride;
  if (ins.base_reg != kNoBaseReg) a += st.regs.general[ins.base_reg];
  return a;
}

}  // namespace

// -- HostThread / ThreadContext ----------------------------------------------

HostThread::HostThread(Machine& m, ProcessorId p, Pid id, std::string n)
    : machine(m), proc(p), pid(id), name(std::move(n)), context(this) {}

void HostThread::advance() {
  if (state != ThreadState::Runnable || !resume_point) return;
  auto h = std::exchange(resume_point, {});
  h.resume();
  if (body.handle().done()) {
    auto err = body.handle().promise().error;
    if (err) {
      state = ThreadState::Failed;
      try {
        std::rethrow_exception(err);
      } catch (const std::exception& e) {
        error = e.what();
      } catch (...) {
        error = "unknown exception";
      }
    } else {
      state = ThreadState::Done;
    }
    pending.reset();
  }
}

void ThreadContext::OpAwaiter::await_suspend(std::coroutine_handle<> h) noexcept {
  thread->pending = request;
  thread->resume_point = h;
}

BusResult ThreadContext::OpAwaiter::await_resume() const noexcept { return thread->result; }

bool ThreadContext::BlockAwaiter::await_suspend(std::coroutine_handle<> h) noexcept {
  if (thread->wake_latched) {
    thread->wake_latched = false;
    return false;
  }
  thread->state = ThreadState::Blocked;
  thread->resume_point = h;
  return true;
}

ProcessorId ThreadContext::proc() const { return thread_->proc; }
Pid ThreadContext::pid() const { return thread_->pid; }
Machine& ThreadContext::machine() const { return thread_->machine; }

// -- construction --------------------------------------------------------------

Machine::Machine(MachineConfig config) : config_(std::move(config)), rng_(config_.rng_seed) {
  config_.validate();
  const auto n = config_.processor_count;
  cores_.resize(n);
  std::set<ProcessorId> all;
  for (std::uint32_t i = 0; i < n; ++i) {
    cores_[i].state.id = ProcessorId{i};
    all.insert(ProcessorId{i});
  }
  // Reset state: every processor is trusted until a policy is installed.
  matrix_ = bmu::AccessMatrix(n, all, bmu::kDefaultEntriesPerProcessor);
  last_proc_ = n - 1;
}

Machine::~Machine() { threads_.clear(); }

Machine::Core& Machine::core(ProcessorId p) {
  if (p.value >= cores_.size()) throw Error(Errc::Validation, fmt::format("no processor {}", p.value));
  return cores_[p.value];
}

const Machine::Core& Machine::core(ProcessorId p) const {
  if (p.value >= cores_.size()) throw Error(Errc::Validation, fmt::format("no processor {}", p.value));
  return cores_[p.value];
}

// -- processors ------------------------------------------------------------------

const ProcessorState& Machine::processor(ProcessorId p) const { return core(p).state; }
ProcessorState& Machine::processor_mut(ProcessorId p) { return core(p).state; }
DomainContext Machine::snapshot_context(ProcessorId p) const { return core(p).state.regs; }

void Machine::restore_context(ProcessorId p, const DomainContext& ctx) {
  auto& c = core(p);
  c.state.regs = ctx;
  c.flow_transfer = true;
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = EventKind::ContextRestored;
    ev.proc = p;
    ev.op = "restore";
    ev.vaddr = ctx.pc;
    emit(ev);
  }
}

void Machine::start(ProcessorId p, const DomainContext& ctx) {
  restore_context(p, ctx);
  auto& c = core(p);
  c.script = true;
  c.state.run_state = RunState::Running;
}

void Machine::halt(ProcessorId p) { core(p).state.run_state = RunState::Halted; }

void Machine::reset_processor(ProcessorId p) {
  auto& c = core(p);
  for (Pid pid : c.threads) threads_.erase(pid);
  c.threads.clear();
  c.current_thread = 0;
  c.slice_used = 0;
  c.state.regs = DomainContext{};
  c.state.run_state = RunState::Halted;
  c.pending.reset();
  c.script = false;
  c.flow_transfer = true;
  c.flow_tag = 0;
}

bool Machine::script_mode(ProcessorId p) const { return core(p).script; }

// -- memory ------------------------------------------------------------------------

bool Machine::decodes(Addr paddr) const {
  if (paddr < config_.ram_size) return true;
  return std::any_of(config_.io_windows.begin(), config_.io_windows.end(),
                     [&](const AddressRange& w) { return w.contains(paddr); });
}

Word Machine::peek(Addr paddr) const {
  auto it = pages_.find(paddr >> kFrameShift);
  if (it == pages_.end()) return 0;
  return (*it->second)[(paddr & 0xfff) >> 2];
}

void Machine::poke(Addr paddr, Word value) {
  if (paddr % kWordBytes != 0) throw Error(Errc::Validation, fmt::format("unaligned poke 0x{:08x}", paddr));
  auto& frame = pages_[paddr >> kFrameShift];
  if (!frame) {
    if (value == 0) return;
    frame = std::make_unique<std::array<Word, kFrameWords>>();
    frame->fill(0);
  }
  (*frame)[(paddr & 0xfff) >> 2] = value;
}

void Machine::poke_block(Addr paddr, std::span<const Word> words) {
  for (std::size_t i = 0; i < words.size(); ++i) poke(paddr + static_cast<Addr>(i * kWordBytes), words[i]);
}

std::vector<Word> Machine::peek_block(Addr paddr, std::size_t words) const {
  std::vector<Word> out(words);
  for (std::size_t i = 0; i < words; ++i) out[i] = peek(paddr + static_cast<Addr>(i * kWordBytes));
  return out;
}

// -- translation ---------------------------------------------------------------------

Word Machine::add_page_table(PageTable table) {
  tables_.push_back(std::move(table));
  return static_cast<Word>(tables_.size());
}

PageTable& Machine::page_table(Word handle) {
  if (handle == 0 || handle > tables_.size()) throw Error(Errc::Validation, fmt::format("no page table {}", handle));
  return tables_[handle - 1];
}

const PageTable& Machine::page_table(Word handle) const {
  if (handle == 0 || handle > tables_.size()) throw Error(Errc::Validation, fmt::format("no page table {}", handle));
  return tables_[handle - 1];
}

std::optional<Addr> Machine::translate(ProcessorId p, Addr vaddr) const {
  Word h = core(p).state.regs.system.translation_base;
  if (h == 0 || h > tables_.size()) return std::nullopt;
  return tables_[h - 1].translate(vaddr);
}

// -- bus ---------------------------------------------------------------------------------

std::optional<Fault> Machine::record_fault(FaultKind kind, Addr addr, ProcessorId p) {
  Fault f{kind, addr, p, step_};
  faults_.push_back(f);
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = EventKind::Fault;
    ev.proc = p;
    ev.op = "fault";
    ev.vaddr = addr;
    ev.fault = f;
    emit(ev);
  }
  return f;
}

BusResult Machine::bus_phys(ProcessorId p, Addr paddr, Addr /*vaddr*/, AccessKind kind, Word value) {
  BusResult r;
  const auto access = BusAccess::make(p, kind, paddr);
  if (matrix_.check(access) == bmu::Decision::Blocked || paddr % kWordBytes != 0 || !decodes(paddr)) {
    r.fault = record_fault(FaultKind::BusError, paddr, p);
    return r;
  }
  switch (kind) {
    case AccessKind::Read:
    case AccessKind::Fetch: r.value = peek(paddr); break;
    case AccessKind::Write: poke(paddr, value); break;
    case AccessKind::Swap:
      r.value = peek(paddr);
      poke(paddr, value);
      break;
  }
  return r;
}

BusResult Machine::bus(ProcessorId p, Addr vaddr, AccessKind kind, Word value) {
  auto phys = translate(p, vaddr);
  if (!phys) {
    BusResult r;
    r.fault = record_fault(FaultKind::PageFault, vaddr, p);
    return r;
  }
  return bus_phys(p, *phys, vaddr, kind, value);
}

BusResult Machine::bus_swap(ProcessorId p, Addr vaddr, Word value) { return bus(p, vaddr, AccessKind::Swap, value); }

BusResult Machine::access(ProcessorId p, Addr vaddr, AccessKind kind, Word value) {
  ++step_;
  if (gate_) gate_->on_step(*this);
  BusResult r = bus(p, vaddr, kind, value);
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.proc = p;
    ev.op = to_string(kind);
    ev.vaddr = vaddr;
    ev.paddr = translate(p, vaddr).value_or(0);
    ev.access = kind;
    ev.value = kind == AccessKind::Write ? value : r.value;
    ev.fault = r.fault;
    ev.host_thread = true;
    emit(ev);
  }
  return r;
}

BusResult Machine::atomic_swap(ProcessorId p, Addr vaddr, Word value) {
  return access(p, vaddr, AccessKind::Swap, value);
}

namespace {

template <typename F>
std::optional<Fault> bmu_op(Machine& m, Step step, ProcessorId requester, F&& f) {
  auto res = f();
  if (res) {
    res->proc = requester;
    res->step = step;
  }
  (void)m;
  return res;
}

}  // namespace

std::optional<Fault> Machine::bmu_set_entry(ProcessorId requester, ProcessorId target, std::size_t slot,
                                            const std::optional<bmu::RangeEntry>& entry) {
  ++step_;
  if (gate_) gate_->on_step(*this);
  auto res = bmu_op(*this, step_, requester, [&] { return matrix_.set_entry(requester, target, slot, entry); });
  if (res) faults_.push_back(*res);
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = res ? EventKind::BmuDenied : EventKind::BmuMutation;
    ev.proc = requester;
    ev.other = target;
    ev.op = "bmu_set_entry";
    ev.value = static_cast<Word>(slot);
    ev.fault = res;
    emit(ev);
  }
  return res;
}

std::optional<Fault> Machine::bmu_replace_entries(ProcessorId requester, ProcessorId target,
                                                  std::span<const bmu::RangeEntry> entries) {
  ++step_;
  if (gate_) gate_->on_step(*this);
  auto res = bmu_op(*this, step_, requester, [&] { return matrix_.replace_entries(requester, target, entries); });
  if (res) faults_.push_back(*res);
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = res ? EventKind::BmuDenied : EventKind::BmuMutation;
    ev.proc = requester;
    ev.other = target;
    ev.op = "bmu_replace_entries";
    ev.value = static_cast<Word>(entries.size());
    ev.fault = res;
    emit(ev);
  }
  return res;
}

std::optional<Fault> Machine::bmu_set_controllers(ProcessorId requester, const std::set<ProcessorId>& next) {
  ++step_;
  if (gate_) gate_->on_step(*this);
  auto res = bmu_op(*this, step_, requester, [&] { return matrix_.set_controllers(requester, next); });
  if (res) faults_.push_back(*res);
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = res ? EventKind::BmuDenied : EventKind::BmuMutation;
    ev.proc = requester;
    ev.other = requester;
    ev.op = "bmu_set_controllers";
    ev.value = static_cast<Word>(next.size());
    ev.fault = res;
    emit(ev);
  }
  return res;
}

// -- interrupts ------------------------------------------------------------------------

void Machine::post_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector) {
  ++step_;
  if (gate_) gate_->on_step(*this);
  do_post_ipi(from, to, vector, true);
}

void Machine::do_post_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector, bool gated) {
  if (to.value >= cores_.size() || vector >= kMaxVectors)
    throw Error(Errc::Validation, fmt::format("bad ipi cpu{} vector {}", to.value, vector));
  if (gated && gate_ && !gate_->admit(*this, from, to, vector)) return;
  raise_ipi(from, to, vector);
}

void Machine::raise_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector) {
  auto& c = core(to);
  if (vector >= kMaxVectors) throw Error(Errc::Validation, fmt::format("bad vector {}", vector));
  const bool collapsed = c.pending.test(vector);
  c.pending.set(vector);
  if (c.state.run_state == RunState::WaitingForInterrupt && !c.state.interrupt_mask())
    c.state.run_state = RunState::Running;
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = collapsed ? EventKind::IpiCollapsed : EventKind::IpiPosted;
    ev.proc = from;
    ev.other = to;
    ev.op = collapsed ? "ipi_collapsed" : "ipi";
    ev.vector = vector;
    emit(ev);
  }
}

std::bitset<kMaxVectors> Machine::pending_ipis(ProcessorId p) const { return core(p).pending; }

void Machine::set_irq_handler(ProcessorId p, std::uint32_t vector, IrqHandler handler) {
  if (vector >= kMaxVectors) throw Error(Errc::Validation, fmt::format("bad vector {}", vector));
  if (handler)
    core(p).irq_handlers[vector] = std::move(handler);
  else
    core(p).irq_handlers.erase(vector);
}

// -- scheduling ----------------------------------------------------------------------------

bool Machine::active(ProcessorId p) const {
  const auto& c = core(p);
  if (c.state.run_state == RunState::Halted) return false;
  if (c.state.run_state == RunState::Running) return true;
  for (Pid pid : c.threads) {
    auto it = threads_.find(pid);
    if (it != threads_.end() && it->second->state == ThreadState::Runnable) return true;
  }
  return false;
}

bool Machine::quiescent() const {
  for (const auto& [pid, t] : threads_)
    if (t->state == ThreadState::Runnable) return false;
  for (const auto& c : cores_)
    if (c.pending.any() && c.state.run_state != RunState::Halted && !c.state.interrupt_mask()) return false;
  return true;
}

StepReport Machine::step() {
  ++step_;
  if (gate_) gate_->on_step(*this);
  StepReport rep;
  rep.step = step_;
  const auto n = static_cast<std::uint32_t>(cores_.size());
  for (std::uint32_t k = 1; k <= n; ++k) {
    const ProcessorId p{(last_proc_ + k) % n};
    if (!active(p)) continue;
    last_proc_ = p.value;
    rep.proc = p;
    execute_one(p, rep);
    break;
  }
  return rep;
}

RunReport Machine::run_until(const std::function<bool()>& predicate, Step max_steps) {
  RunReport out;
  while (true) {
    if (predicate && predicate()) {
      out.predicate_met = true;
      break;
    }
    if (out.steps >= max_steps) break;
    auto rep = step();
    ++out.steps;
    if (rep.fault) out.faults.push_back(*rep.fault);
  }
  return out;
}

void Machine::execute_one(ProcessorId p, StepReport& report) {
  if (deliver_interrupt(p, report)) return;
  if (HostThread* t = pick_thread(p)) {
    execute_thread(p, *t, report);
    refresh_thread_mode(p);
    return;
  }
  auto& c = core(p);
  if (c.script && c.state.run_state == RunState::Running) {
    execute_script(p, report);
  } else {
    refresh_thread_mode(p);
    report.op = "idle";
  }
}

bool Machine::deliver_interrupt(ProcessorId p, StepReport& report) {
  auto& c = core(p);
  if (c.pending.none() || c.state.interrupt_mask()) return false;
  std::uint32_t v = 0;
  while (!c.pending.test(v)) ++v;
  c.pending.reset(v);
  report.op = "irq";
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.kind = EventKind::IrqTaken;
    ev.proc = p;
    ev.op = "irq";
    ev.vector = v;
    ev.vaddr = c.state.regs.pc;
    emit(ev);
  }
  if (auto it = c.irq_handlers.find(v); it != c.irq_handlers.end()) {
    auto handler = it->second;
    handler(p, v);
    refresh_thread_mode(p);
    return true;
  }
  if (c.script) {
    auto& r = c.state.regs;
    r.lr(BankedMode::Irq) = r.pc;
    r.status_saved = r.status_current;
    r.status_current = (r.status_current & ~kModeMask) | kModeIrq | kStatusIrqMask;
    r.pc = r.system.vector_base + v * kVectorStride;
    c.flow_transfer = true;
    c.state.run_state = RunState::Running;
  }
  return true;
}

HostThread* Machine::pick_thread(ProcessorId p) {
  auto& c = core(p);
  const auto n = c.threads.size();
  if (n == 0) return nullptr;
  auto runnable = [&](std::size_t idx) -> HostThread* {
    auto it = threads_.find(c.threads[idx]);
    if (it == threads_.end() || it->second->state != ThreadState::Runnable) return nullptr;
    return it->second.get();
  };
  if (c.current_thread >= n) c.current_thread = 0;
  if (auto* t = runnable(c.current_thread); t && c.slice_used < config_.time_slice) return t;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto idx = (c.current_thread + k) % n;
    if (auto* t = runnable(idx)) {
      c.current_thread = idx;
      c.slice_used = 0;
      return t;
    }
  }
  return nullptr;
}

void Machine::refresh_thread_mode(ProcessorId p) {
  auto& c = core(p);
  if (c.script || c.state.run_state == RunState::Halted) return;
  bool busy = c.pending.any() && !c.state.interrupt_mask();
  for (Pid pid : c.threads) {
    if (busy) break;
    auto it = threads_.find(pid);
    busy = it != threads_.end() && it->second->state == ThreadState::Runnable;
  }
  c.state.run_state = busy ? RunState::Running : RunState::WaitingForInterrupt;
}

void Machine::execute_thread(ProcessorId p, HostThread& t, StepReport& report) {
  auto& c = core(p);
  if (!t.started) {
    t.started = true;
    t.resume_point = t.body.handle();
  }
  if (!t.pending) t.advance();
  ++c.slice_used;
  report.op = "thread";
  if (!t.pending) return;  // finished or blocked without touching the bus

  const ThreadRequest req = *t.pending;
  t.pending.reset();
  BusResult r;
  AccessKind kind = AccessKind::Read;
  switch (req.kind) {
    case ThreadRequest::Kind::Read: r = bus(p, req.vaddr, kind = AccessKind::Read, 0); break;
    case ThreadRequest::Kind::Fetch: r = bus(p, req.vaddr, kind = AccessKind::Fetch, 0); break;
    case ThreadRequest::Kind::Write: r = bus(p, req.vaddr, kind = AccessKind::Write, req.value); break;
    case ThreadRequest::Kind::Swap: r = bus_swap(p, req.vaddr, req.value), kind = AccessKind::Swap; break;
    case ThreadRequest::Kind::Ipi: do_post_ipi(p, req.target, req.vector, true); break;
    case ThreadRequest::Kind::Local: break;
    case ThreadRequest::Kind::BmuEntries:
    case ThreadRequest::Kind::BmuControllers: {
      auto f = req.kind == ThreadRequest::Kind::BmuEntries ? matrix_.replace_entries(p, req.target, req.entries)
                                                           : matrix_.set_controllers(p, req.procs);
      if (f) {
        f->proc = p;
        f->step = step_;
        faults_.push_back(*f);
        r.fault = f;
      }
      if (observed()) {
        MachineEvent ev;
        ev.step = step_;
        ev.kind = f ? EventKind::BmuDenied : EventKind::BmuMutation;
        ev.proc = p;
        ev.other = req.target;
        ev.op = req.label;
        ev.fault = f;
        ev.host_thread = true;
        ev.pid = t.pid;
        emit(ev);
      }
      t.result = r;
      report.op = req.label;
      report.fault = r.fault;
      t.advance();
      return;
    }
  }
  t.result = r;
  report.op = req.label;
  report.fault = r.fault;
  if (observed()) {
    MachineEvent ev;
    ev.step = step_;
    ev.proc = p;
    ev.op = req.label;
    ev.host_thread = true;
    ev.pid = t.pid;
    ev.fault = r.fault;
    if (req.kind == ThreadRequest::Kind::Ipi) {
      ev.other = req.target;
      ev.vector = req.vector;
    } else if (req.kind != ThreadRequest::Kind::Local) {
      ev.vaddr = req.vaddr;
      ev.paddr = translate(p, req.vaddr).value_or(0);
      ev.access = kind;
      ev.value = kind == AccessKind::Write ? req.value : r.value;
    }
    emit(ev);
  }
  t.advance();
}

void Machine::execute_script(ProcessorId p, StepReport& report) {
  auto& c = core(p);
  auto& st = c.state;
  auto& r = st.regs;
  const Addr pc = r.pc;

  auto halt_with = [&](std::optional<Fault> f) {
    st.run_state = RunState::Halted;
    report.fault = f;
  };

  // Instruction fetch: translation, bus check, decode, flow continuity.
  auto phys = translate(p, pc);
  if (!phys || pc % kInstructionBytes != 0) {
    report.op = "fetch";
    return halt_with(record_fault(FaultKind::UnexpectedFlow, pc, p));
  }
  const auto check = BusAccess::make(p, AccessKind::Fetch, *phys);
  if (matrix_.check(check) == bmu::Decision::Blocked || !decodes(*phys) ||
      !decodes(*phys + kInstructionBytes - kWordBytes)) {
    report.op = "fetch";
    return halt_with(record_fault(FaultKind::BusError, *phys, p));
  }
  std::array<Word, kInstructionWords> words{};
  for (std::uint32_t i = 0; i < kInstructionWords; ++i) words[i] = peek(*phys + i * kWordBytes);
  auto decoded = Instruction::decode(words);
  if (!decoded) {
    report.op = "fetch";
    return halt_with(record_fault(FaultKind::UnexpectedFlow, pc, p));
  }
  const Instruction ins = *decoded;
  if (c.flow_transfer) {
    c.flow_tag = ins.tag;
    c.flow_transfer = false;
  } else if (ins.tag != c.flow_tag) {
    report.op = "fetch";
    return halt_with(record_fault(FaultKind::UnexpectedFlow, pc, p));
  }

  report.op = to_string(ins.op);
  MachineEvent ev;
  const bool obs = observed();
  if (obs) {
    ev.step = step_;
    ev.proc = p;
    ev.op = report.op;
    ev.opcode = ins.op;
    ev.vaddr = pc;
    ev.paddr = *phys;
    ev.access = AccessKind::Fetch;
    ev.value = ins.imm;
  }
  auto data = [&](Addr va, AccessKind k, Word v) {
    BusResult res = k == AccessKind::Swap ? bus_swap(p, va, v) : bus(p, va, k, v);
    if (obs) {
      ev.vaddr = va;
      ev.paddr = translate(p, va).value_or(0);
      ev.access = k;
      ev.value = k == AccessKind::Write ? v : res.value;
      ev.fault = res.fault;
    }
    return res;
  };
  auto finish = [&] {
    if (obs) emit(ev);
  };

  Addr next = pc + kInstructionBytes;
  const Addr ea = effective(ins, st);
  switch (ins.op) {
    case Opcode::Nop:
    case Opcode::Label:
    case Opcode::Mark:
    case Opcode::kCount: break;
    case Opcode::Load: {
      auto res = data(ea, AccessKind::Read, 0);
      if (!res.ok()) return finish(), halt_with(res.fault);
      r.general[ins.reg] = res.value;
      break;
    }
    case Opcode::Store:
    case Opcode::StoreImm: {
      auto res = data(ea, AccessKind::Write, ins.op == Opcode::Store ? r.general[ins.reg] : ins.imm);
      if (!res.ok()) return finish(), halt_with(res.fault);
      break;
    }
    case Opcode::Swap: {
      auto res = data(ea, AccessKind::Swap, ins.imm);
      if (!res.ok()) return finish(), halt_with(res.fault);
      r.general[ins.reg] = res.value;
      break;
    }
    case Opcode::FetchProbe: {
      auto res = data(ea, AccessKind::Fetch, 0);
      if (!res.ok()) return finish(), halt_with(res.fault);
      r.general[ins.reg] = res.value;
      break;
    }
    case Opcode::MovImm: r.general[ins.reg] = ins.imm; break;
    case Opcode::AddImm: r.general[ins.reg] += ins.imm; break;
    case Opcode::Ipi:
      if (ins.a >= cores_.size() || ins.imm >= kMaxVectors) {
        finish();
        return halt_with(record_fault(FaultKind::UnexpectedFlow, pc, p));
      }
      if (obs) {
        ev.other = ProcessorId{ins.a};
        ev.vector = ins.imm;
      }
      do_post_ipi(p, ProcessorId{ins.a}, ins.imm, true);
      break;
    case Opcode::SetPtb: r.system.translation_base = ins.imm; break;
    case Opcode::SetPtbMem: {
      auto res = data(ea + DomainContext::kTranslationBaseWord * kWordBytes, AccessKind::Read, 0);
      if (!res.ok()) return finish(), halt_with(res.fault);
      r.system.translation_base = res.value;
      break;
    }
    case Opcode::SetCoherence: r.system.coherence = ins.imm; break;
    case Opcode::Mask: st.set_interrupt_mask(true); break;
    case Opcode::Unmask: st.set_interrupt_mask(false); break;
    case Opcode::Wfi:
      if (c.pending.none() || st.interrupt_mask()) st.run_state = RunState::WaitingForInterrupt;
      break;
    case Opcode::Halt:
      next = pc;
      st.run_state = RunState::Halted;
      break;
    case Opcode::Branch: next = ins.a; break;
    case Opcode::BranchZero:
      if (r.general[ins.reg] == 0) next = ins.a;
      break;
    case Opcode::BranchNonZero:
      if (r.general[ins.reg] != 0) next = ins.a;
      break;
    case Opcode::DecBranchNonZero:
      if (--r.general[ins.reg] != 0) next = ins.a;
      break;
    case Opcode::Hook: {
      auto it = hooks_.find(ins.imm);
      if (it != hooks_.end()) {
        if (auto f = it->second(p)) {
          faults_.push_back(*f);
          finish();
          return halt_with(f);
        }
      }
      break;
    }
    case Opcode::SaveCtx:
    case Opcode::SaveCtxAt: {
      DomainContext ctx = r;
      if (ins.op == Opcode::SaveCtx) {
        ctx.pc = r.lr(BankedMode::Irq);
        ctx.status_current = r.status_saved;
      } else {
        ctx.pc = ins.imm;
      }
      const auto w = ctx.to_words();
      for (std::size_t i = 0; i < w.size(); ++i) {
        auto res = data(ea + static_cast<Addr>(i * kWordBytes), AccessKind::Write, w[i]);
        if (!res.ok()) return finish(), halt_with(res.fault);
      }
      break;
    }
    case Opcode::LoadCtx: {
      std::array<Word, DomainContext::kWords> w{};
      for (std::size_t i = 0; i < w.size(); ++i) {
        auto res = data(ea + static_cast<Addr>(i * kWordBytes), AccessKind::Read, 0);
        if (!res.ok()) return finish(), halt_with(res.fault);
        w[i] = res.value;
      }
      DomainContext ctx = DomainContext::from_words(w);
      ctx.pc = r.pc;
      ctx.status_current = r.status_current;
      ctx.system.translation_base = r.system.translation_base;
      r = ctx;
      break;
    }
    case Opcode::Resume: {
      auto s = data(ea + DomainContext::kStatusCurrentWord * kWordBytes, AccessKind::Read, 0);
      if (!s.ok()) return finish(), halt_with(s.fault);
      auto target = data(ea + DomainContext::kPcWord * kWordBytes, AccessKind::Read, 0);
      if (!target.ok()) return finish(), halt_with(target.fault);
      r.status_current = s.value;
      next = target.value;
      c.flow_transfer = true;
      break;
    }
    case Opcode::Reti:
      next = r.lr(BankedMode::Irq);
      r.status_current = r.status_saved;
      c.flow_transfer = true;
      break;
  }
  r.pc = next;
  finish();
  if (ins.op == Opcode::Resume && obs) {
    MachineEvent rest;
    rest.step = step_;
    rest.kind = EventKind::ContextRestored;
    rest.proc = p;
    rest.op = "restore";
    rest.vaddr = next;
    emit(rest);
  }
}

// -- host threads ------------------------------------------------------------------------------

Pid Machine::spawn(ProcessorId p, std::string name, const ThreadBody& body) {
  auto& c = core(p);
  const Pid pid = next_pid_++;
  auto t = std::make_unique<HostThread>(*this, p, pid, std::move(name));
  t->body = body(t->context);
  c.threads.push_back(pid);
  threads_.emplace(pid, std::move(t));
  if (!c.script) c.state.run_state = RunState::Running;
  return pid;
}

void Machine::wake(Pid pid) {
  auto it = threads_.find(pid);
  if (it == threads_.end()) return;
  auto& t = *it->second;
  if (t.state == ThreadState::Blocked) {
    t.state = ThreadState::Runnable;
    auto& c = core(t.proc);
    if (!c.script && c.state.run_state == RunState::WaitingForInterrupt) c.state.run_state = RunState::Running;
  } else if (t.state == ThreadState::Runnable) {
    t.wake_latched = true;
  }
}

void Machine::kill(Pid pid) {
  auto it = threads_.find(pid);
  if (it == threads_.end()) return;
  const ProcessorId p = it->second->proc;
  auto& c = core(p);
  auto pos = std::find(c.threads.begin(), c.threads.end(), pid);
  if (pos != c.threads.end()) {
    const auto idx = static_cast<std::size_t>(pos - c.threads.begin());
    c.threads.erase(pos);
    if (c.current_thread > idx) --c.current_thread;
  }
  threads_.erase(it);
  refresh_thread_mode(p);
}

ThreadState Machine::thread_state(Pid pid) const {
  auto it = threads_.find(pid);
  if (it == threads_.end()) throw Error(Errc::UnknownId, fmt::format("no thread {}", pid));
  return it->second->state;
}

std::optional<std::string> Machine::thread_error(Pid pid) const {
  auto it = threads_.find(pid);
  if (it == threads_.end()) throw Error(Errc::UnknownId, fmt::format("no thread {}", pid));
  return it->second->error;
}

ProcessorId Machine::thread_processor(Pid pid) const {
  auto it = threads_.find(pid);
  if (it == threads_.end()) throw Error(Errc::UnknownId, fmt::format("no thread {}", pid));
  return it->second->proc;
}

const std::string& Machine::thread_name(Pid pid) const {
  auto it = threads_.find(pid);
  if (it == threads_.end()) throw Error(Errc::UnknownId, fmt::format("no thread {}", pid));
  return it->second->name;
}

std::vector<Pid> Machine::threads_on(ProcessorId p) const { return core(p).threads; }

bool Machine::has_live_threads(ProcessorId p) const {
  for (Pid pid : core(p).threads) {
    auto it = threads_.find(pid);
    if (it != threads_.end() &&
        (it->second->state == ThreadState::Runnable || it->second->state == ThreadState::Blocked))
      return true;
  }
  return false;
}

// -- hooks, observers -------------------------------------------------------------------------

void Machine::set_hook(Word id, HookFn fn) {
  if (fn)
    hooks_[id] = std::move(fn);
  else
    hooks_.erase(id);
}

void Machine::add_observer(MachineObserver* obs) { observers_.push_back(obs); }

void Machine::remove_observer(MachineObserver* obs) { std::erase(observers_, obs); }

void Machine::emit(MachineEvent ev) {
  for (auto* o : observers_) o->on_event(ev);
}

std::vector<Fault> Machine::faults_since(Step step, std::optional<ProcessorId> p) const {
  std::vector<Fault> out;
  for (const auto& f : faults_)
    if (f.step >= step && (!p || f.proc == *p)) out.push_back(f);
  return out;
}

// -- trace ------------------------------------------------------------------------------------------

CsvTraceWriter::CsvTraceWriter(std::ostream& out, bool header) : out_(out) {
  if (header) out_ << "step,proc,op,vaddr,paddr,kind,result\n";
}

void CsvTraceWriter::on_event(const MachineEvent& ev) {
  std::string result = ev.fault ? std::string(to_string(ev.fault->kind)) : "ok";
  std::string kind;
  switch (ev.kind) {
    case EventKind::MicroOp: kind = std::string(to_string(ev.access)); break;
    case EventKind::IrqTaken: kind = fmt::format("irq{}", ev.vector); break;
    case EventKind::IpiPosted: kind = fmt::format("ipi{}->cpu{}", ev.vector, ev.other.value); break;
    case EventKind::IpiCollapsed: kind = fmt::format("ipi{}->cpu{}(collapsed)", ev.vector, ev.other.value); break;
    case EventKind::BmuMutation: kind = fmt::format("bmu->cpu{}", ev.other.value); break;
    case EventKind::BmuDenied: kind = fmt::format("bmu->cpu{}", ev.other.value); break;
    case EventKind::ContextRestored: kind = "context"; break;
    case EventKind::Fault: kind = "fault"; break;
  }
  out_ << fmt::format("{},{},{},0x{:08x},0x{:08x},{},{}\n", ev.step, ev.proc.value, ev.op, ev.vaddr, ev.paddr, kind,
                      result);
}

}  // namespace secpart::machine
