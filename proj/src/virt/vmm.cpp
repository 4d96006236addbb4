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

#include "secpart/virt/vmm.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace secpart::virt {

using machine::BankedMode;
using machine::EventKind;
using machine::MachineEvent;
using machine::Opcode;
using machine::Task;
using machine::ThreadContext;

DomainContext as_interrupted(const DomainContext& running) {
  DomainContext c = running;
  c.lr(BankedMode::Irq) = running.pc;
  c.status_saved = running.status_current;
  return c;
}

bool same_except_irq_bank(const DomainContext& a, const DomainContext& b) {
  DomainContext x = a, y = b;
  x.lr(BankedMode::Irq) = y.lr(BankedMode::Irq) = 0;
  x.status_saved = y.status_saved = 0;
  return x == y;
}

bool SwitchRecord::ordering_ok() const {
  if (!ok) return false;
  if (irqs_between_ack_and_restore != 0) return false;
  if (!(next_written > 0 || kind == "merge")) return false;
  if (next_written > 0 && !(next_written < ipi)) return false;
  if (!(ipi < ack && ack < restored)) return false;
  if (bmu > 0 && !(bmu < restored)) return false;
  if (previous_read > 0) {
    if (!(ipi < previous_written && previous_written < ack && restored < previous_read)) return false;
  }
  return true;
}

Vmm::Vmm(machine::Machine& m, HandlerLayout layout, bmu::DomainPolicy policy, VmmOptions options)
    : m_(m), layout_(layout), policy_(std::move(policy)), options_(std::move(options)) {
  if (options_.open.contains(options_.master))
    throw Error(Errc::Config, fmt::format("master cpu{} cannot be an open processor", options_.master.value));
  m_.add_observer(this);
  m_.set_hook(kHookSpurious, [this](ProcessorId p) -> std::optional<Fault> {
    protocol_errors_.push_back(fmt::format("ProtocolError: switch IPI on cpu{} with an empty next buffer", p.value));
    return std::nullopt;
  });
  master_pid_ = m_.spawn(options_.master, "master-vmm", [this](ThreadContext& c) { return master_loop(c); });
}

Vmm::~Vmm() {
  m_.kill(master_pid_);
  m_.remove_observer(this);
  m_.set_hook(kHookSpurious, {});
  if (guard_) m_.set_ipi_gate(nullptr);
}

DomainId Vmm::add_domain(const std::string& name, const std::string& policy_domain, const DomainContext& ctx) {
  if (store_.find_by_name(name)) throw Error(Errc::Validation, fmt::format("domain '{}' already exists", name));
  DomainId id{next_domain_++};
  store_.set(id, ctx, name, policy_domain);
  return id;
}

void Vmm::set_context(DomainId id, const DomainContext& ctx) { store_.set(id, ctx); }

std::optional<DomainId> Vmm::occupant(ProcessorId p) const {
  auto it = occupants_.find(p);
  if (it == occupants_.end()) return std::nullopt;
  return it->second;
}

void Vmm::set_occupant(ProcessorId p, std::optional<DomainId> d) {
  if (auto old = occupant(p)) {
    if (auto* r = store_.find(*old)) r->running_on.reset();
  }
  if (d) {
    occupants_[p] = *d;
    store_.at(*d).running_on = p;
  } else {
    occupants_.erase(p);
  }
}

std::vector<bmu::RangeEntry> Vmm::protection_entries(ProcessorId p) const {
  std::vector<bmu::RangeEntry> out;
  out.push_back({layout_.text_range(), bmu::KindSet::data()});
  const Addr block = layout_.block_paddr(p);
  if (block > layout_.data_paddr) out.push_back({{layout_.data_paddr, block - layout_.data_paddr}, bmu::KindSet::all()});
  out.push_back({{block + ivc::kWritableEnd, ivc::kBlockSize - ivc::kWritableEnd}, bmu::KindSet::writes()});
  const std::uint64_t after = std::uint64_t{block} + ivc::kBlockSize;
  const std::uint64_t end = std::uint64_t{layout_.data_paddr} + layout_.data_size;
  if (after < end) out.push_back({{static_cast<Addr>(after), static_cast<std::uint32_t>(end - after)}, bmu::KindSet::all()});
  return out;
}

std::vector<bmu::RangeEntry> Vmm::entries_for(DomainId d, ProcessorId p) const {
  const auto& rec = store_.at(d);
  const auto extra = protection_entries(p);
  return bmu::compile_entries(policy_, rec.policy_domain, extra, m_.matrix().entries_per_processor());
}

void Vmm::boot(ProcessorId p, DomainId d) {
  auto& rec = store_.at(d);
  if (!is_open(p)) throw Error(Errc::NotOpenProcessor, fmt::format("cpu{}", p.value));
  if (rec.running_on) throw Error(Errc::Protocol, fmt::format("domain '{}' already running", rec.name));
  if (m_.matrix().is_controller(p)) {
    auto next = m_.matrix().controllers();
    next.erase(p);
    if (auto f = m_.bmu_set_controllers(options_.master, next)) throw FaultError(*f);
  }
  const auto entries = entries_for(d, p);
  if (auto f = m_.bmu_replace_entries(options_.master, p, entries)) throw FaultError(*f);
  m_.start(p, rec.context);
  set_occupant(p, d);
}

DomainContext Vmm::switch_domain(DomainId target, ProcessorId p) {
  auto& rec = store_.at(target);
  if (!is_open(p)) throw Error(Errc::NotOpenProcessor, fmt::format("cpu{} is not an open processor", p.value));
  const auto from = occupant(p);
  if (from == target) return m_.snapshot_context(p);
  if (rec.running_on)
    throw Error(Errc::Protocol, fmt::format("domain '{}' is running on cpu{}", rec.name, rec.running_on->value));

  TransitionPlan plan;
  plan.kind = "switch";
  plan.proc = p;
  plan.vector = kVectorSwitch;
  plan.next = rec.context;
  plan.expected_restore = rec.context;
  plan.entries_at_ack = entries_for(target, p);
  plan.from = from;
  plan.to = target;
  const auto& r = run(plan);
  if (!r.ok) {
    if (r.fault) throw FaultError(*r.fault);
    throw Error(Errc::Timeout, fmt::format("switch of cpu{} to '{}' not acknowledged", p.value, rec.name));
  }
  if (from) store_.at(*from).context = *r.previous;
  set_occupant(p, target);
  return *r.previous;
}

const SwitchRecord& Vmm::run(TransitionPlan plan) {
  auto& req = requests_.emplace_back();
  req.plan = std::move(plan);
  req.record.kind = req.plan.kind;
  req.record.proc = req.plan.proc;
  req.record.from = req.plan.from;
  req.record.to = req.plan.to;
  req.record.requested = m_.now();
  queue_.push_back(&req);
  m_.wake(master_pid_);
  const Step budget = options_.timeout * 8 + 100'000;
  m_.run_until(
      [&] { return req.done || m_.thread_state(master_pid_) == machine::ThreadState::Failed; }, budget);
  if (m_.thread_state(master_pid_) == machine::ThreadState::Failed)
    throw Error(Errc::Protocol, "master thread failed: " + m_.thread_error(master_pid_).value_or("?"));
  if (!req.done) throw Error(Errc::Timeout, "master thread did not complete the request");
  records_.push_back(req.record);
  requests_.pop_front();
  return records_.back();
}

Task<void> Vmm::master_loop(ThreadContext& ctx) {
  for (;;) {
    while (queue_.empty()) co_await ctx.block();
    Request* r = queue_.front();
    queue_.pop_front();
    active_ = r;
    interrupted_.reset();
    co_await execute(ctx, *r);
    r->record.done = m_.now();
    active_ = nullptr;
    r->done = true;
  }
}

Task<DomainContext> Vmm::read_context(ThreadContext& ctx, Addr vaddr) {
  std::array<Word, DomainContext::kWords> w{};
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto r = co_await ctx.read(vaddr + static_cast<Addr>(i * kWordBytes));
    if (!r.ok()) throw FaultError(*r.fault);
    w[i] = r.value;
  }
  co_return DomainContext::from_words(w);
}

Task<bool> Vmm::wait_ack(ThreadContext& ctx, Request& req, Word want, Step t0) {
  const ProcessorId k = req.plan.proc;
  for (;;) {
    auto r = co_await ctx.read(layout_.vaddr(k, ivc::kAck));
    if (r.ok() && r.value == want) co_return true;
    const auto& faults = m_.faults();
    for (std::size_t i = fault_mark_; i < faults.size(); ++i) {
      if (faults[i].proc == k) {
        req.record.fault = faults[i];
        co_return false;
      }
    }
    if (m_.processor(k).run_state == machine::RunState::Halted) {
      req.record.fault = Fault{FaultKind::BusError, 0, k, m_.now()};
      co_return false;
    }
    if (m_.now() - t0 > options_.timeout) {
      req.record.timeout = true;
      co_return false;
    }
  }
}

Task<void> Vmm::rollback(ThreadContext& ctx, Request& req, Word ack_seen, const std::set<ProcessorId>& controllers,
                         const std::vector<bmu::RangeEntry>& entries) {
  const ProcessorId k = req.plan.proc;
  if (m_.matrix().controllers() != controllers) co_await ctx.bmu_controllers(controllers);
  if (!controllers.contains(k) && m_.matrix().entries(k) != entries) co_await ctx.bmu_replace(k, entries);
  if (ack_seen >= 1) {
    auto saved = co_await read_context(ctx, layout_.vaddr(k, req.plan.rollback_buffer));
    m_.start(k, saved);
  } else if (interrupted_) {
    m_.start(k, *interrupted_);
  }
  co_await ctx.write(layout_.vaddr(k, ivc::kCmd), 0);
  co_await ctx.write(layout_.vaddr(k, ivc::kGo), 0);
  req.record.phases["rollback"] = m_.now() - req.record.requested;
}

Task<void> Vmm::execute(ThreadContext& ctx, Request& req) {
  auto& plan = req.plan;
  auto& rec = req.record;
  const ProcessorId k = plan.proc;
  const Step t0 = m_.now();
  fault_mark_ = m_.faults().size();
  const auto old_controllers = m_.matrix().controllers();
  const auto old_entries = m_.matrix().entries(k);
  Step mark = t0;
  auto phase = [&](const char* name) {
    rec.phases[name] = m_.now() - mark;
    mark = m_.now();
  };

  if (plan.token_vaddr) {
    for (;;) {
      auto r = co_await ctx.swap(*plan.token_vaddr, 1);
      if (!r.ok()) {
        rec.fault = r.fault;
        co_return;
      }
      if (r.value == 0) break;
      if (m_.now() - t0 > options_.timeout) {
        rec.timeout = true;
        co_return;
      }
    }
    phase("lock");
  }
  const Step t_locked = m_.now();
  co_await ctx.write(layout_.vaddr(k, ivc::kAck), 0);
  if (plan.next) {
    const auto w = plan.next->to_words();
    for (std::size_t i = 0; i < w.size(); ++i)
      co_await ctx.write(layout_.vaddr(k, ivc::kNext) + static_cast<Addr>(i * kWordBytes), w[i]);
    co_await ctx.write(layout_.vaddr(k, ivc::kCmd), 1);
  }
  co_await ctx.ipi(k, plan.vector);
  phase("request");

  if (!co_await wait_ack(ctx, req, 1, t_locked)) {
    co_await rollback(ctx, req, 0, old_controllers, old_entries);
    if (plan.token_vaddr) co_await ctx.write(*plan.token_vaddr, 0);
    co_return;
  }
  phase("save");

  if (plan.controllers_at_ack) co_await ctx.bmu_controllers(*plan.controllers_at_ack);
  if (plan.entries_at_ack) co_await ctx.bmu_replace(k, *plan.entries_at_ack);
  co_await ctx.write(layout_.vaddr(k, ivc::kGo), 1);
  phase("reconfigure");

  if (!co_await wait_ack(ctx, req, plan.final_ack, t_locked)) {
    co_await rollback(ctx, req, 1, old_controllers, old_entries);
    if (plan.token_vaddr) co_await ctx.write(*plan.token_vaddr, 0);
    co_return;
  }
  phase("restore");

  if (plan.controllers_after) co_await ctx.bmu_controllers(*plan.controllers_after);
  if (plan.read_previous) {
    rec.previous = co_await read_context(ctx, layout_.vaddr(k, ivc::kPrevious));
    rec.saved_exact = interrupted_.has_value() && *interrupted_ == *rec.previous;
  }
  if (plan.clear_after) {
    for (std::uint32_t i = 0; i < DomainContext::kWords; ++i)
      co_await ctx.write(layout_.vaddr(k, *plan.clear_after) + i * kWordBytes, 0);
  }
  if (plan.token_vaddr) co_await ctx.write(*plan.token_vaddr, 0);
  phase("finish");
  rec.ok = true;
}

bool Vmm::in_block(ProcessorId p, Addr vaddr, std::uint32_t offset, std::uint32_t length) const {
  const Addr base = layout_.vaddr(p, offset);
  return vaddr >= base && vaddr < base + length;
}

void Vmm::on_event(const MachineEvent& ev) {
  if (!active_) return;
  auto& rec = active_->record;
  const auto& plan = active_->plan;
  const ProcessorId k = plan.proc;
  const bool from_master = ev.proc == options_.master && ev.host_thread && ev.pid == master_pid_;
  switch (ev.kind) {
    case EventKind::MicroOp:
      if (from_master && ev.access == AccessKind::Write && !ev.fault &&
          in_block(k, ev.vaddr, ivc::kNext, DomainContext::kBytes)) {
        if (rec.next_written == 0 || rec.ipi == 0) rec.next_written = ev.step;
      } else if (from_master && ev.access == AccessKind::Read && rec.restored > 0 && rec.previous_read == 0 &&
                 in_block(k, ev.vaddr, ivc::kPrevious, DomainContext::kBytes)) {
        rec.previous_read = ev.step;
      } else if (ev.proc == k && !ev.host_thread && !ev.fault) {
        if (ev.opcode == Opcode::SaveCtx && in_block(k, ev.vaddr, ivc::kPrevious, DomainContext::kBytes)) {
          rec.previous_written = ev.step;
        } else if (ev.opcode == Opcode::StoreImm && in_block(k, ev.vaddr, ivc::kAck, kWordBytes)) {
          if (ev.value == 1 && rec.ack == 0) rec.ack = ev.step;
          if (ev.value == plan.final_ack) rec.final_ack = ev.step;
        }
      }
      break;
    case EventKind::IpiPosted:
    case EventKind::IpiCollapsed:
      if (ev.proc == options_.master && ev.other == k && ev.vector == plan.vector && rec.ipi == 0) rec.ipi = ev.step;
      break;
    case EventKind::IrqTaken:
      if (ev.proc != k) break;
      if (ev.vector == plan.vector && rec.irq_taken == 0) {
        rec.irq_taken = ev.step;
        interrupted_ = as_interrupted(m_.snapshot_context(k));
      } else if (rec.ack > 0 && rec.restored == 0) {
        ++rec.irqs_between_ack_and_restore;
      }
      break;
    case EventKind::BmuMutation:
      if (from_master && rec.restored == 0) rec.bmu = ev.step;
      break;
    case EventKind::ContextRestored:
      if (ev.proc == k && rec.restored == 0 && rec.ack > 0) {
        rec.restored = ev.step;
        rec.restored_exact = plan.expected_restore && m_.snapshot_context(k) == *plan.expected_restore;
      }
      break;
    default: break;
  }
}

DeliveryReport Vmm::idc_send(DomainId src, DomainId dst, std::vector<std::uint8_t> payload) {
  if (payload.empty()) throw Error(Errc::EmptyPayload, "IDC payload must not be empty");
  const auto& s = store_.at(src);
  const auto& d = store_.at(dst);
  if (s.dormant()) throw Error(Errc::Protocol, fmt::format("source domain '{}' is not running", s.name));
  DeliveryReport rep;
  rep.src = src;
  rep.dst = dst;
  rep.bytes = payload.size();
  const Step t0 = m_.now();
  if (!d.dormant()) {
    rep.path = IdcPath::Direct;
  } else {
    std::optional<ProcessorId> chosen;
    for (auto p : options_.open) {
      if (pinned_.contains(p) || occupant(p) == src) continue;
      chosen = p;
      break;
    }
    if (!chosen) throw Error(Errc::NoProcessorAvailable, fmt::format("no open processor can host '{}'", d.name));
    switch_domain(dst, *chosen);
    rep.path = IdcPath::ViaMaster;
    rep.activated_on = chosen;
  }
  mailboxes_[dst].push_back(std::move(payload));
  rep.steps = m_.now() - t0;
  return rep;
}

const std::deque<std::vector<std::uint8_t>>& Vmm::mailbox(DomainId d) const {
  static const std::deque<std::vector<std::uint8_t>> empty;
  auto it = mailboxes_.find(d);
  return it == mailboxes_.end() ? empty : it->second;
}

std::vector<std::uint8_t> Vmm::take_message(DomainId d) {
  auto& q = mailboxes_[d];
  if (q.empty()) return {};
  auto out = std::move(q.front());
  q.pop_front();
  return out;
}

void Vmm::pin(ProcessorId p, bool pinned) {
  if (pinned)
    pinned_.insert(p);
  else
    pinned_.erase(p);
}

IpiRateGuard& Vmm::guard_ipi_rate(std::uint32_t limit, Step window) {
  guard_ = std::make_unique<IpiRateGuard>(limit, window, m_.matrix().controllers());
  m_.set_ipi_gate(guard_.get());
  return *guard_;
}

}  // namespace secpart::virt
