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

#include "secpart/dynpart/dynpart.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace secpart::dynpart {

using machine::Machine;

virt::HandlerLayout SwitchCodeLayout::handler() const {
  virt::HandlerLayout h;
  h.text_paddr = common_text.base;
  h.text_vaddr = shared_vaddr;
  h.text_size = common_text.length;
  h.data_paddr = common_data.base;
  h.data_vaddr = shared_vaddr + common_text.length;
  h.data_size = common_data.length;
  return h;
}

void SwitchCodeLayout::validate(std::uint32_t page_size, std::span<const AddressRange> os_footprints) const {
  auto aligned = [&](std::uint64_t v) { return v % page_size == 0; };
  if (!aligned(common_text.base) || !aligned(common_text.length) || !aligned(common_data.base) ||
      !aligned(common_data.length) || !aligned(shared_vaddr))
    throw Error(Errc::Config, "switch code layout must be page aligned");
  if (common_text.length == 0 || common_data.length == 0)
    throw Error(Errc::Config, "switch code text and data must be non-empty");
  if (std::uint64_t{common_text.length} + common_data.length > kMaxBytes)
    throw Error(Errc::Config, fmt::format("switch code window exceeds {} bytes", kMaxBytes));
  if (common_text.overlaps(common_data)) throw Error(Errc::Config, "switch code text and data overlap");
  if (virtual_range().end() > (std::uint64_t{1} << 32)) throw Error(Errc::Config, "shared window wraps");
  for (const auto& fp : os_footprints) {
    if (fp.overlaps(virtual_range()))
      throw Error(Errc::Config, fmt::format("shared window overlaps an OS footprint at 0x{:08x}", fp.base));
  }
  const std::uint32_t needed = virt::ivc::kBlockSize * 4;
  if (common_data.length < needed) throw Error(Errc::Config, "switch data too small for the mailbox blocks");
}

machine::LoadedProgram install_switch_code(Machine& m, const SwitchCodeLayout& layout, std::span<const Word> tables,
                                           std::span<const AddressRange> os_footprints) {
  layout.validate(m.config().page_size, os_footprints);
  const auto h = layout.handler();
  const machine::Mapping want[2] = {
      {h.text_vaddr, h.text_paddr, h.text_size},
      {h.data_vaddr, h.data_paddr, h.data_size},
  };
  const auto program = virt::build_switch_program(h);
  if (program.size_bytes() > h.text_size) throw Error(Errc::Config, "switch program does not fit its text area");

  // Check everything before touching anything.
  std::vector<std::pair<Word, const machine::Mapping*>> todo;
  for (Word t : tables) {
    const auto& pt = m.page_table(t);
    for (const auto& w : want) {
      bool present = false;
      for (const auto& existing : pt.mappings()) {
        if (!existing.virtual_range().overlaps(w.virtual_range())) continue;
        if (existing == w) {
          present = true;
          continue;
        }
        throw Error(Errc::Mapping, fmt::format("table '{}' maps 0x{:08x} elsewhere", pt.name(), existing.virtual_base));
      }
      if (!present) todo.emplace_back(t, &w);
    }
  }
  for (auto& [t, w] : todo) m.page_table(t).map(*w);
  return machine::load_program(m, program, h.text_paddr, h.text_vaddr);
}

BaseDomainModel::BaseDomainModel(std::set<ProcessorId> members)
    : members_(members), irq_targets_(members), coherent_(std::move(members)) {}

void BaseDomainModel::set_coherent(ProcessorId p, bool on) {
  if (on)
    coherent_.insert(p);
  else
    coherent_.erase(p);
}

void BaseDomainModel::enqueue(ProcessorId p, WorkUnit unit) { queues_[p].push_back(unit); }

const std::deque<WorkUnit>& BaseDomainModel::queue(ProcessorId p) const {
  static const std::deque<WorkUnit> empty;
  auto it = queues_.find(p);
  return it == queues_.end() ? empty : it->second;
}

std::size_t BaseDomainModel::total_work() const {
  std::size_t n = 0;
  for (const auto& [p, q] : queues_) n += q.size();
  return n;
}

std::size_t BaseDomainModel::migrate(ProcessorId p) {
  std::vector<ProcessorId> others;
  for (auto q : members_)
    if (q != p) others.push_back(q);
  auto it = queues_.find(p);
  if (others.empty() || it == queues_.end()) return 0;
  auto units = std::move(it->second);
  queues_.erase(it);
  for (const auto& u : units) queues_[others[next_target_++ % others.size()]].push_back(u);
  return units.size();
}

void BaseDomainModel::remove_member(ProcessorId p) {
  if (!members_.contains(p)) throw Error(Errc::Validation, fmt::format("cpu{} is not a base member", p.value));
  if (members_.size() == 1) throw Error(Errc::LastProcessor, fmt::format("cpu{} is the last base processor", p.value));
  members_.erase(p);
  irq_targets_.erase(p);
}

void BaseDomainModel::add_member(ProcessorId p) {
  members_.insert(p);
  irq_targets_.insert(p);
  coherent_.insert(p);
}

ThroughputProbe::ThroughputProbe(Machine& m) : m_(m) { m_.add_observer(this); }

ThroughputProbe::~ThroughputProbe() { m_.remove_observer(this); }

void ThroughputProbe::reset() {
  counts_.clear();
  per_proc_.clear();
}

std::uint64_t ThroughputProbe::count(const std::string& domain) const {
  auto it = counts_.find(domain);
  return it == counts_.end() ? 0 : it->second;
}

std::uint64_t ThroughputProbe::count_on(ProcessorId p) const {
  auto it = per_proc_.find(p);
  return it == per_proc_.end() ? 0 : it->second;
}

std::map<std::string, std::uint64_t> ThroughputProbe::measure(Step window) {
  reset();
  m_.run(window);
  return counts_;
}

void ThroughputProbe::on_event(const machine::MachineEvent& ev) {
  if (ev.kind != machine::EventKind::MicroOp || ev.host_thread || ev.opcode != machine::Opcode::Mark || ev.fault)
    return;
  const Word table = m_.processor(ev.proc).regs.system.translation_base;
  auto it = owners_.find(table);
  const std::string name = it == owners_.end() ? fmt::format("table{}", table) : it->second;
  ++counts_[name];
  ++per_proc_[ev.proc];
}

Partitioner::Partitioner(Machine& m, virt::Vmm& vmm, BaseDomainModel& base, SwitchCodeLayout layout,
                         Addr token_vaddr)
    : m_(m), vmm_(vmm), base_(base), layout_(layout), token_(token_vaddr) {
  m_.set_hook(virt::kHookMigrate, [this](ProcessorId p) -> std::optional<Fault> {
    base_.migrate(p);
    record(current_kind_, p, current_domain_, "migrate", m_.now() - current_start_);
    return std::nullopt;
  });
  m_.set_hook(virt::kHookReroute, [this](ProcessorId p) -> std::optional<Fault> {
    base_.reroute(p);
    record(current_kind_, p, current_domain_, "reroute", m_.now() - current_start_);
    return std::nullopt;
  });
  m_.set_hook(virt::kHookCoherence, [this](ProcessorId p) -> std::optional<Fault> {
    base_.set_coherent(p, m_.processor(p).regs.system.coherence != 0);
    record(current_kind_, p, current_domain_, "coherence", m_.now() - current_start_);
    return std::nullopt;
  });
  m_.set_hook(virt::kHookRejoin, [this](ProcessorId p) -> std::optional<Fault> {
    base_.rejoin(p);
    record(current_kind_, p, current_domain_, "rejoin", m_.now() - current_start_);
    return std::nullopt;
  });
}

Partitioner::~Partitioner() {
  for (Word h : {virt::kHookMigrate, virt::kHookReroute, virt::kHookCoherence, virt::kHookRejoin}) m_.set_hook(h, {});
}

void Partitioner::record(const std::string& kind, ProcessorId p, const std::string& domain, const std::string& phase,
                         Step steps) {
  transitions_.push_back({kind, p, domain, phase, steps});
}

std::string Partitioner::domain_name(std::optional<DomainId> d) const {
  if (!d) return "base";
  const auto* r = vmm_.store().find(*d);
  return r ? r->name : fmt::format("domain{}", d->value);
}

std::optional<DomainContext> Partitioner::base_buffer(ProcessorId p) const {
  const auto h = layout_.handler();
  const auto w = m_.peek_block(h.paddr(p, virt::ivc::kBaseBuffer), DomainContext::kWords);
  if (std::all_of(w.begin(), w.end(), [](Word x) { return x == 0; })) return std::nullopt;
  return DomainContext::from_words(std::span<const Word, DomainContext::kWords>(w.data(), DomainContext::kWords));
}

bool Partitioner::conservation_holds() const {
  for (auto p : lent_)
    if (base_.is_member(p)) return false;
  return base_.members().size() + lent_.size() == m_.processor_count();
}

std::map<std::string, Step> Partitioner::last_phases(const std::string& kind) const {
  auto it = last_phases_.find(kind);
  return it == last_phases_.end() ? std::map<std::string, Step>{} : it->second;
}

void Partitioner::finish(const virt::SwitchRecord& r, ProcessorId p) {
  auto& phases = last_phases_[current_kind_];
  phases.clear();
  for (std::size_t i = begin_index_; i < transitions_.size(); ++i) {
    if (transitions_[i].phase != "request") phases[transitions_[i].phase + "_at"] = transitions_[i].steps;
  }
  for (const auto& [name, steps] : r.phases) phases[name] = steps;
  phases["total"] = r.steps();
  record(current_kind_, p, current_domain_, r.ok ? "done" : "aborted", m_.now() - current_start_);
}

void Partitioner::begin(const std::string& kind, ProcessorId p, const std::string& domain) {
  current_kind_ = kind;
  current_domain_ = domain;
  current_start_ = m_.now();
  begin_index_ = transitions_.size();
  record(kind, p, domain, "request", 0);
}

void Partitioner::separate(ProcessorId p, DomainId target) {
  if (!base_.is_member(p)) throw Error(Errc::Validation, fmt::format("cpu{} is not a base member", p.value));
  if (base_.members().size() <= 1)
    throw Error(Errc::LastProcessor, fmt::format("cpu{} is the last base processor", p.value));
  auto& rec = vmm_.store().at(target);
  if (p == context_manager())
    throw Error(Errc::Validation, fmt::format("cpu{} hosts the context manager and stays in the base", p.value));
  if (rec.running_on)
    throw Error(Errc::Protocol, fmt::format("domain '{}' is running on cpu{}", rec.name, rec.running_on->value));

  begin("separate", p, rec.name);
  vmm_.add_open(p);
  virt::TransitionPlan plan;
  plan.kind = "separate";
  plan.proc = p;
  plan.vector = virt::kVectorRemove;
  plan.next = rec.context;
  plan.expected_restore = rec.context;
  auto controllers = m_.matrix().controllers();
  controllers.erase(p);
  plan.controllers_at_ack = controllers;
  plan.entries_at_ack = vmm_.entries_for(target, p);
  plan.read_previous = false;
  plan.to = target;
  plan.rollback_buffer = virt::ivc::kBaseBuffer;
  plan.token_vaddr = token_;
  const auto& r = vmm_.run(plan);
  finish(r, p);
  if (!r.ok) {
    vmm_.remove_open(p);
    if (r.fault) throw FaultError(*r.fault);
    throw Error(Errc::Timeout, fmt::format("separation of cpu{} not acknowledged", p.value));
  }
  base_.remove_member(p);
  base_.set_coherent(p, false);
  lent_.insert(p);
  vmm_.set_occupant(p, target);
}

void Partitioner::switch_open(ProcessorId p, DomainId target) {
  if (!lent(p)) throw Error(Errc::NotLentOut, fmt::format("cpu{} is not lent out", p.value));
  const auto& rec = vmm_.store().at(target);
  begin("switch", p, rec.name);
  const std::size_t before = vmm_.records().size();
  try {
    vmm_.switch_domain(target, p);
  } catch (...) {
    if (vmm_.records().size() > before) finish(vmm_.records().back(), p);
    throw;
  }
  if (vmm_.records().size() > before) finish(vmm_.records().back(), p);
}

void Partitioner::merge(ProcessorId p) {
  if (!lent(p)) throw Error(Errc::NotLentOut, fmt::format("cpu{} is not lent out", p.value));
  auto buf = base_buffer(p);
  if (!buf) throw Error(Errc::Protocol, fmt::format("no parked base context for cpu{}", p.value));
  const auto occupant = vmm_.occupant(p);

  begin("merge", p, domain_name(occupant));
  virt::TransitionPlan plan;
  plan.kind = "merge";
  plan.proc = p;
  plan.vector = virt::kVectorMerge;
  plan.expected_restore = *buf;
  plan.entries_at_ack = std::vector<bmu::RangeEntry>{};
  auto controllers = m_.matrix().controllers();
  controllers.insert(p);
  plan.controllers_after = controllers;
  plan.final_ack = 3;
  plan.read_previous = true;
  plan.from = occupant;
  plan.rollback_buffer = virt::ivc::kPrevious;
  plan.token_vaddr = token_;
  plan.clear_after = virt::ivc::kBaseBuffer;
  const auto& r = vmm_.run(plan);
  finish(r, p);
  if (!r.ok) {
    if (r.fault) throw FaultError(*r.fault);
    throw Error(Errc::Timeout, fmt::format("merge of cpu{} not acknowledged", p.value));
  }
  if (occupant) vmm_.store().at(*occupant).context = *r.previous;
  vmm_.set_occupant(p, std::nullopt);
  vmm_.remove_open(p);
  base_.add_member(p);
  lent_.erase(p);
}

}  // namespace secpart::dynpart
