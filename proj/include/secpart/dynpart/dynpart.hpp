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

// Dynamic partitioning of an SMP base domain: lending processors to open
// domains through a hot-remove style transition and taking them back through
// hot-add, with the switch code mapped at one virtual address in every OS.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "secpart/machine/machine.hpp"
#include "secpart/virt/vmm.hpp"

namespace secpart::dynpart {

using machine::DomainContext;

/// Physical home of the common switch text and data plus the virtual window
/// all page tables map them at.
struct SwitchCodeLayout {
  AddressRange common_text{0x0e001000, 0x2000};
  AddressRange common_data{0x0f000000, 0x1000};
  Addr shared_vaddr = 0x0ffb0000;

  static constexpr std::uint32_t kMaxBytes = 16 * 1024;

  /// Text at shared_vaddr, data right after it.
  virt::HandlerLayout handler() const;
  AddressRange virtual_range() const { return {shared_vaddr, common_text.length + common_data.length}; }
  /// Throws Error(Errc::Config) when the layout is misaligned, too large or
  /// overlaps one of `os_footprints`.
  void validate(std::uint32_t page_size, std::span<const AddressRange> os_footprints = {}) const;
};

/// Maps the shared window into every listed page table and writes the switch
/// program at common_text. All-or-nothing: throws Error(Errc::Mapping)
/// without touching any table when one already maps part of the window to
/// other physical memory.
machine::LoadedProgram install_switch_code(machine::Machine& m, const SwitchCodeLayout& layout,
                                           std::span<const Word> tables,
                                           std::span<const AddressRange> os_footprints = {});

struct WorkUnit {
  std::uint32_t id = 0;
};

/// Host-side view of the SMP OS: who is a member, who takes interrupts,
/// who is cache coherent, and which work units each member holds.
class BaseDomainModel {
 public:
  explicit BaseDomainModel(std::set<ProcessorId> members);

  const std::set<ProcessorId>& members() const { return members_; }
  bool is_member(ProcessorId p) const { return members_.contains(p); }
  const std::set<ProcessorId>& irq_targets() const { return irq_targets_; }
  bool coherent(ProcessorId p) const { return coherent_.contains(p); }
  void set_coherent(ProcessorId p, bool on);
  bool busy(ProcessorId p) const { return !queue(p).empty(); }

  void enqueue(ProcessorId p, WorkUnit unit);
  const std::deque<WorkUnit>& queue(ProcessorId p) const;
  std::size_t total_work() const;

  /// Moves p's queued units round-robin onto the other members.
  std::size_t migrate(ProcessorId p);
  void reroute(ProcessorId p) { irq_targets_.erase(p); }
  void rejoin(ProcessorId p) { irq_targets_.insert(p); }
  /// Throws Error(Errc::LastProcessor) when p is the only member.
  void remove_member(ProcessorId p);
  void add_member(ProcessorId p);

 private:
  std::set<ProcessorId> members_;
  std::set<ProcessorId> irq_targets_;
  std::set<ProcessorId> coherent_;
  std::map<ProcessorId, std::deque<WorkUnit>> queues_;
  std::uint32_t next_target_ = 0;
};

/// `transition,kind,proc,domain,phase,steps` trace record.
struct TransitionRecord {
  std::string kind;
  ProcessorId proc;
  std::string domain;
  std::string phase;
  Step steps = 0;
};

/// Counts work-unit completion markers per domain, attributing each marker
/// to the domain whose page table was active when it executed.
class ThroughputProbe : public machine::MachineObserver {
 public:
  explicit ThroughputProbe(machine::Machine& m);
  ~ThroughputProbe() override;
  ThroughputProbe(const ThroughputProbe&) = delete;
  ThroughputProbe& operator=(const ThroughputProbe&) = delete;

  void attribute(Word table_handle, const std::string& domain) { owners_[table_handle] = domain; }
  void reset();
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t count(const std::string& domain) const;
  std::uint64_t count_on(ProcessorId p) const;
  /// Runs the machine for `window` steps and returns the completions.
  std::map<std::string, std::uint64_t> measure(Step window);

  void on_event(const machine::MachineEvent& ev) override;

 private:
  machine::Machine& m_;
  std::map<Word, std::string> owners_;
  std::map<std::string, std::uint64_t> counts_;
  std::map<ProcessorId, std::uint64_t> per_proc_;
};

/// Drives the three state transitions: separate (base -> open), switch_open
/// (open -> open) and merge (open -> base).
class Partitioner {
 public:
  Partitioner(machine::Machine& m, virt::Vmm& vmm, BaseDomainModel& base, SwitchCodeLayout layout,
              Addr token_vaddr);
  ~Partitioner();
  Partitioner(const Partitioner&) = delete;
  Partitioner& operator=(const Partitioner&) = delete;

  void separate(ProcessorId p, DomainId target);
  void switch_open(ProcessorId p, DomainId target);
  void merge(ProcessorId p);

  bool lent(ProcessorId p) const { return lent_.contains(p); }
  const std::set<ProcessorId>& lent_processors() const { return lent_; }
  /// The parked base context of a lent processor (read from RAM).
  std::optional<DomainContext> base_buffer(ProcessorId p) const;
  /// Base members plus lent processors cover the machine exactly once.
  bool conservation_holds() const;
  ProcessorId context_manager() const { return vmm_.options().master; }
  Addr token_vaddr() const { return token_; }

  const std::vector<TransitionRecord>& transitions() const { return transitions_; }
  /// Handshake phase lengths of the most recent transition of `kind`, its
  /// "total", and hot-plug milestones ("migrate_at", ...) as offsets from the
  /// request.
  std::map<std::string, Step> last_phases(const std::string& kind) const;

 private:
  void record(const std::string& kind, ProcessorId p, const std::string& domain, const std::string& phase,
              Step steps);
  std::string domain_name(std::optional<DomainId> d) const;
  void begin(const std::string& kind, ProcessorId p, const std::string& domain);
  void finish(const virt::SwitchRecord& r, ProcessorId p);

  machine::Machine& m_;
  virt::Vmm& vmm_;
  BaseDomainModel& base_;
  SwitchCodeLayout layout_;
  Addr token_;
  std::set<ProcessorId> lent_;
  std::vector<TransitionRecord> transitions_;
  std::string current_kind_;
  std::string current_domain_;
  Step current_start_ = 0;
  std::size_t begin_index_ = 0;
  std::map<std::string, std::map<std::string, Step>> last_phases_;
};

}  // namespace secpart::dynpart
