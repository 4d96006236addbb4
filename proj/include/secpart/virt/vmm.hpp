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

#pragma once

#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "secpart/bmu/bmu.hpp"
#include "secpart/machine/machine.hpp"
#include "secpart/virt/context_store.hpp"
#include "secpart/virt/rate_guard.hpp"
#include "secpart/virt/switch_code.hpp"

namespace secpart::virt {

inline constexpr Step kDefaultSwitchTimeout = 10'000;

struct VmmOptions {
  ProcessorId master{0};
  std::set<ProcessorId> open;
  Step timeout = kDefaultSwitchTimeout;
};

/// One master-driven handshake with a slave: write the next context, ring the
/// slave, wait for its ack, reprogram the BMU, release it, wait for the final
/// ack, collect the previous context.
struct TransitionPlan {
  std::string kind = "switch";
  ProcessorId proc;
  std::uint32_t vector = kVectorSwitch;
  std::optional<DomainContext> next;
  /// What the processor's registers must equal right after it resumes.
  std::optional<DomainContext> expected_restore;
  /// Installed between the first ack and the go signal.
  std::optional<std::set<ProcessorId>> controllers_at_ack;
  std::optional<std::vector<bmu::RangeEntry>> entries_at_ack;
  /// Installed after the final ack.
  std::optional<std::set<ProcessorId>> controllers_after;
  Word final_ack = 2;
  bool read_previous = true;
  std::optional<DomainId> from;
  std::optional<DomainId> to;
  /// Where to resume the processor from when the handshake is abandoned
  /// after the first ack.
  std::uint32_t rollback_buffer = ivc::kPrevious;
  /// Transition token taken (swap spin) before and released after.
  std::optional<Addr> token_vaddr;
  /// Mailbox buffer zeroed once the handshake completed.
  std::optional<std::uint32_t> clear_after;
};

/// Step numbers of every handshake milestone, as observed on the bus.
struct SwitchRecord {
  std::string kind;
  ProcessorId proc;
  std::optional<DomainId> from;
  std::optional<DomainId> to;
  Step requested = 0;
  Step next_written = 0;
  Step ipi = 0;
  Step irq_taken = 0;
  Step previous_written = 0;
  Step ack = 0;
  Step bmu = 0;
  Step restored = 0;
  Step final_ack = 0;
  Step previous_read = 0;
  Step done = 0;
  std::uint32_t irqs_between_ack_and_restore = 0;
  bool restored_exact = false;
  bool saved_exact = false;
  bool ok = false;
  bool timeout = false;
  std::optional<Fault> fault;
  std::optional<DomainContext> previous;
  std::map<std::string, Step> phases;

  /// write(next) < IPI < write(previous) < ack < restore < read(previous),
  /// with the BMU reprogrammed before the restored domain runs.
  bool ordering_ok() const;
  Step steps() const { return done - requested; }
};

enum class IdcPath : std::uint8_t { Direct, ViaMaster };

struct DeliveryReport {
  IdcPath path = IdcPath::Direct;
  DomainId src;
  DomainId dst;
  std::size_t bytes = 0;
  std::optional<ProcessorId> activated_on;
  Step steps = 0;
};

/// The master side of asymmetric virtualization. Runs as a kernel thread on
/// a base-domain processor and is driven through host calls that advance the
/// machine until the requested transition completes.
class Vmm : public machine::MachineObserver {
 public:
  Vmm(machine::Machine& m, HandlerLayout layout, bmu::DomainPolicy policy, VmmOptions options);
  ~Vmm() override;
  Vmm(const Vmm&) = delete;
  Vmm& operator=(const Vmm&) = delete;

  machine::Machine& machine() { return m_; }
  const HandlerLayout& layout() const { return layout_; }
  const bmu::DomainPolicy& policy() const { return policy_; }
  const VmmOptions& options() const { return options_; }
  ContextStore& store() { return store_; }
  const ContextStore& store() const { return store_; }

  DomainId add_domain(const std::string& name, const std::string& policy_domain, const DomainContext& ctx);
  void set_context(DomainId id, const DomainContext& ctx);

  const std::set<ProcessorId>& open_processors() const { return options_.open; }
  void add_open(ProcessorId p) { options_.open.insert(p); }
  void remove_open(ProcessorId p) { options_.open.erase(p); }
  bool is_open(ProcessorId p) const { return options_.open.contains(p); }
  std::optional<DomainId> occupant(ProcessorId p) const;
  void set_occupant(ProcessorId p, std::optional<DomainId> d);

  /// Boot-time placement: programs the BMU for d on p and starts it there.
  void boot(ProcessorId p, DomainId d);

  /// BMU entries for domain d running on p: the policy column plus the
  /// protection of the handler text and of other processors' mailboxes.
  std::vector<bmu::RangeEntry> entries_for(DomainId d, ProcessorId p) const;
  std::vector<bmu::RangeEntry> protection_entries(ProcessorId p) const;

  /// Switches p to target; returns the displaced domain's context.
  DomainContext switch_domain(DomainId target, ProcessorId p);

  /// Runs a handshake through the master thread. On failure the BMU and the
  /// processor are rolled back and the record carries the fault or timeout.
  const SwitchRecord& run(TransitionPlan plan);

  DeliveryReport idc_send(DomainId src, DomainId dst, std::vector<std::uint8_t> payload);
  const std::deque<std::vector<std::uint8_t>>& mailbox(DomainId d) const;
  std::vector<std::uint8_t> take_message(DomainId d);
  void pin(ProcessorId p, bool pinned = true);

  /// Defers IPIs to base-domain processors beyond `limit` per `window` steps.
  IpiRateGuard& guard_ipi_rate(std::uint32_t limit, Step window = 1000);
  IpiRateGuard* rate_guard() { return guard_.get(); }

  const std::vector<SwitchRecord>& records() const { return records_; }
  const std::vector<std::string>& protocol_errors() const { return protocol_errors_; }
  machine::Pid master_pid() const { return master_pid_; }

  void on_event(const machine::MachineEvent& ev) override;

 private:
  struct Request {
    TransitionPlan plan;
    SwitchRecord record;
    bool done = false;
  };

  machine::Task<void> master_loop(machine::ThreadContext& ctx);
  machine::Task<void> execute(machine::ThreadContext& ctx, Request& req);
  machine::Task<bool> wait_ack(machine::ThreadContext& ctx, Request& req, Word want, Step t0);
  machine::Task<void> rollback(machine::ThreadContext& ctx, Request& req, Word ack_seen,
                               const std::set<ProcessorId>& controllers, const std::vector<bmu::RangeEntry>& entries);
  machine::Task<DomainContext> read_context(machine::ThreadContext& ctx, Addr vaddr);

  bool in_block(ProcessorId p, Addr vaddr, std::uint32_t offset, std::uint32_t length) const;

  machine::Machine& m_;
  HandlerLayout layout_;
  bmu::DomainPolicy policy_;
  VmmOptions options_;
  ContextStore store_;
  std::map<ProcessorId, DomainId> occupants_;
  std::set<ProcessorId> pinned_;
  std::map<DomainId, std::deque<std::vector<std::uint8_t>>> mailboxes_;
  std::list<Request> requests_;
  std::deque<Request*> queue_;
  std::size_t fault_mark_ = 0;
  Request* active_ = nullptr;
  std::optional<DomainContext> interrupted_;
  std::vector<SwitchRecord> records_;
  std::vector<std::string> protocol_errors_;
  std::unique_ptr<IpiRateGuard> guard_;
  std::uint32_t next_domain_ = 1;
  machine::Pid master_pid_ = 0;
};

/// Registers as seen on entry to an IRQ handler: the banked return address
/// and saved status hold the interrupted pc and status.
DomainContext as_interrupted(const DomainContext& running);

/// Equality ignoring the IRQ-mode return address and saved status, which
/// interrupt entry overwrites by design.
bool same_except_irq_bank(const DomainContext& a, const DomainContext& b);

}  // namespace secpart::virt
