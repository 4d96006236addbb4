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

#include <bitset>
#include <coroutine>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "secpart/bmu/bmu.hpp"
#include "secpart/common.hpp"
#include "secpart/machine/config.hpp"
#include "secpart/machine/context.hpp"
#include "secpart/machine/isa.hpp"
#include "secpart/machine/page_table.hpp"
#include "secpart/machine/task.hpp"

namespace secpart::machine {

using Pid = std::uint32_t;

inline constexpr std::uint32_t kMaxVectors = 16;
/// Each interrupt vector owns this many bytes of the vector table.
inline constexpr std::uint32_t kVectorStride = 0x100;

struct BusResult {
  Word value = 0;
  std::optional<Fault> fault;

  bool ok() const { return !fault.has_value(); }
};

struct StepReport {
  Step step = 0;
  std::optional<ProcessorId> proc;  // nullopt: nothing was runnable
  std::string_view op;
  std::optional<Fault> fault;

  bool idle() const { return !proc.has_value(); }
};

struct RunReport {
  Step steps = 0;
  bool predicate_met = false;
  std::vector<Fault> faults;
};

enum class EventKind : std::uint8_t {
  MicroOp,
  IrqTaken,
  IpiPosted,
  IpiCollapsed,
  BmuMutation,
  BmuDenied,
  ContextRestored,
  Fault,
};

/// Everything observable about one step, for traces and property checks.
struct MachineEvent {
  Step step = 0;
  EventKind kind = EventKind::MicroOp;
  ProcessorId proc;
  std::string_view op;
  Opcode opcode = Opcode::Nop;
  Addr vaddr = 0;
  Addr paddr = 0;
  AccessKind access = AccessKind::Read;
  Word value = 0;
  std::uint32_t vector = 0;
  ProcessorId other;  // IPI target, BMU target
  std::optional<Fault> fault;
  bool host_thread = false;
  Pid pid = 0;
};

class MachineObserver {
 public:
  virtual ~MachineObserver() = default;
  virtual void on_event(const MachineEvent& event) = 0;
};

/// Writes `step,proc,op,vaddr,paddr,kind,result` lines.
class CsvTraceWriter : public MachineObserver {
 public:
  explicit CsvTraceWriter(std::ostream& out, bool header = true);
  void on_event(const MachineEvent& event) override;

 private:
  std::ostream& out_;
};

/// Admission control for inter-processor interrupts (rate guards). A gate
/// that defers an IPI is responsible for re-posting it via Machine::raise_ipi.
class IpiGate {
 public:
  virtual ~IpiGate() = default;
  virtual bool admit(Machine& m, ProcessorId from, ProcessorId to, std::uint32_t vector) = 0;
  virtual void on_step(Machine& m) = 0;
};

enum class ThreadState : std::uint8_t { Runnable, Blocked, Done, Failed };

class HostThread;
class ThreadContext;

using ThreadBody = std::function<Task<void>(ThreadContext&)>;
using IrqHandler = std::function<void(ProcessorId, std::uint32_t vector)>;
using HookFn = std::function<std::optional<Fault>(ProcessorId)>;

/// Deterministic multi-core machine. One processor executes one micro-op per
/// step, chosen round-robin among active processors starting after the one
/// that ran last. An active processor either has a runnable host thread
/// (kernel or user code modeled as a coroutine) or is Running a script.
class Machine {
 public:
  /// Throws Error(Errc::Config) when the config is invalid.
  explicit Machine(MachineConfig config);
  ~Machine();
  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  static std::unique_ptr<Machine> build(MachineConfig config) { return std::make_unique<Machine>(std::move(config)); }

  const MachineConfig& config() const { return config_; }
  std::uint32_t processor_count() const { return config_.processor_count; }
  Step now() const { return step_; }
  std::mt19937_64& rng() { return rng_; }

  // -- processors ---------------------------------------------------------
  const ProcessorState& processor(ProcessorId p) const;
  ProcessorState& processor_mut(ProcessorId p);
  DomainContext snapshot_context(ProcessorId p) const;
  /// Sets every register of p from ctx. The next fetch is a control transfer.
  void restore_context(ProcessorId p, const DomainContext& ctx);
  /// restore_context, then mark p Running a script.
  void start(ProcessorId p, const DomainContext& ctx);
  void halt(ProcessorId p);
  /// Clears registers, pending interrupts and threads; p becomes Halted.
  void reset_processor(ProcessorId p);
  bool script_mode(ProcessorId p) const;

  // -- memory -------------------------------------------------------------
  /// Host-side physical access, bypassing translation and the bus.
  Word peek(Addr paddr) const;
  void poke(Addr paddr, Word value);
  void poke_block(Addr paddr, std::span<const Word> words);
  std::vector<Word> peek_block(Addr paddr, std::size_t words) const;
  bool decodes(Addr paddr) const;

  // -- translation --------------------------------------------------------
  /// Registers a table and returns its translation-base handle (never 0).
  Word add_page_table(PageTable table);
  PageTable& page_table(Word handle);
  const PageTable& page_table(Word handle) const;
  std::size_t page_table_count() const { return tables_.size(); }
  std::optional<Addr> translate(ProcessorId p, Addr vaddr) const;

  // -- bus ----------------------------------------------------------------
  const bmu::AccessMatrix& matrix() const { return matrix_; }
  /// Platform bring-up: installs a matrix outside the bus (reset state).
  void install_matrix(bmu::AccessMatrix m) { matrix_ = std::move(m); }

  /// One bus micro-op issued by p, consuming one machine step.
  BusResult access(ProcessorId p, Addr vaddr, AccessKind kind, Word value = 0);
  /// Returns the old word and stores `value` as one indivisible step.
  BusResult atomic_swap(ProcessorId p, Addr vaddr, Word value);
  /// Matrix reconfiguration requested by p, one step each.
  std::optional<Fault> bmu_set_entry(ProcessorId requester, ProcessorId target, std::size_t slot,
                                     const std::optional<bmu::RangeEntry>& entry);
  std::optional<Fault> bmu_replace_entries(ProcessorId requester, ProcessorId target,
                                           std::span<const bmu::RangeEntry> entries);
  std::optional<Fault> bmu_set_controllers(ProcessorId requester, const std::set<ProcessorId>& next);

  // -- interrupts ---------------------------------------------------------
  /// One step issued by `from`. Subject to the installed IpiGate.
  void post_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector);
  /// Makes vector pending on `to` immediately (no gate, no step).
  void raise_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector);
  std::bitset<kMaxVectors> pending_ipis(ProcessorId p) const;
  void set_ipi_gate(IpiGate* gate) { gate_ = gate; }
  /// Host-level handler for a vector on p; replaces script vectoring.
  void set_irq_handler(ProcessorId p, std::uint32_t vector, IrqHandler handler);

  // -- scheduling ---------------------------------------------------------
  StepReport step();
  RunReport run_until(const std::function<bool()>& predicate, Step max_steps);
  RunReport run(Step steps) { return run_until({}, steps); }
  bool active(ProcessorId p) const;
  bool quiescent() const;

  // -- host threads -------------------------------------------------------
  /// Spawns a coroutine thread on p. `body` must not itself be a capturing
  /// coroutine lambda: it should return a Task from a coroutine function.
  Pid spawn(ProcessorId p, std::string name, const ThreadBody& body);
  /// Makes a blocked thread runnable; a wake of a running thread is latched
  /// and consumed by its next block().
  void wake(Pid pid);
  /// Destroys a thread without running it further.
  void kill(Pid pid);
  ThreadState thread_state(Pid pid) const;
  std::optional<std::string> thread_error(Pid pid) const;
  ProcessorId thread_processor(Pid pid) const;
  const std::string& thread_name(Pid pid) const;
  std::vector<Pid> threads_on(ProcessorId p) const;
  bool has_live_threads(ProcessorId p) const;

  // -- hooks, observers, faults ------------------------------------------
  void set_hook(Word id, HookFn fn);
  void add_observer(MachineObserver* obs);
  void remove_observer(MachineObserver* obs);
  const std::vector<Fault>& faults() const { return faults_; }
  std::vector<Fault> faults_since(Step step, std::optional<ProcessorId> p = std::nullopt) const;

 private:
  friend class ThreadContext;
  friend class HostThread;

  struct Core {
    ProcessorState state;
    std::bitset<kMaxVectors> pending;
    bool script = false;
    // Fetch-side control-flow tracking: the program tag of the instruction
    // stream being executed, adopted at every control transfer.
    bool flow_transfer = true;
    std::uint8_t flow_tag = 0;
    std::vector<Pid> threads;
    std::size_t current_thread = 0;
    std::uint32_t slice_used = 0;
    std::unordered_map<std::uint32_t, IrqHandler> irq_handlers;
  };

  Core& core(ProcessorId p);
  const Core& core(ProcessorId p) const;

  // Bus path shared by scripts, threads and host calls. No step accounting.
  BusResult bus(ProcessorId p, Addr vaddr, AccessKind kind, Word value);
  BusResult bus_swap(ProcessorId p, Addr vaddr, Word value);
  BusResult bus_phys(ProcessorId p, Addr paddr, Addr vaddr, AccessKind kind, Word value);
  void do_post_ipi(ProcessorId from, ProcessorId to, std::uint32_t vector, bool gated);
  std::optional<Fault> record_fault(FaultKind kind, Addr addr, ProcessorId p);

  void execute_one(ProcessorId p, StepReport& report);
  bool deliver_interrupt(ProcessorId p, StepReport& report);
  void execute_script(ProcessorId p, StepReport& report);
  void execute_thread(ProcessorId p, HostThread& t, StepReport& report);
  HostThread* pick_thread(ProcessorId p);
  void refresh_thread_mode(ProcessorId p);

  void emit(MachineEvent ev);
  bool observed() const { return !observers_.empty(); }

  MachineConfig config_;
  std::vector<Core> cores_;
  std::unordered_map<std::uint32_t, std::unique_ptr<std::array<Word, 1024>>> pages_;  // sparse 4 KiB frames
  std::vector<PageTable> tables_;
  bmu::AccessMatrix matrix_;
  std::unordered_map<Pid, std::unique_ptr<HostThread>> threads_;
  Pid next_pid_ = 1;
  std::unordered_map<Word, HookFn> hooks_;
  std::vector<MachineObserver*> observers_;
  std::vector<Fault> faults_;
  IpiGate* gate_ = nullptr;
  Step step_ = 0;
  std::uint32_t last_proc_;
  std::mt19937_64 rng_;
};

/// One micro-op requested by a host thread.
struct ThreadRequest {
  enum class Kind : std::uint8_t { Read, Write, Swap, Fetch, Ipi, Local, BmuEntries, BmuControllers };
  Kind kind = Kind::Local;
  Addr vaddr = 0;
  Word value = 0;
  ProcessorId target;
  std::uint32_t vector = 0;
  std::string_view label;
  std::vector<bmu::RangeEntry> entries;
  std::set<ProcessorId> procs;

  static ThreadRequest make(Kind k, Addr vaddr, Word value, ProcessorId target, std::uint32_t vector,
                            std::string_view label) {
    ThreadRequest r;
    r.kind = k;
    r.vaddr = vaddr;
    r.value = value;
    r.target = target;
    r.vector = vector;
    r.label = label;
    return r;
  }
};

/// Handle passed to a thread body; every awaitable it returns is one step.
class ThreadContext {
 public:
  struct OpAwaiter {
    HostThread* thread;
    ThreadRequest request;
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h) noexcept;
    BusResult await_resume() const noexcept;
  };
  struct BlockAwaiter {
    HostThread* thread;
    bool await_ready() const noexcept { return false; }
    bool await_suspend(std::coroutine_handle<> h) noexcept;
    void await_resume() const noexcept {}
  };

  ProcessorId proc() const;
  Pid pid() const;
  Machine& machine() const;

  OpAwaiter read(Addr vaddr) { return {thread_, ThreadRequest::make(ThreadRequest::Kind::Read, vaddr, 0, {}, 0, "read")}; }
  OpAwaiter write(Addr vaddr, Word v) { return {thread_, ThreadRequest::make(ThreadRequest::Kind::Write, vaddr, v, {}, 0, "write")}; }
  OpAwaiter swap(Addr vaddr, Word v) { return {thread_, ThreadRequest::make(ThreadRequest::Kind::Swap, vaddr, v, {}, 0, "swap")}; }
  OpAwaiter ipi(ProcessorId to, std::uint32_t vector) {
    return {thread_, ThreadRequest::make(ThreadRequest::Kind::Ipi, 0, 0, to, vector, "ipi")};
  }
  /// Kernel-local work with no bus traffic (a system call body, a local
  /// wake-up, a socket enqueue). Costs one step.
  OpAwaiter local(std::string_view what) { return {thread_, ThreadRequest::make(ThreadRequest::Kind::Local, 0, 0, {}, 0, what)}; }
  /// Parks the thread until Machine::wake; returns at once if a wake is latched.
  BlockAwaiter block() { return {thread_}; }
  /// Matrix reconfiguration issued by this thread's processor.
  OpAwaiter bmu_replace(ProcessorId target, std::vector<bmu::RangeEntry> entries) {
    auto r = ThreadRequest::make(ThreadRequest::Kind::BmuEntries, 0, 0, target, 0, "bmu_replace_entries");
    r.entries = std::move(entries);
    return {thread_, std::move(r)};
  }
  OpAwaiter bmu_controllers(std::set<ProcessorId> next) {
    auto r = ThreadRequest::make(ThreadRequest::Kind::BmuControllers, 0, 0, {}, 0, "bmu_set_controllers");
    r.procs = std::move(next);
    return {thread_, std::move(r)};
  }

 private:
  friend class HostThread;
  explicit ThreadContext(HostThread* t) : thread_(t) {}
  HostThread* thread_;
};

class HostThread {
 public:
  HostThread(Machine& m, ProcessorId p, Pid pid, std::string name);

  Machine& machine;
  ProcessorId proc;
  Pid pid;
  std::string name;
  ThreadContext context;
  Task<void> body;
  ThreadState state = ThreadState::Runnable;
  bool started = false;
  bool wake_latched = false;
  std::optional<ThreadRequest> pending;
  BusResult result;
  std::coroutine_handle<> resume_point;
  std::optional<std::string> error;

  /// Runs host code until the thread posts an op, blocks or finishes.
  void advance();
};

}  // namespace secpart::machine
