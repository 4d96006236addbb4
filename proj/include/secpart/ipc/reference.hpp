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

// Programs over semaphores and message queues, a single-processor reference
// engine with exhaustive interleaving enumeration, and a runner that executes
// the same program on the multi-processor library.

#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "secpart/ipc/ipc.hpp"

namespace secpart::ipc {

struct IpcOp {
  enum class Kind : std::uint8_t { Down, Up, Send, Recv };
  Kind kind = Kind::Up;
  std::uint32_t object = 0;
  Word type = 1;  // send: message type, recv: filter (0 = any)
  Bytes payload;
  bool nowait = false;

  /// True when the op can put its process to sleep.
  bool may_block() const { return !nowait && kind != Kind::Up; }
};

struct ObjectDecl {
  bool queue = false;
  Word initial = 0;            // semaphore
  std::uint32_t capacity = 0;  // queue, bytes
};

struct ProcessDecl {
  ProcessorId proc;
  std::vector<IpcOp> ops;
};

struct IpcProgram {
  std::vector<ObjectDecl> objects;
  std::vector<ProcessDecl> processes;

  std::size_t blocking_points() const;
  std::set<ProcessorId> processors() const;
  std::string describe() const;
};

/// Final state: object contents plus how far each process got and what each
/// completed op returned.
struct IpcOutcome {
  std::vector<Word> sems;
  std::vector<std::vector<std::pair<Word, Bytes>>> queues;
  std::vector<std::vector<std::string>> results;  // per process, per completed op

  std::string key() const;
};

/// Single-processor semantics: each op runs atomically; a blocked op
/// completes when another op hands it a unit or a message.
class ReferenceEngine {
 public:
  explicit ReferenceEngine(const IpcProgram& program);

  bool runnable(std::size_t process) const;
  std::vector<std::size_t> runnable_set() const;
  void step(std::size_t process);
  IpcOutcome outcome() const;
  std::string state_key() const;

 private:
  struct Waiter {
    std::size_t process;
    Word type;
    Bytes payload;
  };
  struct Obj {
    Word count = 0;
    std::uint32_t capacity = 0;
    std::uint32_t bytes = 0;
    std::vector<std::pair<Word, Bytes>> messages;
    std::vector<Waiter> waiters;       // downs / receivers
    std::vector<Waiter> send_waiters;
  };
  struct Proc {
    std::size_t pc = 0;
    bool blocked = false;
  };

  void complete(std::size_t process, std::string result);
  /// Handoff to a matching receiver or enqueue; false when full.
  bool deliver(std::size_t object, Word type, const Bytes& payload);

  const IpcProgram* program_;
  std::vector<Obj> objects_;
  std::vector<Proc> procs_;
  std::vector<std::vector<std::string>> results_;
};

/// Every final state reachable under some serialization of the processes'
/// ops (a final state has no runnable process).
std::set<std::string> reachable_outcomes(const IpcProgram& program, std::size_t* states_explored = nullptr);

/// Runs the program on a fresh machine with the processes on their declared
/// processors; `seed` draws per-op start delays that vary the interleaving.
/// Throws Error(Errc::Timeout) when the run does not settle within budget.
IpcOutcome run_distributed(const IpcProgram& program, std::uint64_t seed, std::uint32_t max_delay = 24,
                           Step budget = 2'000'000, IpcStats* stats = nullptr);

struct ProgramLimits {
  std::uint32_t max_processes = 4;
  std::uint32_t max_objects = 2;
  std::uint32_t max_blocking = 8;
  std::uint32_t processors = 3;
  std::uint32_t max_ops_per_process = 4;
};

IpcProgram random_program(std::mt19937_64& rng, const ProgramLimits& limits = {});

}  // namespace secpart::ipc
