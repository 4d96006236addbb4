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

#include "secpart/ipc/reference.hpp"

#include <algorithm>
#include <functional>

#include <fmt/format.h>

namespace secpart::ipc {

namespace {

std::string hex(const Bytes& b) {
  std::string s;
  for (auto c : b) s += fmt::format("{:02x}", c);
  return s;
}

std::string recv_result(Word type, const Bytes& payload) { return fmt::format("ok:{}:{}", type, hex(payload)); }

}  // namespace

std::size_t IpcProgram::blocking_points() const {
  std::size_t n = 0;
  for (const auto& p : processes)
    for (const auto& op : p.ops)
      if (op.may_block()) ++n;
  return n;
}

std::set<ProcessorId> IpcProgram::processors() const {
  std::set<ProcessorId> out;
  for (const auto& p : processes) out.insert(p.proc);
  return out;
}

std::string IpcProgram::describe() const {
  std::string s;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    s += o.queue ? fmt::format("obj{}=queue(cap {}) ", i, o.capacity) : fmt::format("obj{}=sem({}) ", i, o.initial);
  }
  for (std::size_t i = 0; i < processes.size(); ++i) {
    s += fmt::format("| p{}@cpu{}:", i, processes[i].proc.value);
    for (const auto& op : processes[i].ops) {
      switch (op.kind) {
        case IpcOp::Kind::Down: s += fmt::format(" down({})", op.object); break;
        case IpcOp::Kind::Up: s += fmt::format(" up({})", op.object); break;
        case IpcOp::Kind::Send: s += fmt::format(" send({},{},{})", op.object, op.type, hex(op.payload)); break;
        case IpcOp::Kind::Recv: s += fmt::format(" recv({},{})", op.object, op.type); break;
      }
      if (op.nowait) s += "!";
    }
  }
  return s;
}

std::string IpcOutcome::key() const {
  std::string s;
  for (auto c : sems) s += fmt::format("{},", c);
  s += "|";
  for (const auto& q : queues) {
    for (const auto& [t, b] : q) s += fmt::format("{}:{},", t, hex(b));
    s += ";";
  }
  s += "|";
  for (const auto& r : results) {
    for (const auto& x : r) s += x + ",";
    s += ";";
  }
  return s;
}

ReferenceEngine::ReferenceEngine(const IpcProgram& program)
    : program_(&program), objects_(program.objects.size()), procs_(program.processes.size()),
      results_(program.processes.size()) {
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    objects_[i].count = program.objects[i].initial;
    objects_[i].capacity = program.objects[i].capacity;
  }
}

bool ReferenceEngine::runnable(std::size_t p) const {
  return !procs_[p].blocked && procs_[p].pc < program_->processes[p].ops.size();
}

std::vector<std::size_t> ReferenceEngine::runnable_set() const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < procs_.size(); ++p)
    if (runnable(p)) out.push_back(p);
  return out;
}

void ReferenceEngine::complete(std::size_t p, std::string result) {
  results_[p].push_back(std::move(result));
  ++procs_[p].pc;
  procs_[p].blocked = false;
}

bool ReferenceEngine::deliver(std::size_t object, Word type, const Bytes& payload) {
  auto& o = objects_[object];
  for (auto it = o.waiters.begin(); it != o.waiters.end(); ++it) {
    if (it->type != 0 && it->type != type) continue;
    const auto w = it->process;
    o.waiters.erase(it);
    complete(w, recv_result(type, payload));
    return true;
  }
  if (o.bytes + payload.size() > o.capacity) return false;
  o.messages.emplace_back(type, payload);
  o.bytes += static_cast<std::uint32_t>(payload.size());
  return true;
}

void ReferenceEngine::step(std::size_t p) {
  const auto& op = program_->processes[p].ops[procs_[p].pc];
  auto& o = objects_[op.object];
  switch (op.kind) {
    case IpcOp::Kind::Down:
      if (o.count > 0) {
        --o.count;
        complete(p, "ok");
      } else {
        o.waiters.push_back({p, 0, {}});
        procs_[p].blocked = true;
      }
      break;
    case IpcOp::Kind::Up:
      if (!o.waiters.empty()) {
        const auto w = o.waiters.front().process;
        o.waiters.erase(o.waiters.begin());
        complete(w, "ok");
      } else {
        ++o.count;
      }
      complete(p, "ok");
      break;
    case IpcOp::Kind::Send:
      if (op.payload.size() > o.capacity) {
        complete(p, "TooLarge");
      } else if (o.send_waiters.empty() && deliver(op.object, op.type, op.payload)) {
        complete(p, "ok");
      } else if (op.nowait) {
        complete(p, "QueueFull");
      } else {
        o.send_waiters.push_back({p, op.type, op.payload});
        procs_[p].blocked = true;
      }
      break;
    case IpcOp::Kind::Recv: {
      auto it = std::find_if(o.messages.begin(), o.messages.end(),
                             [&](const auto& m) { return op.type == 0 || m.first == op.type; });
      if (it != o.messages.end()) {
        const auto msg = *it;
        o.messages.erase(it);
        o.bytes -= static_cast<std::uint32_t>(msg.second.size());
        while (!o.send_waiters.empty()) {
          const auto h = o.send_waiters.front();
          if (!deliver(op.object, h.type, h.payload)) break;
          o.send_waiters.erase(o.send_waiters.begin());
          complete(h.process, "ok");
        }
        complete(p, recv_result(msg.first, msg.second));
      } else if (op.nowait) {
        complete(p, "NoMessage");
      } else {
        o.waiters.push_back({p, op.type, {}});
        procs_[p].blocked = true;
      }
      break;
    }
  }
}

IpcOutcome ReferenceEngine::outcome() const {
  IpcOutcome out;
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const bool queue = program_->objects[i].queue;
    out.sems.push_back(queue ? 0 : objects_[i].count);
    out.queues.push_back(queue ? objects_[i].messages : std::vector<std::pair<Word, Bytes>>{});
  }
  out.results = results_;
  return out;
}

std::string ReferenceEngine::state_key() const {
  std::string s;
  for (const auto& p : procs_) s += fmt::format("{}{},", p.pc, p.blocked ? "b" : "");
  for (const auto& o : objects_) {
    s += fmt::format("|{}:{}:", o.count, o.bytes);
    for (const auto& [t, b] : o.messages) s += fmt::format("{}.{},", t, hex(b));
    s += "w";
    for (const auto& w : o.waiters) s += fmt::format("{}.{},", w.process, w.type);
    s += "s";
    for (const auto& w : o.send_waiters) s += fmt::format("{},", w.process);
  }
  for (const auto& r : results_) {
    s += "|";
    for (const auto& x : r) s += x + ",";
  }
  return s;
}

std::set<std::string> reachable_outcomes(const IpcProgram& program, std::size_t* states_explored) {
  std::set<std::string> finals;
  std::set<std::string> seen;
  std::vector<ReferenceEngine> stack{ReferenceEngine(program)};
  while (!stack.empty()) {
    ReferenceEngine e = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(e.state_key()).second) continue;
    const auto next = e.runnable_set();
    if (next.empty()) {
      finals.insert(e.outcome().key());
      continue;
    }
    for (auto p : next) {
      ReferenceEngine child = e;
      child.step(p);
      stack.push_back(std::move(child));
    }
  }
  if (states_explored) *states_explored = seen.size();
  return finals;
}

namespace {

Task<void> setup_body(ThreadContext& c, IpcSystem* ipc, const IpcProgram* prog, std::vector<Word>* ids) {
  for (std::size_t i = 0; i < prog->objects.size(); ++i) {
    const auto& o = prog->objects[i];
    const Word key = static_cast<Word>(0x100 + i);
    auto r = o.queue ? co_await ipc->msgget(c, key, o.capacity) : co_await ipc->semget(c, key, o.initial);
    (*ids)[i] = r.value;
  }
}

Task<void> process_body(ThreadContext& c, IpcSystem* ipc, const ProcessDecl* decl, const std::vector<Word>* ids,
                        std::vector<std::uint32_t> delays, std::vector<std::string>* results) {
  for (std::size_t k = 0; k < decl->ops.size(); ++k) {
    for (std::uint32_t d = 0; d < delays[k]; ++d) co_await c.local("think");
    const auto& op = decl->ops[k];
    const Word id = (*ids)[op.object];
    IpcResult r;
    switch (op.kind) {
      case IpcOp::Kind::Down: r = co_await ipc->semop(c, id, -1); break;
      case IpcOp::Kind::Up: r = co_await ipc->semop(c, id, +1); break;
      case IpcOp::Kind::Send: r = co_await ipc->msgsnd(c, id, op.type, op.payload, op.nowait); break;
      case IpcOp::Kind::Recv: r = co_await ipc->msgrcv(c, id, op.type, op.nowait); break;
    }
    if (op.kind == IpcOp::Kind::Recv && r.ok())
      results->push_back(recv_result(r.type, r.payload));
    else
      results->push_back(r.ok() ? "ok" : std::string(to_string(r.status)));
  }
}

}  // namespace

IpcOutcome run_distributed(const IpcProgram& program, std::uint64_t seed, std::uint32_t max_delay, Step budget,
                           IpcStats* stats) {
  std::uint32_t cpus = 3;
  for (auto p : program.processors()) cpus = std::max(cpus, p.value + 1);
  auto m = make_ipc_machine(cpus, seed);
  IpcSystem ipc(*m, kDefaultRegion);
  std::vector<Word> ids(program.objects.size());
  const Pid setup =
      m->spawn(ProcessorId{0}, "setup", [&](ThreadContext& c) { return setup_body(c, &ipc, &program, &ids); });
  m->run_until([&] { return m->thread_state(setup) == machine::ThreadState::Done; }, budget);

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::string>> results(program.processes.size());
  std::vector<Pid> pids;
  for (std::size_t i = 0; i < program.processes.size(); ++i) {
    const auto* decl = &program.processes[i];
    std::vector<std::uint32_t> delays(decl->ops.size());
    for (auto& d : delays) d = max_delay ? static_cast<std::uint32_t>(rng() % (max_delay + 1)) : 0;
    auto* res = &results[i];
    pids.push_back(ipc.spawn(decl->proc, fmt::format("p{}", i),
                             [&ipc, decl, &ids, delays, res](ThreadContext& c) {
                               return process_body(c, &ipc, decl, &ids, delays, res);
                             }));
  }
  auto settled = [&] {
    for (Pid p : pids) {
      const auto st = m->thread_state(p);
      if (st == machine::ThreadState::Failed) return true;
      if (st != machine::ThreadState::Done && st != machine::ThreadState::Blocked) return false;
    }
    for (std::uint32_t i = 0; i < cpus; ++i) {
      if (m->pending_ipis(ProcessorId{i}).any()) return false;
      if (m->thread_state(ipc.helper(ProcessorId{i})) != machine::ThreadState::Blocked) return false;
    }
    return !ipc.lock_holder().has_value();
  };
  m->run_until(settled, budget);
  for (Pid p : pids) {
    if (m->thread_state(p) == machine::ThreadState::Failed)
      throw Error(Errc::Protocol, "process failed: " + m->thread_error(p).value_or("?"));
  }
  if (!settled()) throw Error(Errc::Timeout, "distributed run did not settle");

  IpcOutcome out;
  for (std::size_t i = 0; i < program.objects.size(); ++i) {
    const bool queue = program.objects[i].queue;
    out.sems.push_back(queue ? 0 : ipc.sem_count(ids[i]));
    out.queues.push_back(queue ? ipc.queue_contents(ids[i]) : std::vector<std::pair<Word, Bytes>>{});
  }
  out.results = std::move(results);
  if (stats) *stats = ipc.stats();
  return out;
}

IpcProgram random_program(std::mt19937_64& rng, const ProgramLimits& limits) {
  auto pick = [&](std::uint32_t lo, std::uint32_t hi) { return lo + static_cast<std::uint32_t>(rng() % (hi - lo + 1)); };
  IpcProgram prog;
  const auto nobj = pick(1, limits.max_objects);
  for (std::uint32_t i = 0; i < nobj; ++i) {
    ObjectDecl o;
    o.queue = rng() % 2 == 0;
    if (o.queue)
      o.capacity = pick(1, 2) * 4;
    else
      o.initial = pick(0, 1);
    prog.objects.push_back(o);
  }
  const auto nproc = pick(2, limits.max_processes);
  std::uint32_t blocking = 0;
  for (std::uint32_t i = 0; i < nproc; ++i) {
    ProcessDecl p;
    p.proc = ProcessorId{pick(0, limits.processors - 1)};
    if (i == 1 && p.proc == prog.processes[0].proc) p.proc = ProcessorId{(p.proc.value + 1) % limits.processors};
    const auto nops = pick(1, limits.max_ops_per_process);
    for (std::uint32_t k = 0; k < nops; ++k) {
      IpcOp op;
      op.object = pick(0, nobj - 1);
      if (prog.objects[op.object].queue) {
        op.kind = rng() % 2 ? IpcOp::Kind::Send : IpcOp::Kind::Recv;
        if (op.kind == IpcOp::Kind::Send) {
          op.type = pick(1, 2);
          op.payload.resize(pick(1, 4));
          for (auto& b : op.payload) b = static_cast<std::uint8_t>(rng());
        } else {
          op.type = pick(0, 2);
        }
        op.nowait = rng() % 5 == 0;
      } else {
        op.kind = rng() % 2 ? IpcOp::Kind::Down : IpcOp::Kind::Up;
      }
      if (op.may_block()) {
        if (blocking >= limits.max_blocking) {
          if (op.kind == IpcOp::Kind::Down)
            op.kind = IpcOp::Kind::Up;
          else
            op.nowait = true;
        } else {
          ++blocking;
        }
      }
      p.ops.push_back(std::move(op));
    }
    prog.processes.push_back(std::move(p));
  }
  return prog;
}

}  // namespace secpart::ipc
