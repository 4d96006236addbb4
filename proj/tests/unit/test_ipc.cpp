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

#include <map>
#include <random>

#include "doctest.h"
#include "secpart/ipc/reference.hpp"

using namespace secpart;
using namespace secpart::ipc;
using machine::ThreadState;

namespace {

bool settled(Machine& m, const std::vector<Pid>& pids) {
  for (Pid p : pids)
    if (m.thread_state(p) != ThreadState::Done) return false;
  return true;
}

Task<void> create_sem(ThreadContext& c, IpcSystem* ipc, Word key, Word initial, Word* id) {
  *id = (co_await ipc->semget(c, key, initial)).value;
}

Task<void> create_queue(ThreadContext& c, IpcSystem* ipc, Word key, std::uint32_t cap, Word* id) {
  *id = (co_await ipc->msgget(c, key, cap)).value;
}

Task<void> sem_op(ThreadContext& c, IpcSystem* ipc, const Word* id, int delta, int* done) {
  auto r = co_await ipc->semop(c, *id, delta);
  if (r.ok()) ++*done;
}

Task<void> counter_loop(ThreadContext& c, IpcSystem* ipc, Addr counter, int rounds) {
  for (int i = 0; i < rounds; ++i) {
    co_await ipc->lock(c);
    const Word v = (co_await c.read(counter)).value;
    co_await c.local("compute");
    co_await c.write(counter, v + 1);
    co_await ipc->unlock(c);
  }
}

Word make_sem(Machine& m, IpcSystem& ipc, Word key, Word initial) {
  Word id = 0;
  const Pid p = ipc.spawn(ProcessorId{0}, "mk", [&](ThreadContext& c) { return create_sem(c, &ipc, key, initial, &id); });
  m.run_until([&] { return settled(m, {p}); }, 100000);
  return id;
}

Word make_queue(Machine& m, IpcSystem& ipc, Word key, std::uint32_t cap) {
  Word id = 0;
  const Pid p = ipc.spawn(ProcessorId{0}, "mk", [&](ThreadContext& c) { return create_queue(c, &ipc, key, cap, &id); });
  m.run_until([&] { return settled(m, {p}); }, 100000);
  return id;
}

}  // namespace

TEST_CASE("buddy allocator agrees with an interval oracle") {
  constexpr std::uint32_t cap = 1u << 16;
  BuddyAllocator heap(cap, 32);
  std::map<std::uint32_t, std::uint32_t> oracle;  // offset -> block size
  std::mt19937_64 rng(7);
  int failures = 0;
  for (int i = 0; i < 10000; ++i) {
    if (oracle.empty() || rng() % 3 != 0) {
      const auto size = static_cast<std::uint32_t>(1 + rng() % 3000);
      std::uint32_t off = 0;
      try {
        off = heap.alloc(size);
      } catch (const Error& e) {
        CHECK(e.code() == Errc::OutOfMemory);
        ++failures;
        continue;
      }
      const auto block = heap.live_size(off);
      CHECK(block >= size);
      CHECK((block & (block - 1)) == 0);
      CHECK(off % block == 0);
      CHECK(off + block <= cap);
      auto next = oracle.lower_bound(off);
      if (next != oracle.end()) CHECK(off + block <= next->first);
      if (next != oracle.begin()) {
        auto prev = std::prev(next);
        CHECK(prev->first + prev->second <= off);
      }
      oracle[off] = block;
    } else {
      auto it = oracle.begin();
      std::advance(it, static_cast<long>(rng() % oracle.size()));
      heap.free(it->first);
      oracle.erase(it);
    }
    std::uint64_t used = 0;
    for (const auto& [o, s] : oracle) used += s;
    REQUIRE(heap.free_bytes() + used == cap);
  }
  CHECK(failures > 0);
  for (const auto& [o, s] : oracle) heap.free(o);
  CHECK(heap.pristine());
  CHECK(heap.alloc(cap) == 0);
  CHECK_THROWS_AS(heap.free(32), Error);
}

TEST_CASE("buddy frees coalesce back into one block") {
  BuddyAllocator heap(1024, 32);
  std::vector<std::uint32_t> offs;
  for (int i = 0; i < 32; ++i) offs.push_back(heap.alloc(1));
  CHECK_THROWS_AS(heap.alloc(1), Error);
  for (std::size_t i = 0; i < offs.size(); i += 2) heap.free(offs[i]);
  CHECK_THROWS_AS(heap.alloc(64), Error);
  for (std::size_t i = 1; i < offs.size(); i += 2) heap.free(offs[i]);
  CHECK(heap.pristine());
  CHECK_THROWS_AS(BuddyAllocator(1000, 32), Error);
}

TEST_CASE("the region lock serializes read-modify-write across processors") {
  auto m = make_ipc_machine(3, 11);
  IpcSystem ipc(*m, kDefaultRegion);
  const Addr counter = 0x00400000;
  std::vector<Pid> pids;
  for (std::uint32_t p = 0; p < 3; ++p)
    pids.push_back(ipc.spawn(ProcessorId{p}, "inc", [&ipc, counter](ThreadContext& c) {
      return counter_loop(c, &ipc, counter, 50);
    }));
  m->run_until([&] { return settled(*m, pids); }, 500000);
  CHECK(settled(*m, pids));
  CHECK(m->peek(counter) == 150);
  CHECK(ipc.violations().empty());
  CHECK(ipc.stats().lock_spins > 0);
}

TEST_CASE("semaphore wake-ups: local without IPI, remote through the helper") {
  auto m = make_ipc_machine(3, 3);
  IpcSystem ipc(*m, kDefaultRegion);
  const Word id = make_sem(*m, ipc, 42, 0);
  REQUIRE(id != 0);
  int done = 0;

  SUBCASE("same processor") {
    const Pid down = ipc.spawn(ProcessorId{1}, "down", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, -1, &done); });
    m->run(2000);
    CHECK(m->thread_state(down) == ThreadState::Blocked);
    CHECK(ipc.sem_waiters(id) == 1);
    const Pid up = ipc.spawn(ProcessorId{1}, "up", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, +1, &done); });
    m->run_until([&] { return settled(*m, {down, up}); }, 100000);
    CHECK(done == 2);
    CHECK(ipc.stats().local_wakes == 1);
    CHECK(ipc.stats().wake_ipis == 0);
  }
  SUBCASE("other processor") {
    const Pid down = ipc.spawn(ProcessorId{2}, "down", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, -1, &done); });
    m->run(2000);
    const Pid up = ipc.spawn(ProcessorId{0}, "up", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, +1, &done); });
    m->run_until([&] { return settled(*m, {down, up}); }, 100000);
    CHECK(done == 2);
    CHECK(ipc.stats().remote_wakes == 1);
    CHECK(ipc.stats().wake_ipis == 1);
    CHECK(ipc.stats().helper_drains >= 1);
    CHECK(ipc.control_list(ProcessorId{2}).empty());
  }
  CHECK(ipc.sem_count(id) == 0);
  CHECK(ipc.invariants_hold());
  CHECK(ipc.heap().pristine());
}

TEST_CASE("a burst of remote wake-ups shares IPIs") {
  auto m = make_ipc_machine(3, 5);
  IpcSystem ipc(*m, kDefaultRegion);
  const Word id = make_sem(*m, ipc, 1, 0);
  int done = 0;
  std::vector<Pid> pids;
  for (int i = 0; i < 6; ++i)
    pids.push_back(ipc.spawn(ProcessorId{1}, "down", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, -1, &done); }));
  m->run(5000);
  REQUIRE(ipc.sem_waiters(id) == 6);
  for (int i = 0; i < 6; ++i)
    pids.push_back(ipc.spawn(ProcessorId{0}, "up", [&](ThreadContext& c) { return sem_op(c, &ipc, &id, +1, &done); }));
  m->run_until([&] { return settled(*m, pids); }, 500000);
  CHECK(done == 12);
  const auto& s = ipc.stats();
  CHECK(s.remote_wakes == 6);
  CHECK(s.wake_ipis + s.linked_without_ipi == 6);
  CHECK(s.wake_ipis < 6);
  CHECK(ipc.heap().pristine());
}

namespace {

Task<void> sender(ThreadContext& c, IpcSystem* ipc, const Word* id, std::vector<std::pair<Word, Bytes>> msgs,
                  std::vector<IpcStatus>* out) {
  for (auto& [t, b] : msgs) out->push_back((co_await ipc->msgsnd(c, *id, t, b)).status);
}

Task<void> receiver(ThreadContext& c, IpcSystem* ipc, const Word* id, Word filter, int n, bool nowait,
                    std::vector<IpcResult>* out) {
  for (int i = 0; i < n; ++i) out->push_back(co_await ipc->msgrcv(c, *id, filter, nowait));
}

}  // namespace

TEST_CASE("message queue: FIFO per type, filters, full queues block senders") {
  auto m = make_ipc_machine(3, 9);
  IpcSystem ipc(*m, kDefaultRegion);
  const Word id = make_queue(*m, ipc, 5, 8);
  std::vector<IpcStatus> sent;
  const Pid s = ipc.spawn(ProcessorId{0}, "tx", [&](ThreadContext& c) {
    return sender(c, &ipc, &id, {{1, {1, 2, 3}}, {2, {4, 5}}, {1, {6, 7, 8}}, {2, {9}}}, &sent);
  });
  m->run(20000);
  // 3 + 2 + 3 bytes fill the queue; the fourth send waits.
  CHECK(m->thread_state(s) == ThreadState::Blocked);
  CHECK(ipc.queue_bytes(id) == 8);

  std::vector<IpcResult> got;
  const Pid r = ipc.spawn(ProcessorId{2}, "rx", [&](ThreadContext& c) { return receiver(c, &ipc, &id, 2, 2, false, &got); });
  m->run_until([&] { return settled(*m, {s, r}); }, 200000);
  REQUIRE(got.size() == 2);
  CHECK(got[0].payload == Bytes{4, 5});
  CHECK(got[1].payload == Bytes{9});
  CHECK(sent == std::vector<IpcStatus>(4, IpcStatus::Ok));

  std::vector<IpcResult> rest;
  const Pid r2 = ipc.spawn(ProcessorId{1}, "rx", [&](ThreadContext& c) { return receiver(c, &ipc, &id, 0, 3, true, &rest); });
  m->run_until([&] { return settled(*m, {r2}); }, 200000);
  REQUIRE(rest.size() == 3);
  CHECK(rest[0].payload == Bytes{1, 2, 3});
  CHECK(rest[1].payload == Bytes{6, 7, 8});
  CHECK(rest[2].status == IpcStatus::NoMessage);
  CHECK(ipc.heap().pristine());
  CHECK(ipc.invariants_hold());
}

namespace {

Task<void> shm_writer(ThreadContext& c, IpcSystem* ipc, Word* id, Word value) {
  *id = (co_await ipc->shmget(c, 77, 4096)).value;
  auto at = co_await ipc->shmat(c, *id);
  co_await c.write(at.value + 16, value);
}

Task<void> shm_reader(ThreadContext& c, IpcSystem* ipc, Word* out, IpcStatus* detach) {
  auto id = (co_await ipc->shmget(c, 77, 4096, false)).value;
  auto at = co_await ipc->shmat(c, id);
  *out = (co_await c.read(at.value + 16)).value;
  *detach = (co_await ipc->shmdt(c, at.value)).status;
}

}  // namespace

TEST_CASE("shared memory written on one processor is read on another") {
  auto m = make_ipc_machine(3, 1);
  IpcSystem ipc(*m, kDefaultRegion);
  Word id = 0, seen = 0;
  IpcStatus st = IpcStatus::UnknownId;
  const Pid w = ipc.spawn(ProcessorId{0}, "w", [&](ThreadContext& c) { return shm_writer(c, &ipc, &id, 0xfeed); });
  m->run_until([&] { return settled(*m, {w}); }, 100000);
  const Pid r = ipc.spawn(ProcessorId{2}, "r", [&](ThreadContext& c) { return shm_reader(c, &ipc, &seen, &st); });
  m->run_until([&] { return settled(*m, {r}); }, 100000);
  CHECK(seen == 0xfeed);
  CHECK(st == IpcStatus::Ok);
  CHECK(m->faults().empty());
}

TEST_CASE("reference engine enumerates every serialization") {
  // Two downs on a zero semaphore and one up: exactly one down completes.
  IpcProgram prog;
  prog.objects = {{false, 0, 0}};
  IpcOp down{IpcOp::Kind::Down, 0, 1, {}, false};
  IpcOp up{IpcOp::Kind::Up, 0, 1, {}, false};
  prog.processes = {{ProcessorId{0}, {down}}, {ProcessorId{1}, {down}}, {ProcessorId{2}, {up}}};
  const auto finals = reachable_outcomes(prog);
  CHECK(finals.size() == 2);
  for (const auto& k : finals) CHECK(k.rfind("0,", 0) == 0);
}

TEST_CASE("distributed runs land on reference outcomes") {
  std::mt19937_64 rng(2026);
  int programs = 0;
  for (int i = 0; i < 25; ++i) {
    const auto prog = random_program(rng);
    CHECK(prog.blocking_points() <= 8);
    const auto finals = reachable_outcomes(prog);
    REQUIRE(!finals.empty());
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto out = run_distributed(prog, seed * 131 + static_cast<std::uint64_t>(i));
      INFO(prog.describe());
      INFO(out.key());
      CHECK(finals.count(out.key()) == 1);
    }
    ++programs;
  }
  CHECK(programs == 25);
}
