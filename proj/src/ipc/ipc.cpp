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

#include "secpart/ipc/ipc.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace secpart::ipc {

using machine::PageTable;

std::string_view to_string(IpcStatus s) {
  switch (s) {
    case IpcStatus::Ok: return "Ok";
    case IpcStatus::UnknownId: return "UnknownId";
    case IpcStatus::UnknownKey: return "UnknownKey";
    case IpcStatus::QueueFull: return "QueueFull";
    case IpcStatus::NoMessage: return "NoMessage";
    case IpcStatus::NotAttached: return "NotAttached";
    case IpcStatus::OutOfMemory: return "OutOfMemory";
    case IpcStatus::TooLarge: return "TooLarge";
    case IpcStatus::EmptyPayload: return "EmptyPayload";
  }
  return "?";
}

std::unique_ptr<Machine> make_ipc_machine(std::uint32_t processors, std::uint64_t seed) {
  machine::MachineConfig cfg;
  cfg.processor_count = processors;
  cfg.rng_seed = seed;
  auto m = Machine::build(cfg);
  for (std::uint32_t i = 0; i < processors; ++i) {
    const ProcessorId p{i};
    Word t = m->add_page_table(PageTable::identity(cfg.page_size, {0, cfg.ram_size}, fmt::format("cpu{}", i)));
    auto ctx = m->snapshot_context(p);
    ctx.system.translation_base = t;
    m->restore_context(p, ctx);
  }
  return m;
}

IpcSystem::IpcSystem(Machine& m, AddressRange region, std::uint32_t min_block)
    : m_(m), region_(region), heap_(region::kHeapSize, min_block) {
  if (region.length < region::kMinSize)
    throw Error(Errc::Config, fmt::format("IPC region needs at least {} bytes", region::kMinSize));
  for (std::uint32_t i = 0; i < m_.processor_count(); ++i) {
    const ProcessorId p{i};
    const Pid pid = m_.spawn(p, fmt::format("mu-ipc-{}", i), [this](ThreadContext& c) { return helper_loop(c); });
    helpers_.push_back(pid);
    helper_set_.insert(pid);
    m_.set_irq_handler(p, kWakeVector, [this, pid](ProcessorId, std::uint32_t) { m_.wake(pid); });
  }
}

IpcSystem::~IpcSystem() {
  for (std::uint32_t i = 0; i < helpers_.size(); ++i) {
    m_.kill(helpers_[i]);
    m_.set_irq_handler(ProcessorId{i}, kWakeVector, {});
  }
}

bool IpcSystem::is_helper(Pid pid) const { return helper_set_.contains(pid); }

Pid IpcSystem::spawn(ProcessorId p, std::string name, const machine::ThreadBody& body) {
  return m_.spawn(p, std::move(name), body);
}

void IpcSystem::note(ThreadContext& ctx, std::string op, Word object, std::string detail) {
  trace_.push_back({m_.now(), std::move(op), ctx.proc(), ctx.pid(), object, std::move(detail)});
}

IpcSystem::Object* IpcSystem::find(Word id, Kind kind) {
  auto it = objects_.find(id);
  return it == objects_.end() || it->second.kind != kind ? nullptr : &it->second;
}

const IpcSystem::Object* IpcSystem::find(Word id, Kind kind) const {
  auto it = objects_.find(id);
  return it == objects_.end() || it->second.kind != kind ? nullptr : &it->second;
}

// -- lock ------------------------------------------------------------------------------

Task<void> IpcSystem::lock(ThreadContext& ctx) {
  if (holder_ == ctx.pid()) {
    violations_.push_back(fmt::format("step {}: pid {} re-acquired the region lock", m_.now(), ctx.pid()));
    throw Error(Errc::Protocol, "recursive region lock");
  }
  for (;;) {
    auto r = co_await ctx.swap(lock_addr(), 1);
    if (!r.ok()) throw FaultError(*r.fault);
    if (r.value == 0) break;
    ++stats_.lock_spins;
  }
  if (holder_)
    violations_.push_back(fmt::format("step {}: pid {} entered while pid {} holds the lock", m_.now(), ctx.pid(), *holder_));
  holder_ = ctx.pid();
  ++stats_.lock_acquires;
}

Task<void> IpcSystem::unlock(ThreadContext& ctx) {
  if (holder_ != ctx.pid()) {
    violations_.push_back(fmt::format("step {}: pid {} unlocked without holding the lock", m_.now(), ctx.pid()));
    note(ctx, "unlock-violation", 0);
    co_return;
  }
  holder_.reset();
  co_await ctx.write(lock_addr(), 0);
}

// -- wake-ups --------------------------------------------------------------------------

Task<void> IpcSystem::post_wakeup(ThreadContext& ctx, ProcessorId target, Pid pid) {
  if (holder_ != ctx.pid())
    violations_.push_back(fmt::format("step {}: post_wakeup without the region lock", m_.now()));
  std::uint32_t off = 0;
  try {
    off = heap_.alloc(2 * kWordBytes);
  } catch (const Error&) {
    violations_.push_back(fmt::format("step {}: no memory for a control message", m_.now()));
    throw;
  }
  const Addr node = heap_addr(off);
  co_await ctx.write(node, pid);
  co_await ctx.write(node + kWordBytes, 0);
  const Addr head_addr = ctrl_head_addr(target);
  auto head = co_await ctx.read(head_addr);
  if (head.value == 0) {
    co_await ctx.write(head_addr, node);
    co_await ctx.ipi(target, kWakeVector);
    ++stats_.wake_ipis;
    note(ctx, "wake-ipi", 0, fmt::format("cpu{} pid {}", target.value, pid));
  } else {
    Addr cur = head.value;
    for (;;) {
      auto nxt = co_await ctx.read(cur + kWordBytes);
      if (nxt.value == 0) break;
      cur = nxt.value;
    }
    co_await ctx.write(cur + kWordBytes, node);
    ++stats_.linked_without_ipi;
    note(ctx, "wake-link", 0, fmt::format("cpu{} pid {}", target.value, pid));
  }
}

Task<void> IpcSystem::wake(ThreadContext& ctx, const Waiter& w, Word object, const char* why) {
  if (w.proc == ctx.proc()) {
    co_await ctx.local("wake");
    m_.wake(w.pid);
    ++stats_.local_wakes;
    note(ctx, "wake-local", object, fmt::format("{} pid {}", why, w.pid));
  } else {
    co_await post_wakeup(ctx, w.proc, w.pid);
    ++stats_.remote_wakes;
  }
}

Task<void> IpcSystem::helper_loop(ThreadContext& ctx) {
  const Addr head_addr = ctrl_head_addr(ctx.proc());
  for (;;) {
    co_await ctx.block();
    bool drained = false;
    for (;;) {
      co_await lock(ctx);
      auto head = co_await ctx.read(head_addr);
      if (head.value != 0) co_await ctx.write(head_addr, 0);
      co_await unlock(ctx);
      if (head.value == 0) break;
      drained = true;
      ++stats_.helper_drains;
      std::vector<Addr> nodes;
      for (Addr cur = head.value; cur != 0;) {
        auto pid = co_await ctx.read(cur);
        auto nxt = co_await ctx.read(cur + kWordBytes);
        nodes.push_back(cur);
        co_await ctx.local("wake");
        m_.wake(pid.value);
        note(ctx, "helper-wake", 0, fmt::format("pid {}", pid.value));
        cur = nxt.value;
      }
      co_await lock(ctx);
      for (Addr n : nodes) heap_.free(n - heap_base());
      co_await unlock(ctx);
    }
    if (!drained) ++stats_.helper_spurious;
  }
}

// -- objects ---------------------------------------------------------------------------

Task<std::optional<Word>> IpcSystem::lookup(ThreadContext& ctx, Word key, Kind kind) {
  co_await ctx.local("lookup");
  for (const auto& [id, o] : objects_)
    if (o.key == key && o.kind == kind) co_return id;
  co_return std::nullopt;
}

Task<void> IpcSystem::publish(ThreadContext& ctx, Word id) {
  const auto& o = objects_.at(id);
  const Addr a = object_addr(id);
  co_await ctx.write(a, static_cast<Word>(o.kind) + 1);
  co_await ctx.write(a + 4, o.key);
  Word third = 0;
  if (o.kind == Kind::Semaphore) third = static_cast<Word>(o.initial);
  if (o.kind == Kind::Segment) third = o.seg_offset;
  co_await ctx.write(a + 8, third);
  co_await ctx.write(a + 12, 0);
}

Task<IpcResult> IpcSystem::semget(ThreadContext& ctx, Word key, Word initial, bool create) {
  co_await lock(ctx);
  IpcResult res;
  if (auto id = co_await lookup(ctx, key, Kind::Semaphore)) {
    res.value = *id;
  } else if (!create) {
    res.status = IpcStatus::UnknownKey;
  } else if (objects_.size() >= kMaxObjects) {
    res.status = IpcStatus::OutOfMemory;
  } else {
    const Word id = next_id_++;
    auto& o = objects_[id];
    o.kind = Kind::Semaphore;
    o.key = key;
    o.initial = initial;
    co_await publish(ctx, id);
    res.value = id;
  }
  co_await unlock(ctx);
  co_return res;
}

Task<IpcResult> IpcSystem::semop(ThreadContext& ctx, Word id, int delta) {
  co_await lock(ctx);
  auto* o = find(id, Kind::Semaphore);
  if (!o || delta == 0) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::UnknownId);
  }
  const Addr count_addr = object_addr(id) + 8;
  auto count = co_await ctx.read(count_addr);
  if (delta < 0) {
    if (count.value > 0) {
      co_await ctx.write(count_addr, count.value - 1);
      ++o->downs;
      co_await unlock(ctx);
      co_return IpcResult{};
    }
    o->waiters.push_back({ctx.proc(), ctx.pid(), 0, {}});
    co_await ctx.write(object_addr(id) + 12, static_cast<Word>(o->waiters.size()));
    note(ctx, "block", id, "semop down");
    co_await unlock(ctx);
    co_await ctx.block();
    note(ctx, "resume", id, "semop down");
    co_return IpcResult{};
  }
  ++o->ups;
  if (!o->waiters.empty()) {
    // The unit passes straight to the oldest waiter.
    const Waiter w = o->waiters.front();
    o->waiters.pop_front();
    ++o->downs;
    co_await ctx.write(object_addr(id) + 12, static_cast<Word>(o->waiters.size()));
    co_await wake(ctx, w, id, "semop up");
  } else {
    co_await ctx.write(count_addr, count.value + 1);
  }
  co_await unlock(ctx);
  co_return IpcResult{};
}

Task<IpcResult> IpcSystem::msgget(ThreadContext& ctx, Word key, std::uint32_t capacity, bool create) {
  co_await lock(ctx);
  IpcResult res;
  if (auto id = co_await lookup(ctx, key, Kind::Queue)) {
    res.value = *id;
  } else if (!create) {
    res.status = IpcStatus::UnknownKey;
  } else if (objects_.size() >= kMaxObjects) {
    res.status = IpcStatus::OutOfMemory;
  } else {
    const Word id = next_id_++;
    auto& o = objects_[id];
    o.kind = Kind::Queue;
    o.key = key;
    o.capacity = capacity;
    co_await publish(ctx, id);
    res.value = id;
  }
  co_await unlock(ctx);
  co_return res;
}

Task<IpcStatus> IpcSystem::store_message(ThreadContext& ctx, Word type, const Bytes& payload, Message& out) {
  const auto len = static_cast<std::uint32_t>(payload.size());
  std::uint32_t off = 0;
  try {
    off = heap_.alloc(2 * kWordBytes + len);
  } catch (const Error& e) {
    if (e.code() != Errc::OutOfMemory) throw;
    co_return IpcStatus::OutOfMemory;
  }
  const Addr a = heap_addr(off);
  co_await ctx.write(a, type);
  co_await ctx.write(a + 4, len);
  for (std::uint32_t i = 0; i < len; i += kWordBytes) {
    Word w = 0;
    for (std::uint32_t b = 0; b < kWordBytes && i + b < len; ++b) w |= Word{payload[i + b]} << (8 * b);
    co_await ctx.write(a + 8 + i, w);
  }
  out = Message{type, off, len};
  co_return IpcStatus::Ok;
}

Task<Bytes> IpcSystem::load_message(ThreadContext& ctx, const Message& msg) {
  Bytes out(msg.length);
  const Addr a = heap_addr(msg.offset);
  for (std::uint32_t i = 0; i < msg.length; i += kWordBytes) {
    auto r = co_await ctx.read(a + 8 + i);
    for (std::uint32_t b = 0; b < kWordBytes && i + b < msg.length; ++b)
      out[i + b] = static_cast<std::uint8_t>(r.value >> (8 * b));
  }
  heap_.free(msg.offset);
  co_return out;
}

Task<IpcStatus> IpcSystem::deliver(ThreadContext& ctx, Word id, Word type, const Bytes& payload) {
  auto* o = find(id, Kind::Queue);
  for (auto it = o->waiters.begin(); it != o->waiters.end(); ++it) {
    if (it->type != 0 && it->type != type) continue;
    Message msg;
    const auto st = co_await store_message(ctx, type, payload, msg);
    if (st != IpcStatus::Ok) co_return st;
    const Waiter w = *it;
    o->waiters.erase(it);
    deliveries_[w.pid] = Delivery{IpcStatus::Ok, msg};
    co_await wake(ctx, w, id, "msg handoff");
    co_return IpcStatus::Ok;
  }
  if (o->bytes + payload.size() > o->capacity) co_return IpcStatus::QueueFull;
  Message msg;
  const auto st = co_await store_message(ctx, type, payload, msg);
  if (st != IpcStatus::Ok) co_return st;
  o->messages.push_back(msg);
  o->bytes += msg.length;
  co_await ctx.write(object_addr(id) + 8, o->bytes);
  co_return IpcStatus::Ok;
}

Task<void> IpcSystem::admit_senders(ThreadContext& ctx, Word id) {
  auto* o = find(id, Kind::Queue);
  while (!o->send_waiters.empty()) {
    const Waiter w = o->send_waiters.front();
    const auto st = co_await deliver(ctx, id, w.type, w.payload);
    if (st == IpcStatus::QueueFull) break;
    o->send_waiters.pop_front();
    deliveries_[w.pid] = Delivery{st, std::nullopt};
    co_await wake(ctx, w, id, "msg send admitted");
  }
}

Task<IpcResult> IpcSystem::msgsnd(ThreadContext& ctx, Word id, Word type, Bytes payload, bool nowait) {
  co_await lock(ctx);
  auto* o = find(id, Kind::Queue);
  if (!o) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::UnknownId);
  }
  if (payload.size() > o->capacity) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::TooLarge);
  }
  // Senders queue behind earlier blocked senders.
  IpcStatus st = o->send_waiters.empty() ? co_await deliver(ctx, id, type, payload) : IpcStatus::QueueFull;
  if (st != IpcStatus::QueueFull || nowait) {
    co_await unlock(ctx);
    co_return IpcResult::of(st);
  }
  o->send_waiters.push_back({ctx.proc(), ctx.pid(), type, std::move(payload)});
  note(ctx, "block", id, "msgsnd full");
  co_await unlock(ctx);
  co_await ctx.block();
  note(ctx, "resume", id, "msgsnd");
  auto d = deliveries_.at(ctx.pid());
  deliveries_.erase(ctx.pid());
  co_return IpcResult::of(d.status);
}

Task<IpcResult> IpcSystem::msgrcv(ThreadContext& ctx, Word id, Word type, bool nowait) {
  co_await lock(ctx);
  auto* o = find(id, Kind::Queue);
  if (!o) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::UnknownId);
  }
  auto it = std::find_if(o->messages.begin(), o->messages.end(),
                         [&](const Message& m) { return type == 0 || m.type == type; });
  if (it != o->messages.end()) {
    const Message msg = *it;
    o->messages.erase(it);
    o->bytes -= msg.length;
    co_await ctx.write(object_addr(id) + 8, o->bytes);
    IpcResult res;
    res.type = msg.type;
    res.payload = co_await load_message(ctx, msg);
    co_await admit_senders(ctx, id);
    co_await unlock(ctx);
    co_return res;
  }
  if (nowait) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::NoMessage);
  }
  o->waiters.push_back({ctx.proc(), ctx.pid(), type, {}});
  note(ctx, "block", id, "msgrcv empty");
  co_await unlock(ctx);
  co_await ctx.block();
  note(ctx, "resume", id, "msgrcv");
  const auto d = deliveries_.at(ctx.pid());
  deliveries_.erase(ctx.pid());
  IpcResult res;
  res.status = d.status;
  if (d.message) {
    res.type = d.message->type;
    co_await lock(ctx);
    res.payload = co_await load_message(ctx, *d.message);
    co_await unlock(ctx);
  }
  co_return res;
}

Task<IpcResult> IpcSystem::shmget(ThreadContext& ctx, Word key, std::uint32_t size, bool create) {
  co_await lock(ctx);
  IpcResult res;
  if (auto id = co_await lookup(ctx, key, Kind::Segment)) {
    res.value = *id;
    co_await unlock(ctx);
    co_return res;
  }
  if (!create) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::UnknownKey);
  }
  const std::uint32_t page = m_.config().page_size;
  const std::uint32_t rounded = std::max<std::uint32_t>(page, (size + page - 1) / page * page);
  std::uint32_t off = 0;
  try {
    off = heap_.alloc(rounded);
  } catch (const Error& e) {
    if (e.code() != Errc::OutOfMemory) throw;
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::OutOfMemory);
  }
  const Word id = next_id_++;
  auto& o = objects_[id];
  o.kind = Kind::Segment;
  o.key = key;
  o.seg_offset = off;
  o.seg_size = heap_.live_size(off);
  for (std::uint32_t i = 0; i < o.seg_size; i += kWordBytes) co_await ctx.write(heap_addr(off) + i, 0);
  co_await publish(ctx, id);
  co_await unlock(ctx);
  res.value = id;
  co_return res;
}

Task<IpcResult> IpcSystem::shmat(ThreadContext& ctx, Word id) {
  co_await lock(ctx);
  auto* o = find(id, Kind::Segment);
  if (!o) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::UnknownId);
  }
  const Addr vaddr = kShmWindow + o->seg_offset;
  auto& mine = attachments_[ctx.pid()];
  if (!mine.contains(vaddr)) {
    auto& count = mapped_[{ctx.proc().value, id}];
    if (count == 0) {
      const Word table = m_.processor(ctx.proc()).regs.system.translation_base;
      m_.page_table(table).map({vaddr, heap_addr(o->seg_offset), o->seg_size});
    }
    ++count;
    mine[vaddr] = id;
  }
  co_await ctx.local("shmat");
  note(ctx, "shmat", id, fmt::format("0x{:08x}", vaddr));
  co_await unlock(ctx);
  IpcResult res;
  res.value = vaddr;
  co_return res;
}

Task<IpcResult> IpcSystem::shmdt(ThreadContext& ctx, Addr addr) {
  co_await lock(ctx);
  auto pit = attachments_.find(ctx.pid());
  if (pit == attachments_.end() || !pit->second.contains(addr)) {
    co_await unlock(ctx);
    co_return IpcResult::of(IpcStatus::NotAttached);
  }
  const Word id = pit->second.at(addr);
  pit->second.erase(addr);
  auto& count = mapped_[{ctx.proc().value, id}];
  if (--count == 0) {
    const Word table = m_.processor(ctx.proc()).regs.system.translation_base;
    m_.page_table(table).unmap(addr);
    mapped_.erase({ctx.proc().value, id});
  }
  co_await ctx.local("shmdt");
  note(ctx, "shmdt", id, fmt::format("0x{:08x}", addr));
  co_await unlock(ctx);
  co_return IpcResult{};
}

// -- inspection ------------------------------------------------------------------------

Word IpcSystem::sem_count(Word id) const {
  if (!find(id, Kind::Semaphore)) throw Error(Errc::UnknownId, fmt::format("semaphore {}", id));
  return m_.peek(object_addr(id) + 8);
}

std::size_t IpcSystem::sem_waiters(Word id) const {
  const auto* o = find(id, Kind::Semaphore);
  if (!o) throw Error(Errc::UnknownId, fmt::format("semaphore {}", id));
  return o->waiters.size();
}

std::vector<std::pair<Word, Bytes>> IpcSystem::queue_contents(Word id) const {
  const auto* o = find(id, Kind::Queue);
  if (!o) throw Error(Errc::UnknownId, fmt::format("queue {}", id));
  std::vector<std::pair<Word, Bytes>> out;
  for (const auto& msg : o->messages) {
    Bytes b(msg.length);
    const Addr a = heap_addr(msg.offset) + 8;
    for (std::uint32_t i = 0; i < msg.length; ++i)
      b[i] = static_cast<std::uint8_t>(m_.peek(a + (i & ~3u)) >> (8 * (i & 3u)));
    out.emplace_back(msg.type, std::move(b));
  }
  return out;
}

std::size_t IpcSystem::queue_bytes(Word id) const {
  const auto* o = find(id, Kind::Queue);
  if (!o) throw Error(Errc::UnknownId, fmt::format("queue {}", id));
  return o->bytes;
}

std::vector<Pid> IpcSystem::control_list(ProcessorId p) const {
  std::vector<Pid> out;
  for (Addr cur = m_.peek(ctrl_head_addr(p)); cur != 0 && out.size() < 4096; cur = m_.peek(cur + kWordBytes))
    out.push_back(m_.peek(cur));
  return out;
}

bool IpcSystem::invariants_hold() const {
  for (const auto& [id, o] : objects_) {
    std::set<Pid> seen;
    for (const auto& w : o.waiters)
      if (!seen.insert(w.pid).second) return false;
    if (o.kind == Kind::Semaphore) {
      if (o.downs > o.initial + o.ups) return false;
      if (m_.peek(object_addr(id) + 8) != o.initial + o.ups - o.downs) return false;
    }
    if (o.kind == Kind::Queue) {
      std::uint64_t sum = 0;
      for (const auto& msg : o.messages) sum += msg.length;
      if (sum != o.bytes || o.bytes > o.capacity) return false;
    }
  }
  std::uint64_t prev_end = 0;
  for (const auto& [off, size] : heap_.live()) {
    if (off % size != 0 || off < prev_end || std::uint64_t{off} + size > heap_.capacity()) return false;
    prev_end = std::uint64_t{off} + size;
  }
  return true;
}

}  // namespace secpart::ipc
