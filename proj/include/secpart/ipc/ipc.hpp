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

// User-level System V IPC across processors. Object state lives in a shared
// RAM region guarded by a swap lock; a sleeping process on another processor
// is woken by linking a control message to that processor's list and, when
// the list was empty, ringing its helper process with an IPI.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "secpart/ipc/buddy.hpp"
#include "secpart/machine/machine.hpp"

namespace secpart::ipc {

using machine::Machine;
using machine::Pid;
using machine::Task;
using machine::ThreadContext;

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kWakeVector = 7;
inline constexpr std::uint32_t kDefaultQueueCapacity = 64 * 1024;
inline constexpr std::uint32_t kMaxObjects = 64;
/// Virtual window shared-memory segments are attached at.
inline constexpr Addr kShmWindow = 0x40000000;
/// Region used by make_ipc_machine platforms.
inline constexpr AddressRange kDefaultRegion{0x00800000, 0x00100000};

enum class IpcStatus : std::uint8_t {
  Ok,
  UnknownId,
  UnknownKey,
  QueueFull,
  NoMessage,
  NotAttached,
  OutOfMemory,
  TooLarge,
  EmptyPayload,
};

std::string_view to_string(IpcStatus s);

struct IpcResult {
  IpcStatus status = IpcStatus::Ok;
  Word value = 0;  // object id, attach address
  Word type = 0;
  Bytes payload;

  bool ok() const { return status == IpcStatus::Ok; }
  static IpcResult of(IpcStatus s) {
    IpcResult r;
    r.status = s;
    return r;
  }
};

/// `op,step,proc,pid,object,detail` record of a block, wake or helper event.
struct IpcTraceRecord {
  Step step = 0;
  std::string op;
  ProcessorId proc;
  Pid pid = 0;
  Word object = 0;
  std::string detail;
};

struct IpcStats {
  std::uint64_t lock_acquires = 0;
  std::uint64_t lock_spins = 0;
  std::uint64_t local_wakes = 0;
  std::uint64_t remote_wakes = 0;
  std::uint64_t wake_ipis = 0;
  std::uint64_t linked_without_ipi = 0;
  std::uint64_t helper_drains = 0;
  std::uint64_t helper_spurious = 0;
};

/// Region layout, byte offsets from the region base.
namespace region {
inline constexpr std::uint32_t kLock = 0x0000;
inline constexpr std::uint32_t kCtrlHeads = 0x0010;  // one word per processor
inline constexpr std::uint32_t kObjects = 0x0100;    // 16 bytes per object
inline constexpr std::uint32_t kObjectStride = 16;
inline constexpr std::uint32_t kHeapOffset = 0x80000;
inline constexpr std::uint32_t kHeapSize = 0x80000;
inline constexpr std::uint32_t kMinSize = kHeapOffset + kHeapSize;
}  // namespace region

/// A machine whose processors each have their own identity-mapped page table
/// over RAM and run only host threads.
std::unique_ptr<Machine> make_ipc_machine(std::uint32_t processors = 3, std::uint64_t seed = 0);

class IpcSystem {
 public:
  /// Registers one helper process and a wake IPI handler per processor.
  /// The region must be identity mapped for every processor.
  IpcSystem(Machine& m, AddressRange region, std::uint32_t min_block = 32);
  ~IpcSystem();
  IpcSystem(const IpcSystem&) = delete;
  IpcSystem& operator=(const IpcSystem&) = delete;

  Machine& machine() { return m_; }
  AddressRange region() const { return region_; }

  /// Spawns a user process on p.
  Pid spawn(ProcessorId p, std::string name, const machine::ThreadBody& body);

  // -- library entry points, each run in the calling process ----------------
  Task<IpcResult> semget(ThreadContext& ctx, Word key, Word initial = 0, bool create = true);
  /// delta is +1 (up) or -1 (down); down blocks while the count is zero.
  Task<IpcResult> semop(ThreadContext& ctx, Word id, int delta);
  Task<IpcResult> msgget(ThreadContext& ctx, Word key, std::uint32_t capacity = kDefaultQueueCapacity,
                         bool create = true);
  Task<IpcResult> msgsnd(ThreadContext& ctx, Word id, Word type, Bytes payload, bool nowait = false);
  /// type 0 takes the oldest message, otherwise the oldest of that type.
  Task<IpcResult> msgrcv(ThreadContext& ctx, Word id, Word type = 0, bool nowait = false);
  Task<IpcResult> shmget(ThreadContext& ctx, Word key, std::uint32_t size, bool create = true);
  /// Maps the segment into the caller's address space; value = window address.
  Task<IpcResult> shmat(ThreadContext& ctx, Word id);
  Task<IpcResult> shmdt(ThreadContext& ctx, Addr addr);

  // -- building blocks -----------------------------------------------------
  Task<void> lock(ThreadContext& ctx);
  Task<void> unlock(ThreadContext& ctx);
  /// Caller holds the lock. Links a control message for pid onto target's
  /// list and rings target's helper only if the list was empty.
  Task<void> post_wakeup(ThreadContext& ctx, ProcessorId target, Pid pid);

  // -- inspection ----------------------------------------------------------
  const BuddyAllocator& heap() const { return heap_; }
  Addr heap_base() const { return region_.base + region::kHeapOffset; }
  Addr lock_addr() const { return region_.base + region::kLock; }
  Addr ctrl_head_addr(ProcessorId p) const { return region_.base + region::kCtrlHeads + p.value * kWordBytes; }
  Pid helper(ProcessorId p) const { return helpers_.at(p.value); }
  bool is_helper(Pid pid) const;
  std::optional<Pid> lock_holder() const { return holder_; }
  Word sem_count(Word id) const;
  std::size_t sem_waiters(Word id) const;
  std::vector<std::pair<Word, Bytes>> queue_contents(Word id) const;
  std::size_t queue_bytes(Word id) const;
  std::size_t object_count() const { return objects_.size(); }
  /// Control messages currently linked on p's list (walks RAM).
  std::vector<Pid> control_list(ProcessorId p) const;
  const IpcStats& stats() const { return stats_; }
  const std::vector<IpcTraceRecord>& trace() const { return trace_; }
  const std::vector<std::string>& violations() const { return violations_; }
  /// Host-side invariants: counts non-negative, queues within capacity,
  /// waiters unique, heap blocks inside the region.
  bool invariants_hold() const;

 private:
  enum class Kind : std::uint8_t { Semaphore, Queue, Segment };
  struct Waiter {
    ProcessorId proc;
    Pid pid = 0;
    Word type = 0;  // receive filter or message type
    Bytes payload;  // pending send
  };
  struct Message {
    Word type = 0;
    std::uint32_t offset = 0;  // heap offset of the RAM copy
    std::uint32_t length = 0;
  };
  struct Object {
    Kind kind = Kind::Semaphore;
    Word key = 0;
    std::uint32_t capacity = 0;
    std::uint32_t bytes = 0;
    std::uint32_t seg_offset = 0;
    std::uint32_t seg_size = 0;
    std::uint64_t initial = 0;
    std::uint64_t ups = 0;
    std::uint64_t downs = 0;
    std::deque<Waiter> waiters;       // semaphore downs / queue receivers
    std::deque<Waiter> send_waiters;  // queue senders
    std::deque<Message> messages;
  };
  struct Delivery {
    IpcStatus status = IpcStatus::Ok;
    std::optional<Message> message;
  };

  machine::Task<void> helper_loop(ThreadContext& ctx);
  Task<void> wake(ThreadContext& ctx, const Waiter& w, Word object, const char* why);
  Task<IpcStatus> store_message(ThreadContext& ctx, Word type, const Bytes& payload, Message& out);
  Task<Bytes> load_message(ThreadContext& ctx, const Message& msg);
  /// Hands the message to the first matching receiver or queues it.
  Task<IpcStatus> deliver(ThreadContext& ctx, Word id, Word type, const Bytes& payload);
  Task<void> admit_senders(ThreadContext& ctx, Word id);
  Task<std::optional<Word>> lookup(ThreadContext& ctx, Word key, Kind kind);
  Task<void> publish(ThreadContext& ctx, Word id);

  Object* find(Word id, Kind kind);
  const Object* find(Word id, Kind kind) const;
  Addr object_addr(Word id) const { return region_.base + region::kObjects + id * region::kObjectStride; }
  Addr heap_addr(std::uint32_t offset) const { return heap_base() + offset; }
  void note(ThreadContext& ctx, std::string op, Word object, std::string detail = {});

  Machine& m_;
  AddressRange region_;
  BuddyAllocator heap_;
  std::vector<Pid> helpers_;
  std::set<Pid> helper_set_;
  std::map<Word, Object> objects_;
  Word next_id_ = 1;
  std::optional<Pid> holder_;
  std::map<Pid, Delivery> deliveries_;
  std::map<Pid, std::map<Addr, Word>> attachments_;        // pid -> window -> segment id
  std::map<std::pair<std::uint32_t, Word>, std::uint32_t> mapped_;  // (proc, segment) -> attach count
  IpcStats stats_;
  std::vector<IpcTraceRecord> trace_;
  std::vector<std::string> violations_;
};

}  // namespace secpart::ipc
