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

// Unix-domain datagram sockets extended across processors. The library
// hooks bind and close and broadcasts them to a per-processor controller
// process, which keeps a proxy socket and a communication worker for every
// path owned elsewhere. Data sent to a proxy travels to the owner through a
// message queue and is delivered into the real socket there.

#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "secpart/ipc/ipc.hpp"

namespace secpart::uds {

using ipc::Bytes;
using machine::Pid;
using machine::Task;
using machine::ThreadContext;

inline constexpr std::uint32_t kForwardCapacity = 64 * 1024;
inline constexpr Word kControlKeyBase = 0x55000000;
inline constexpr Word kForwardKeyBase = 0x56000000;
inline constexpr Word kReplyKeyBase = 0x57000000;

enum class UdsStatus : std::uint8_t { Ok, AlreadyBound, NotBound, NotOwner, EmptyPayload, UnknownSocket };

std::string_view to_string(UdsStatus s);

struct Datagram {
  Pid src_pid = 0;
  ProcessorId src_proc;
  std::string path;
  Bytes payload;
};

struct UdsResult {
  UdsStatus status = UdsStatus::Ok;
  Word socket = 0;
  Datagram datagram;

  bool ok() const { return status == UdsStatus::Ok; }
  static UdsResult of(UdsStatus s) {
    UdsResult r;
    r.status = s;
    return r;
  }
};

/// One delivery into a real socket: `uds,path,src_proc,dst_proc,bytes,hop`.
struct UdsTransfer {
  Step step = 0;
  std::string path;
  ProcessorId src;
  ProcessorId dst;
  std::size_t bytes = 0;
  std::string hop;  // local | proxy

  std::string csv() const;
};

/// Finer-grained record of each stage a datagram or control message passes.
struct UdsEvent {
  Step step = 0;
  std::string stage;
  std::string path;
  ProcessorId proc;
  Pid pid = 0;
  std::size_t bytes = 0;
};

class UdsSystem {
 public:
  /// Spawns one controller process on each participating processor (all
  /// processors when `members` is empty).
  explicit UdsSystem(ipc::IpcSystem& ipc, std::vector<ProcessorId> members = {});
  UdsSystem(const UdsSystem&) = delete;
  UdsSystem& operator=(const UdsSystem&) = delete;

  Pid spawn(ProcessorId p, std::string name, const machine::ThreadBody& body) { return ipc_.spawn(p, std::move(name), body); }

  Task<UdsResult> bind(ThreadContext& ctx, std::string path);
  Task<UdsResult> sendto(ThreadContext& ctx, std::string path, Bytes payload);
  /// Blocks until a datagram is queued on the socket.
  Task<UdsResult> recvfrom(ThreadContext& ctx, Word socket);
  Task<UdsResult> close(ThreadContext& ctx, Word socket);

  // -- inspection ----------------------------------------------------------
  Pid controller(ProcessorId p) const { return controllers_.at(p.value); }
  const std::vector<ProcessorId>& members() const { return members_; }
  bool bound(const std::string& path) const;
  std::optional<ProcessorId> owner(const std::string& path) const;
  /// Processors currently holding a proxy for path.
  std::vector<ProcessorId> proxies(const std::string& path) const;
  std::size_t live_workers() const;
  std::size_t queued(Word socket) const;
  /// Proxies exist exactly on the non-owner processors of every bound path
  /// and nowhere for unbound paths.
  bool proxy_invariant_holds() const;
  /// Nothing left that references path: no socket, proxy, worker, queued
  /// forward message or index entry.
  bool residue_free(const std::string& path) const;
  const std::vector<UdsTransfer>& transfers() const { return transfers_; }
  const std::vector<UdsEvent>& events() const { return events_; }

 private:
  enum class State : std::uint8_t { Binding, Bound, Closing };
  struct Entry {
    Datagram dgram;
    bool stop = false;
  };
  struct Socket {
    Word id = 0;
    std::string path;
    ProcessorId proc;
    Pid pid = 0;  // owner process, or the worker for a proxy
    bool proxy = false;
    bool closing = false;
    std::deque<Entry> queue;
    std::optional<Pid> reader;  // blocked receiver
  };
  struct Binding {
    State state = State::Binding;
    Word socket = 0;
    ProcessorId owner;
    Pid pid = 0;
    Word forward = 0;  // message queue id
    Word reply = 0;    // semaphore id the peers ack on
    Pid receiver = 0;  // owner-side forward reader
    std::optional<Pid> closer;
  };
  struct Channels {
    Word forward = 0;
    Word reply = 0;
  };

  Task<void> controller_loop(ThreadContext& ctx);
  Task<void> worker_loop(ThreadContext& ctx, Word proxy);
  Task<void> receiver_loop(ThreadContext& ctx, std::string path);
  Task<Word> control_queue(ThreadContext& ctx, ProcessorId p);
  Task<Channels> channels(ThreadContext& ctx, const std::string& path);
  Task<void> broadcast(ThreadContext& ctx, std::uint8_t op, const std::string& path, const Binding& b);
  Task<void> enqueue(ThreadContext& ctx, Word socket, Entry e);
  Socket* local_socket(ProcessorId p, const std::string& path);
  void event(ThreadContext& ctx, std::string stage, const std::string& path, std::size_t bytes = 0);

  ipc::IpcSystem& ipc_;
  machine::Machine& m_;
  std::vector<ProcessorId> members_;
  std::map<std::uint32_t, Pid> controllers_;
  std::map<Word, Socket> sockets_;
  std::vector<std::map<std::string, Word>> names_;  // per-processor namespace
  std::map<std::string, Binding> index_;            // platform-wide bindings
  std::map<std::string, Channels> channels_;        // reused across rebinds
  std::map<Word, Pid> workers_;                     // proxy socket -> worker
  std::map<Pid, Pid> waiting_on_worker_;            // worker -> controller
  Word next_socket_ = 1;
  Word next_channel_ = 0;
  std::vector<UdsTransfer> transfers_;
  std::vector<UdsEvent> events_;
};

}  // namespace secpart::uds
