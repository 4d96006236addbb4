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

#include "secpart/uds/uds.hpp"

#include <fmt/format.h>

namespace secpart::uds {

namespace {

constexpr std::uint8_t kOpBind = 1;
constexpr std::uint8_t kOpClose = 2;
constexpr Word kTypeData = 1;
constexpr Word kTypeStop = 2;
constexpr std::uint32_t kControlCapacity = 4096;

void put32(Bytes& b, Word v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

Word get32(const Bytes& b, std::size_t at) {
  Word v = 0;
  for (int i = 0; i < 4; ++i) v |= Word{b.at(at + i)} << (8 * i);
  return v;
}

}  // namespace

std::string_view to_string(UdsStatus s) {
  switch (s) {
    case UdsStatus::Ok: return "Ok";
    case UdsStatus::AlreadyBound: return "AlreadyBound";
    case UdsStatus::NotBound: return "NotBound";
    case UdsStatus::NotOwner: return "NotOwner";
    case UdsStatus::EmptyPayload: return "EmptyPayload";
    case UdsStatus::UnknownSocket: return "UnknownSocket";
  }
  return "?";
}

std::string UdsTransfer::csv() const {
  return fmt::format("uds,{},{},{},{},{}", path, src.value, dst.value, bytes, hop);
}

UdsSystem::UdsSystem(ipc::IpcSystem& ipc, std::vector<ProcessorId> members)
    : ipc_(ipc), m_(ipc.machine()), members_(std::move(members)), names_(m_.processor_count()) {
  if (members_.empty())
    for (std::uint32_t p = 0; p < m_.processor_count(); ++p) members_.push_back(ProcessorId{p});
  for (auto p : members_) {
    if (p.value >= m_.processor_count()) throw Error(Errc::Config, fmt::format("no processor {}", p.value));
    controllers_[p.value] =
        m_.spawn(p, fmt::format("uds-main{}", p.value), [this](ThreadContext& c) { return controller_loop(c); });
  }
}

void UdsSystem::event(ThreadContext& ctx, std::string stage, const std::string& path, std::size_t bytes) {
  events_.push_back({m_.now(), std::move(stage), path, ctx.proc(), ctx.pid(), bytes});
}

UdsSystem::Socket* UdsSystem::local_socket(ProcessorId p, const std::string& path) {
  auto it = names_.at(p.value).find(path);
  return it == names_[p.value].end() ? nullptr : &sockets_.at(it->second);
}

Task<Word> UdsSystem::control_queue(ThreadContext& ctx, ProcessorId p) {
  auto r = co_await ipc_.msgget(ctx, kControlKeyBase + p.value, kControlCapacity);
  co_return r.value;
}

Task<UdsSystem::Channels> UdsSystem::channels(ThreadContext& ctx, const std::string& path) {
  if (auto it = channels_.find(path); it != channels_.end()) co_return it->second;
  const Word idx = next_channel_++;
  Channels ch;
  ch.forward = (co_await ipc_.msgget(ctx, kForwardKeyBase + idx, kForwardCapacity)).value;
  ch.reply = (co_await ipc_.semget(ctx, kReplyKeyBase + idx, 0)).value;
  if (ch.forward == 0 || ch.reply == 0) throw Error(Errc::OutOfMemory, "no IPC objects left for " + path);
  channels_[path] = ch;
  co_return ch;
}

Task<void> UdsSystem::enqueue(ThreadContext& ctx, Word socket, Entry e) {
  co_await ctx.local("sock_enqueue");
  auto& s = sockets_.at(socket);
  s.queue.push_back(std::move(e));
  if (s.reader) {
    m_.wake(*s.reader);
    s.reader.reset();
  }
}

Task<void> UdsSystem::broadcast(ThreadContext& ctx, std::uint8_t op, const std::string& path, const Binding& b) {
  Bytes msg{op, static_cast<std::uint8_t>(b.owner.value), 0, 0};
  put32(msg, b.forward);
  put32(msg, b.reply);
  msg.insert(msg.end(), path.begin(), path.end());
  const Word reply = b.reply;
  std::uint32_t peers = 0;
  for (auto p : members_) {
    if (p == b.owner) continue;
    const Word q = co_await control_queue(ctx, p);
    co_await ipc_.msgsnd(ctx, q, 1, msg);
    ++peers;
  }
  for (std::uint32_t i = 0; i < peers; ++i) co_await ipc_.semop(ctx, reply, -1);
}

// -- per-processor processes ----------------------------------------------------------

Task<void> UdsSystem::controller_loop(ThreadContext& ctx) {
  const ProcessorId me = ctx.proc();
  const Word q = co_await control_queue(ctx, me);
  for (;;) {
    auto r = co_await ipc_.msgrcv(ctx, q, 0);
    const std::uint8_t op = r.payload.at(0);
    const Word reply = get32(r.payload, 8);
    const std::string path(r.payload.begin() + 12, r.payload.end());
    if (op == kOpBind) {
      co_await ctx.local("bind proxy");
      const Word id = next_socket_++;
      auto& s = sockets_[id];
      s.id = id;
      s.path = path;
      s.proc = me;
      s.proxy = true;
      names_[me.value][path] = id;
      const Pid w = m_.spawn(me, "uds-worker:" + path, [this, id](ThreadContext& c) { return worker_loop(c, id); });
      s.pid = w;
      workers_[id] = w;
      event(ctx, "proxy-create", path);
    } else if (op == kOpClose) {
      const Word id = names_[me.value].at(path);
      sockets_.at(id).closing = true;
      Entry stop;
      stop.stop = true;
      co_await enqueue(ctx, id, std::move(stop));
      waiting_on_worker_[workers_.at(id)] = ctx.pid();
      while (workers_.count(id)) co_await ctx.block();
      co_await ctx.local("close proxy");
      sockets_.erase(id);
      names_[me.value].erase(path);
      event(ctx, "proxy-destroy", path);
    }
    co_await ipc_.semop(ctx, reply, +1);
  }
}

Task<void> UdsSystem::worker_loop(ThreadContext& ctx, Word proxy) {
  const std::string path = sockets_.at(proxy).path;
  const Word forward = channels_.at(path).forward;
  for (;;) {
    auto& s = sockets_.at(proxy);
    if (s.queue.empty()) {
      s.reader = ctx.pid();
      co_await ctx.block();
      continue;
    }
    Entry e = std::move(s.queue.front());
    s.queue.pop_front();
    if (e.stop) break;
    co_await ctx.local("proxy_recv");
    Bytes msg;
    msg.reserve(8 + e.dgram.payload.size());
    put32(msg, e.dgram.src_pid);
    put32(msg, e.dgram.src_proc.value);
    msg.insert(msg.end(), e.dgram.payload.begin(), e.dgram.payload.end());
    event(ctx, "proxy-forward", path, e.dgram.payload.size());
    co_await ipc_.msgsnd(ctx, forward, kTypeData, std::move(msg));
  }
  co_await ctx.local("worker_exit");
  workers_.erase(proxy);
  if (auto it = waiting_on_worker_.find(ctx.pid()); it != waiting_on_worker_.end()) {
    m_.wake(it->second);
    waiting_on_worker_.erase(it);
  }
}

Task<void> UdsSystem::receiver_loop(ThreadContext& ctx, std::string path) {
  const Word forward = index_.at(path).forward;
  for (;;) {
    auto r = co_await ipc_.msgrcv(ctx, forward, 0);
    if (r.type == kTypeStop) break;
    Datagram d;
    d.src_pid = get32(r.payload, 0);
    d.src_proc = ProcessorId{get32(r.payload, 4)};
    d.path = path;
    d.payload.assign(r.payload.begin() + 8, r.payload.end());
    const auto bytes = d.payload.size();
    const auto src = d.src_proc;
    event(ctx, "owner-deliver", path, bytes);
    Entry e;
    e.dgram = std::move(d);
    co_await enqueue(ctx, index_.at(path).socket, std::move(e));
    transfers_.push_back({m_.now(), path, src, ctx.proc(), bytes, "proxy"});
  }
  co_await ctx.local("receiver_exit");
  auto& b = index_.at(path);
  b.receiver = 0;
  if (b.closer) m_.wake(*b.closer);
}

// -- library hooks ---------------------------------------------------------------------

Task<UdsResult> UdsSystem::bind(ThreadContext& ctx, std::string path) {
  co_await ctx.local("bind");
  if (index_.count(path)) co_return UdsResult::of(UdsStatus::AlreadyBound);
  {
    auto& b = index_[path];
    b.owner = ctx.proc();
    b.pid = ctx.pid();
  }
  event(ctx, "bind", path);
  const auto ch = co_await channels(ctx, path);
  index_.at(path).forward = ch.forward;
  index_.at(path).reply = ch.reply;
  co_await broadcast(ctx, kOpBind, path, index_.at(path));

  co_await ctx.local("bind_local");
  const Word id = next_socket_++;
  auto& s = sockets_[id];
  s.id = id;
  s.path = path;
  s.proc = ctx.proc();
  s.pid = ctx.pid();
  names_[ctx.proc().value][path] = id;
  auto& b = index_.at(path);
  b.socket = id;
  b.receiver = m_.spawn(ctx.proc(), "uds-recv:" + path, [this, path](ThreadContext& c) { return receiver_loop(c, path); });
  b.state = State::Bound;
  UdsResult res;
  res.socket = id;
  co_return res;
}

Task<UdsResult> UdsSystem::sendto(ThreadContext& ctx, std::string path, Bytes payload) {
  co_await ctx.local("sendto");
  if (payload.empty()) co_return UdsResult::of(UdsStatus::EmptyPayload);
  Socket* s = local_socket(ctx.proc(), path);
  if (!s || s->closing) co_return UdsResult::of(UdsStatus::NotBound);
  const bool proxy = s->proxy;
  const Word id = s->id;
  const auto bytes = payload.size();
  event(ctx, proxy ? "proxy-enqueue" : "local-deliver", path, bytes);
  Entry e;
  e.dgram.src_pid = ctx.pid();
  e.dgram.src_proc = ctx.proc();
  e.dgram.path = path;
  e.dgram.payload = std::move(payload);
  co_await enqueue(ctx, id, std::move(e));
  if (!proxy) transfers_.push_back({m_.now(), path, ctx.proc(), ctx.proc(), bytes, "local"});
  co_return UdsResult{};
}

Task<UdsResult> UdsSystem::recvfrom(ThreadContext& ctx, Word socket) {
  co_await ctx.local("recvfrom");
  for (;;) {
    auto it = sockets_.find(socket);
    if (it == sockets_.end() || it->second.proxy) co_return UdsResult::of(UdsStatus::UnknownSocket);
    auto& s = it->second;
    if (!s.queue.empty()) {
      UdsResult res;
      res.socket = socket;
      res.datagram = std::move(s.queue.front().dgram);
      s.queue.pop_front();
      co_return res;
    }
    s.reader = ctx.pid();
    co_await ctx.block();
  }
}

Task<UdsResult> UdsSystem::close(ThreadContext& ctx, Word socket) {
  co_await ctx.local("close");
  auto it = sockets_.find(socket);
  if (it == sockets_.end() || it->second.proxy || it->second.closing)
    co_return UdsResult::of(UdsStatus::UnknownSocket);
  if (it->second.pid != ctx.pid()) co_return UdsResult::of(UdsStatus::NotOwner);
  const std::string path = it->second.path;
  it->second.closing = true;
  index_.at(path).state = State::Closing;
  event(ctx, "close", path);
  co_await broadcast(ctx, kOpClose, path, index_.at(path));

  // Every proxy has drained into the forward queue; drain that next.
  index_.at(path).closer = ctx.pid();
  Bytes marker{0};
  co_await ipc_.msgsnd(ctx, index_.at(path).forward, kTypeStop, std::move(marker));
  while (index_.at(path).receiver != 0) co_await ctx.block();

  co_await ctx.local("close_local");
  auto& s = sockets_.at(socket);
  if (s.reader) m_.wake(*s.reader);
  names_[s.proc.value].erase(path);
  sockets_.erase(socket);
  index_.erase(path);
  UdsResult res;
  res.socket = socket;
  co_return res;
}

// -- inspection ------------------------------------------------------------------------

bool UdsSystem::bound(const std::string& path) const {
  auto it = index_.find(path);
  return it != index_.end() && it->second.state == State::Bound;
}

std::optional<ProcessorId> UdsSystem::owner(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) return std::nullopt;
  return it->second.owner;
}

std::vector<ProcessorId> UdsSystem::proxies(const std::string& path) const {
  std::vector<ProcessorId> out;
  for (std::uint32_t p = 0; p < names_.size(); ++p) {
    auto it = names_[p].find(path);
    if (it != names_[p].end() && sockets_.at(it->second).proxy) out.push_back(ProcessorId{p});
  }
  return out;
}

std::size_t UdsSystem::live_workers() const { return workers_.size(); }

std::size_t UdsSystem::queued(Word socket) const {
  auto it = sockets_.find(socket);
  return it == sockets_.end() ? 0 : it->second.queue.size();
}

bool UdsSystem::proxy_invariant_holds() const {
  for (const auto& [id, s] : sockets_)
    if (s.proxy && !index_.count(s.path)) return false;
  for (const auto& [path, b] : index_) {
    if (b.state != State::Bound) continue;
    const auto px = proxies(path);
    if (px.size() + 1 != members_.size()) return false;
    for (auto p : px)
      if (p == b.owner) return false;
  }
  return true;
}

bool UdsSystem::residue_free(const std::string& path) const {
  if (index_.count(path)) return false;
  for (const auto& [id, s] : sockets_)
    if (s.path == path) return false;
  for (const auto& names : names_)
    if (names.count(path)) return false;
  if (auto it = channels_.find(path); it != channels_.end() && ipc_.queue_bytes(it->second.forward) != 0) return false;
  return true;
}

}  // namespace secpart::uds
