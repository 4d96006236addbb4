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

#include "secpart/uds/transfer.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <random>

#include <fmt/format.h>

namespace secpart::uds {

namespace {

Task<void> server_body(ThreadContext& c, UdsSystem* uds, std::string path, std::size_t expect, Word* socket,
                       std::vector<Datagram>* got, bool* closed) {
  auto b = co_await uds->bind(c, path);
  *socket = b.socket;
  for (std::size_t i = 0; i < expect; ++i) {
    auto r = co_await uds->recvfrom(c, b.socket);
    if (!r.ok()) co_return;
    got->push_back(std::move(r.datagram));
  }
  auto cl = co_await uds->close(c, b.socket);
  *closed = cl.ok();
}

Task<void> client_body(ThreadContext& c, UdsSystem* uds, std::string path, const Bytes* stream, std::size_t fragment,
                       bool* failed) {
  for (std::size_t off = 0; off < stream->size(); off += fragment) {
    const auto end = std::min(stream->size(), off + fragment);
    auto r = co_await uds->sendto(c, path, Bytes(stream->begin() + static_cast<long>(off), stream->begin() + static_cast<long>(end)));
    if (!r.ok()) *failed = true;
  }
}

}  // namespace

TransferResult run_transfer(const TransferSpec& spec) {
  TransferResult out;
  auto m = ipc::make_ipc_machine(spec.processors, spec.seed);
  ipc::IpcSystem ipc(*m, ipc::kDefaultRegion);
  UdsSystem uds(ipc);

  std::mt19937_64 rng(spec.seed ^ 0x5eed);
  for (std::size_t i = 0; i < spec.clients.size(); ++i) {
    Bytes s(spec.bytes);
    for (auto& b : s) b = static_cast<std::uint8_t>(rng());
    out.sent.push_back(std::move(s));
  }
  const std::size_t per_client = (spec.bytes + spec.fragment - 1) / spec.fragment;
  Word socket = 0;
  std::vector<Datagram> got;
  bool closed = false;
  const Pid server = uds.spawn(spec.server, "server", [&](ThreadContext& c) {
    return server_body(c, &uds, spec.path, per_client * spec.clients.size(), &socket, &got, &closed);
  });
  auto watch = [&] {
    if (!uds.proxy_invariant_holds()) out.proxies_ok = false;
  };
  m->run_until([&] { watch(); return uds.bound(spec.path) || m->thread_state(server) == machine::ThreadState::Failed; },
               spec.budget);

  std::vector<Pid> clients;
  std::deque<bool> client_failed(spec.clients.size(), false);
  for (std::size_t i = 0; i < spec.clients.size(); ++i) {
    const Bytes* stream = &out.sent[i];
    bool* flag = &client_failed[i];
    clients.push_back(uds.spawn(spec.clients[i], fmt::format("client{}", i), [&uds, &spec, stream, flag](ThreadContext& c) {
      return client_body(c, &uds, spec.path, stream, spec.fragment, flag);
    }));
  }
  m->run_until(
      [&] {
        watch();
        const auto st = m->thread_state(server);
        return st == machine::ThreadState::Done || st == machine::ThreadState::Failed;
      },
      spec.budget);
  if (auto err = m->thread_error(server)) throw Error(Errc::Protocol, "server failed: " + *err);
  for (Pid c : clients)
    if (auto err = m->thread_error(c)) throw Error(Errc::Protocol, "client failed: " + *err);

  std::map<Pid, std::size_t> index;
  for (std::size_t i = 0; i < clients.size(); ++i) index[clients[i]] = i;
  out.received.assign(spec.clients.size(), {});
  for (auto& d : got) {
    const auto who = index.at(d.src_pid);
    out.bytes_delivered += d.payload.size();
    out.received[who].insert(out.received[who].end(), d.payload.begin(), d.payload.end());
    out.observed.emplace_back(who, std::move(d.payload));
  }
  out.steps = m->now();
  out.completed = closed && std::none_of(client_failed.begin(), client_failed.end(), [](bool f) { return f; });
  out.residue_free = uds.residue_free(spec.path) && uds.live_workers() == 0;
  out.transfers = uds.transfers();
  return out;
}

}  // namespace secpart::uds
