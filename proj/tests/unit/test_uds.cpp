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

#include <algorithm>

#include "doctest.h"
#include "secpart/uds/transfer.hpp"

using namespace secpart;
using namespace secpart::uds;
using machine::ThreadState;

namespace {

struct Rig {
  explicit Rig(std::uint32_t n = 3, std::vector<ProcessorId> members = {})
      : m(ipc::make_ipc_machine(n, 0)), ipc(*m, ipc::kDefaultRegion), uds(ipc, std::move(members)) {}
  bool done(std::initializer_list<Pid> pids) {
    for (Pid p : pids)
      if (m->thread_state(p) != ThreadState::Done) return false;
    return true;
  }
  void settle(std::initializer_list<Pid> pids) { m->run_until([&] { return done(pids); }, 2'000'000); }
  std::unique_ptr<machine::Machine> m;
  ipc::IpcSystem ipc;
  UdsSystem uds;
};

Task<void> do_bind(ThreadContext& c, UdsSystem* u, std::string path, UdsResult* out) { *out = co_await u->bind(c, path); }
Task<void> do_close(ThreadContext& c, UdsSystem* u, Word s, UdsResult* out) { *out = co_await u->close(c, s); }
Task<void> do_send(ThreadContext& c, UdsSystem* u, std::string path, Bytes b, UdsResult* out) {
  *out = co_await u->sendto(c, path, std::move(b));
}
Task<void> bind_recv_close(ThreadContext& c, UdsSystem* u, std::string path, int n, std::vector<Datagram>* got,
                           bool* gate, UdsResult* closed) {
  auto b = co_await u->bind(c, path);
  for (int i = 0; i < n; ++i) got->push_back((co_await u->recvfrom(c, b.socket)).datagram);
  while (!*gate) co_await c.local("wait");
  *closed = co_await u->close(c, b.socket);
}

}  // namespace

TEST_CASE("bind creates proxies on every other processor and is unique") {
  Rig r;
  UdsResult a, b;
  const Pid p = r.uds.spawn(ProcessorId{0}, "srv", [&](ThreadContext& c) { return do_bind(c, &r.uds, "/s", &a); });
  r.settle({p});
  CHECK(a.ok());
  CHECK(r.uds.bound("/s"));
  CHECK(r.uds.proxies("/s") == std::vector<ProcessorId>{ProcessorId{1}, ProcessorId{2}});
  CHECK(r.uds.live_workers() == 2);
  CHECK(r.uds.proxy_invariant_holds());

  const Pid q = r.uds.spawn(ProcessorId{2}, "dup", [&](ThreadContext& c) { return do_bind(c, &r.uds, "/s", &b); });
  r.settle({q});
  CHECK(b.status == UdsStatus::AlreadyBound);

  UdsResult bad;
  const Pid x = r.uds.spawn(ProcessorId{0}, "other", [&](ThreadContext& c) { return do_close(c, &r.uds, a.socket, &bad); });
  r.settle({x});
  CHECK(bad.status == UdsStatus::NotOwner);
}

TEST_CASE("bind with no other participating processor has no proxies") {
  Rig r(2, {ProcessorId{0}});
  UdsResult a;
  const Pid p = r.uds.spawn(ProcessorId{0}, "srv", [&](ThreadContext& c) { return do_bind(c, &r.uds, "/solo", &a); });
  r.settle({p});
  CHECK(a.ok());
  CHECK(r.uds.proxies("/solo").empty());
  CHECK(r.uds.live_workers() == 0);
}

TEST_CASE("local and remote sends reach the server unmodified") {
  Rig r;
  std::vector<Datagram> got;
  bool gate = false;
  UdsResult closed, s1, s2, s3;
  const Pid srv = r.uds.spawn(ProcessorId{0}, "srv", [&](ThreadContext& c) {
    return bind_recv_close(c, &r.uds, "/x", 2, &got, &gate, &closed);
  });
  r.m->run_until([&] { return r.uds.bound("/x"); }, 1'000'000);
  Bytes hundred(100);
  for (std::size_t i = 0; i < hundred.size(); ++i) hundred[i] = static_cast<std::uint8_t>(i * 7);
  const Pid local = r.uds.spawn(ProcessorId{0}, "lc", [&](ThreadContext& c) { return do_send(c, &r.uds, "/x", hundred, &s1); });
  r.settle({local});
  const Pid remote = r.uds.spawn(ProcessorId{2}, "rc", [&](ThreadContext& c) { return do_send(c, &r.uds, "/x", Bytes{9, 8, 7}, &s2); });
  const Pid empty = r.uds.spawn(ProcessorId{1}, "ec", [&](ThreadContext& c) { return do_send(c, &r.uds, "/x", Bytes{}, &s3); });
  r.m->run_until([&] { return got.size() == 2; }, 1'000'000);
  REQUIRE(got.size() == 2);
  CHECK(got[0].payload == hundred);
  CHECK(got[0].src_proc == ProcessorId{0});
  CHECK(got[1].payload == Bytes{9, 8, 7});
  CHECK(got[1].src_proc == ProcessorId{2});
  CHECK(s3.status == UdsStatus::EmptyPayload);

  const auto& t = r.uds.transfers();
  REQUIRE(t.size() == 2);
  CHECK(t[0].csv() == "uds,/x,0,0,100,local");
  CHECK(t[1].csv() == "uds,/x,2,0,3,proxy");
  std::vector<std::string> stages;
  for (const auto& e : r.uds.events())
    if (e.bytes == 3) stages.push_back(e.stage);
  CHECK(stages == std::vector<std::string>{"proxy-enqueue", "proxy-forward", "owner-deliver"});

  gate = true;
  r.settle({srv, remote, empty});
  CHECK(closed.ok());
  CHECK(r.uds.residue_free("/x"));
  CHECK(r.uds.live_workers() == 0);
  UdsResult after;
  const Pid late = r.uds.spawn(ProcessorId{1}, "late", [&](ThreadContext& c) { return do_send(c, &r.uds, "/x", Bytes{1}, &after); });
  r.settle({late});
  CHECK(after.status == UdsStatus::NotBound);
  UdsResult again;
  const Pid rb = r.uds.spawn(ProcessorId{1}, "rebind", [&](ThreadContext& c) { return do_bind(c, &r.uds, "/x", &again); });
  r.settle({rb});
  CHECK(again.ok());
  CHECK(r.uds.owner("/x") == ProcessorId{1});
}

namespace {

Task<void> bind_wait_close(ThreadContext& c, UdsSystem* u, std::string path, bool* gate, UdsResult* closed) {
  auto b = co_await u->bind(c, path);
  while (!*gate) co_await c.local("wait");
  *closed = co_await u->close(c, b.socket);
}

}  // namespace

TEST_CASE("close drains in-flight remote datagrams before tearing down proxies") {
  // Close is injected at successive steps of a remote send: whenever the
  // send was accepted, the datagram reaches the owner before teardown.
  int drained = 0, refused = 0;
  for (Step delay = 0; delay < 1200; delay += 5) {
    Rig r;
    bool gate = false;
    UdsResult sent, closed;
    const Pid srv = r.uds.spawn(ProcessorId{0}, "srv", [&](ThreadContext& c) { return bind_wait_close(c, &r.uds, "/d", &gate, &closed); });
    r.m->run_until([&] { return r.uds.bound("/d"); }, 1'000'000);
    gate = true;
    r.m->run(delay);
    const Pid cl = r.uds.spawn(ProcessorId{1}, "cl", [&](ThreadContext& c) { return do_send(c, &r.uds, "/d", Bytes(64, 0xab), &sent); });
    r.settle({srv, cl});
    INFO("delay ", delay);
    CHECK(closed.ok());
    const auto delivered = std::count_if(r.uds.transfers().begin(), r.uds.transfers().end(),
                                         [](const UdsTransfer& t) { return t.hop == "proxy"; });
    if (sent.ok()) {
      CHECK(delivered == 1);
      ++drained;
    } else {
      CHECK(sent.status == UdsStatus::NotBound);
      CHECK(delivered == 0);
      ++refused;
    }
    CHECK(r.uds.residue_free("/d"));
    CHECK(r.uds.live_workers() == 0);
  }
  CHECK(drained > 0);
  CHECK(refused > 0);
}

TEST_CASE("fragmented cross-processor stream is byte identical and matches the local run") {
  TransferSpec spec;
  spec.bytes = 64 * 1024;
  spec.fragment = 1024;
  spec.clients = {ProcessorId{1}, ProcessorId{2}};
  const auto remote = run_transfer(spec);
  CHECK(remote.byte_identical());
  CHECK(remote.proxies_ok);
  CHECK(remote.residue_free);
  CHECK(remote.bytes_delivered == 2 * spec.bytes);
  spec.clients = {ProcessorId{0}, ProcessorId{0}};
  const auto local = run_transfer(spec);
  CHECK(local.byte_identical());
  CHECK(local.received == remote.received);
  for (const auto& t : local.transfers) CHECK(t.hop == "local");
  for (const auto& t : remote.transfers) CHECK(t.hop == "proxy");
}
