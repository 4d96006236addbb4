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

#include "secpart/harness/runner.hpp"

#include <deque>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "secpart/ipc/ipc.hpp"
#include "secpart/uds/uds.hpp"

namespace secpart::harness {

using machine::Machine;
using ipc::Bytes;
using machine::Pid;
using machine::Task;
using machine::ThreadContext;

namespace {

constexpr Addr kInjectOffset = 0x00040000;
constexpr std::uint8_t kInjectTag = 0x7e;
constexpr std::uint32_t kFloodVector = 5;

ProcessorId proc_arg(const Args& a, const std::string& key) {
  return ProcessorId{static_cast<std::uint32_t>(arg_u64(a, key))};
}

Task<void> virus_driver(ThreadContext& c, ProcessorId self) {
  // Tries to lift its own restrictions, then to join the controllers.
  co_await c.bmu_replace(self, {});
  co_await c.bmu_controllers({self});
}

Task<void> flood(ThreadContext& c, ProcessorId to, std::uint32_t vector, std::uint64_t count) {
  for (std::uint64_t i = 0; i < count; ++i) co_await c.ipi(to, vector);
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (i * 8)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

std::uint64_t digest(const std::vector<bmu::RangeEntry>& entries, std::uint64_t h = kFnvBasis) {
  for (const auto& e : entries) {
    h = fnv(h, e.range.base);
    h = fnv(h, e.range.length);
    for (auto k : {AccessKind::Read, AccessKind::Write, AccessKind::Fetch}) h = fnv(h, e.denied.contains(k));
  }
  return fnv(h, entries.size());
}

std::uint64_t digest(const bmu::AccessMatrix& m) {
  std::uint64_t h = kFnvBasis;
  for (auto c : m.controllers()) h = fnv(h, c.value);
  for (std::uint32_t p = 0; p < m.processor_count(); ++p) h = digest(m.entries(ProcessorId{p}), fnv(h, 0xff00 + p));
  return h;
}

std::uint64_t digest(std::string_view text, std::uint64_t h = kFnvBasis) {
  for (char c : text) h = fnv(h, static_cast<std::uint8_t>(c));
  return h;
}

std::uint64_t digest(const ipc::Bytes& bytes) {
  std::uint64_t h = kFnvBasis;
  for (auto b : bytes) h = fnv(h, b);
  return fnv(h, bytes.size());
}

bool rational_equals(std::uint64_t num, std::uint64_t den, const std::string& ratio) {
  const auto slash = ratio.find('/');
  const std::uint64_t p = std::stoull(ratio.substr(0, slash));
  const std::uint64_t q = slash == std::string::npos ? 1 : std::stoull(ratio.substr(slash + 1));
  return num * q == den * p;
}

}  // namespace

std::string_view to_string(Attack a) {
  switch (a) {
    case Attack::AppBug: return "app_bug";
    case Attack::AppVirus: return "app_virus";
    case Attack::DriverBug: return "driver_bug";
    case Attack::DriverVirus: return "driver_virus";
  }
  return "?";
}

Attack parse_attack(std::string_view text) {
  for (auto a : {Attack::AppBug, Attack::AppVirus, Attack::DriverBug, Attack::DriverVirus})
    if (to_string(a) == text) return a;
  throw Error(Errc::Validation, fmt::format("unknown attack '{}'", text));
}

// -- report ------------------------------------------------------------------------------

bool RunReport::all_pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

const Verdict* RunReport::verdict(const std::string& name) const {
  for (const auto& v : verdicts)
    if (v.name == name) return &v;
  return nullptr;
}

std::string RunReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["scenario"] = scenario;
  j["seed"] = seed;
  j["steps"] = steps;
  j["step_unit"] = "simulated steps";
  j["verdicts"] = nlohmann::ordered_json::array();
  for (const auto& v : verdicts)
    j["verdicts"].push_back({{"name", v.name}, {"check", v.check}, {"pass", v.pass}, {"detail", v.detail}});
  j["phases"] = nlohmann::ordered_json::object();
  for (const auto& [kind, ph] : phases) j["phases"][kind] = ph;
  j["throughput"] = throughput;
  j["faults"] = nlohmann::ordered_json::array();
  for (const auto& f : faults)
    j["faults"].push_back({{"kind", std::string(to_string(f.kind))},
                           {"address", fmt::format("0x{:08x}", f.address)},
                           {"proc", f.proc.value},
                           {"step", f.step}});
  j["errors"] = errors;
  if (!metrics.empty()) j["metrics"] = metrics;
  j["pass"] = all_pass();
  return j.dump(indent);
}

std::string RunReport::trace_csv() const {
  std::string out;
  for (const auto& line : trace) out += line + "\n";
  return out;
}

// -- run ---------------------------------------------------------------------------------

namespace {

class Run {
 public:
  Run(const Scenario& s, const RunOptions& o) : sc_(s), opts_(o) {
    seed_ = o.seed.value_or(s.seed);
    rng_.seed(seed_);
    rep_.scenario = s.name;
    rep_.seed = seed_;
    if (s.mode == ScenarioMode::Ipc) {
      machine_ = ipc::make_ipc_machine(s.platform.processors, seed_);
      ipc_ = std::make_unique<ipc::IpcSystem>(*machine_, ipc::kDefaultRegion);
      uds_ = std::make_unique<uds::UdsSystem>(*ipc_);
      for (std::size_t i = 0; i < s.processes.size(); ++i) {
        Actor a;
        a.name = s.processes[i].name;
        a.proc = s.processes[i].proc;
        actors_.push_back(std::move(a));
      }
      for (std::size_t i = 0; i < actors_.size(); ++i) {
        actors_[i].pid = ipc_->spawn(actors_[i].proc, actors_[i].name,
                                     [this, i](ThreadContext& c) { return actor_loop(c, i); });
        by_pid_[actors_[i].pid] = i;
      }
    } else {
      auto spec = s.platform;
      spec.seed = seed_;
      pf_ = std::make_unique<Platform>(spec);
      matrix0_ = pf_->machine().matrix();
      rep_.trace.push_back(fmt::format("fact,matrix,boot,{:016x}", digest(matrix0_)));
    }
  }

  RunReport execute() {
    for (std::size_t i = 0; i < sc_.events.size(); ++i) {
      const auto& ev = sc_.events[i];
      if (ev.at && *ev.at > m().now()) advance(*ev.at - m().now());
      std::string status = "ok";
      if (budget_note_) {
        rep_.trace.push_back(fmt::format("event,{},{},{},skipped", i, ev.verb, m().now()));
        continue;
      }
      try {
        apply(ev);
      } catch (const Error& e) {
        status = std::string(to_string(e.code()));
        rep_.errors.push_back(fmt::format("{}: {}", ev.verb, e.what()));
        error_codes_.insert(status);
      }
      rep_.trace.push_back(fmt::format("event,{},{},{},{}", i, ev.verb, m().now(), status));
    }
    finish();
    return std::move(rep_);
  }

 private:
  struct Actor {
    std::string name;
    ProcessorId proc;
    Pid pid = 0;
    std::deque<std::pair<Event, Bytes>> queue;
    bool busy = false;
    std::map<std::string, Word> sockets;
  };

  // State captured before the latest switch request on a processor.
  struct Attempt {
    std::optional<DomainId> occupant;
    DomainId target;
    machine::DomainContext target_context;
    std::vector<bmu::RangeEntry> entries;
    Word table = 0;
  };

  // Everything a switch may touch on p, hashed.
  std::uint64_t switch_digest(ProcessorId p, DomainId target) {
    auto& pf = *pf_;
    const auto occ = pf.vmm().occupant(p);
    std::uint64_t h = digest(occ ? pf.domain_name(*occ) : std::string("-"));
    for (Word w : pf.vmm().store().at(target).context.to_words()) h = fnv(h, w);
    h = digest(m().matrix().entries(p), h);
    return fnv(h, m().processor(p).regs.system.translation_base);
  }

  Machine& m() { return pf_ ? pf_->machine() : *machine_; }

  void advance(Step n) {
    const Step left = opts_.max_steps > m().now() ? opts_.max_steps - m().now() : 0;
    if (n > left) {
      if (!budget_note_) rep_.errors.push_back(fmt::format("step budget of {} exhausted", opts_.max_steps));
      budget_note_ = true;
      n = left;
    }
    m().run(n);
  }

  void apply(const Event& ev) {
    const auto& a = ev.args;
    const auto& v = ev.verb;
    if (v == "run") return advance(arg_u64(a, "steps"));
    if (sc_.mode == ScenarioMode::Ipc) return apply_ipc(ev);
    auto& pf = *pf_;
    if (v == "switch") {
      const auto p = proc_arg(a, "proc");
      const auto target = pf.domain(a.at("domain"));
      attempts_[p] = Attempt{pf.vmm().occupant(p), target, pf.vmm().store().at(target).context,
                             m().matrix().entries(p), m().processor(p).regs.system.translation_base};
      rep_.trace.push_back(fmt::format("fact,attempt,{},{:016x}", p.value, switch_digest(p, target)));
      if (pf.partitioner().lent(p))
        pf.partitioner().switch_open(p, pf.domain(a.at("domain")));
      else
        pf.vmm().switch_domain(pf.domain(a.at("domain")), p);
    } else if (v == "separate") {
      pf.partitioner().separate(proc_arg(a, "proc"), pf.domain(a.at("domain")));
    } else if (v == "merge") {
      pf.partitioner().merge(proc_arg(a, "proc"));
    } else if (v == "reboot") {
      pf.reboot(proc_arg(a, "proc"), a.at("domain"));
      reboot_marks_[a.at("domain")] = pf.probe().count(a.at("domain"));
      rep_.trace.push_back(fmt::format("fact,reboot,{},{}", a.at("domain"), reboot_marks_[a.at("domain")]));
    } else if (v == "inject") {
      inject(proc_arg(a, "proc"), parse_attack(a.at("attack")));
    } else if (v == "idc_send") {
      Bytes payload(arg_u64(a, "bytes"));
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng_());
      const auto dst = a.at("to");
      pf.vmm().idc_send(pf.domain(a.at("from")), pf.domain(dst), std::move(payload));
      ++idc_[dst];
    } else if (v == "rate_limit") {
      pf.vmm().guard_ipi_rate(static_cast<std::uint32_t>(arg_u64(a, "limit")), arg_u64(a, "window", 1000));
    } else if (v == "ipi_flood") {
      const auto to = proc_arg(a, "to");
      const auto vector = static_cast<std::uint32_t>(arg_u64(a, "vector", kFloodVector));
      const auto count = arg_u64(a, "count");
      m().spawn(proc_arg(a, "from"), "flood", [to, vector, count](ThreadContext& c) { return flood(c, to, vector, count); });
    } else if (v == "measure") {
      const auto label = ev.label.empty() ? fmt::format("w{}", windows_.size()) : ev.label;
      windows_[label] = pf.probe().measure(arg_u64(a, "window"));
    } else if (v == "pin") {
      pf.vmm().pin(proc_arg(a, "proc"), arg_str(a, "pinned", "true") == "true");
    }
  }

  void inject(ProcessorId p, Attack attack) {
    auto& pf = *pf_;
    const auto occ = pf.vmm().occupant(p);
    if (!occ) throw Error(Errc::NotOpenProcessor, fmt::format("cpu{} runs no open domain", p.value));
    const auto ram = pf.ram(pf.domain_name(*occ));
    machine::ProgramBuilder b(kInjectTag);
    b.mov(1, 16).label("work").mark(kMarkWork).dec_branch_nonzero(1, "work");
    switch (attack) {
      case Attack::AppBug: b.store_imm(machine::MemOperand::at(0x30000000), 0xdead); break;
      case Attack::AppVirus: b.store_imm(machine::MemOperand::at(pf.switch_layout().shared_vaddr), 0); break;
      case Attack::DriverBug: b.store_imm(machine::MemOperand::at(layout::kBaseData), 0xbad); break;
      case Attack::DriverVirus:
        m().spawn(p, "virus", [p](ThreadContext& c) { return virus_driver(c, p); });
        b.mov(1, 64).label("wait").dec_branch_nonzero(1, "wait");
        b.store_imm(machine::MemOperand::at(layout::kBaseData), 0xbad);
        break;
    }
    b.label("stuck").branch("stuck");
    const Addr at = ram.base + kInjectOffset;
    const auto loaded = machine::load_program(m(), b.build(), at, at);
    auto ctx = m().snapshot_context(p);
    ctx.pc = loaded.entry();
    m().restore_context(p, ctx);
    rep_.trace.push_back(fmt::format("inject,{},{},{}", p.value, to_string(attack), m().now()));
  }

  // -- ipc mode ----------------------------------------------------------------------

  std::size_t actor_index(const std::string& name) const {
    for (std::size_t i = 0; i < actors_.size(); ++i)
      if (actors_[i].name == name) return i;
    throw Error(Errc::Validation, fmt::format("unknown process '{}'", name));
  }

  bool idle() const {
    return std::all_of(actors_.begin(), actors_.end(), [](const Actor& a) { return a.queue.empty() && !a.busy; });
  }

  void apply_ipc(const Event& ev) {
    if (ev.verb == "settle") {
      const Step max = arg_u64(ev.args, "max", 2'000'000);
      const Step until = m().now() + max;
      m().run_until([&] { return idle() || m().now() >= until || m().now() >= opts_.max_steps; }, max);
      if (!idle()) rep_.errors.push_back(fmt::format("settle: processes still busy after {} steps", max));
      return;
    }
    Bytes payload;
    if (ev.args.count("text")) {
      const auto& t = ev.args.at("text");
      payload.assign(t.begin(), t.end());
    } else if (ev.args.count("bytes")) {
      payload.resize(arg_u64(ev.args, "bytes"));
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng_());
    }
    auto& a = actors_.at(actor_index(ev.args.at("process")));
    a.queue.emplace_back(ev, std::move(payload));
    m().wake(a.pid);
  }

  Task<void> actor_loop(ThreadContext& c, std::size_t idx) {
    for (;;) {
      if (actors_[idx].queue.empty()) {
        co_await c.block();
        continue;
      }
      auto job = std::move(actors_[idx].queue.front());
      actors_[idx].queue.pop_front();
      actors_[idx].busy = true;
      co_await perform(c, idx, job.first, std::move(job.second));
      actors_[idx].busy = false;
    }
  }

  Task<Word> object(ThreadContext& c, Word key, bool queue, const Args& a) {
    if (auto it = keys_.find(key); it != keys_.end()) co_return it->second;
    ipc::IpcResult r;
    if (queue)
      r = co_await ipc_->msgget(c, key, static_cast<std::uint32_t>(arg_u64(a, "capacity", ipc::kDefaultQueueCapacity)));
    else
      r = co_await ipc_->semget(c, key, static_cast<Word>(arg_u64(a, "initial", 0)));
    if (r.ok()) keys_[key] = r.value;
    if (r.ok() && !queue) sem_keys_.insert(key);
    co_return r.value;
  }

  Task<void> perform(ThreadContext& c, std::size_t idx, Event ev, Bytes payload) {
    const auto& a = ev.args;
    const auto& v = ev.verb;
    std::string status = "Ok";
    if (v == "sem_create" || v == "sem_down" || v == "sem_up") {
      const Word id = co_await object(c, static_cast<Word>(arg_u64(a, "key")), false, a);
      if (v != "sem_create") {
        auto r = co_await ipc_->semop(c, id, v == "sem_up" ? +1 : -1);
        status = std::string(ipc::to_string(r.status));
      }
    } else if (v == "msg_create" || v == "msg_send" || v == "msg_recv") {
      const Word id = co_await object(c, static_cast<Word>(arg_u64(a, "key")), true, a);
      const bool nowait = arg_str(a, "nowait", "false") == "true";
      if (v == "msg_send") {
        auto r = co_await ipc_->msgsnd(c, id, static_cast<Word>(arg_u64(a, "type", 1)), std::move(payload), nowait);
        status = std::string(ipc::to_string(r.status));
      } else if (v == "msg_recv") {
        auto r = co_await ipc_->msgrcv(c, id, static_cast<Word>(arg_u64(a, "type", 0)), nowait);
        status = std::string(ipc::to_string(r.status));
      }
    } else if (v == "uds_bind") {
      auto r = co_await uds_->bind(c, a.at("path"));
      if (r.ok()) actors_[idx].sockets[a.at("path")] = r.socket;
      paths_.insert(a.at("path"));
      status = std::string(uds::to_string(r.status));
    } else if (v == "uds_send") {
      const auto& path = a.at("path");
      const std::size_t frag = arg_u64(a, "fragment", payload.empty() ? 1 : payload.size());
      for (std::size_t off = 0; off < payload.size() && status == "Ok"; off += frag) {
        const auto end = std::min(payload.size(), off + frag);
        Bytes piece(payload.begin() + static_cast<long>(off), payload.begin() + static_cast<long>(end));
        auto r = co_await uds_->sendto(c, path, piece);
        status = std::string(uds::to_string(r.status));
        if (r.ok()) {
          auto& stream = sent_[path][idx];
          stream.insert(stream.end(), piece.begin(), piece.end());
        }
      }
      if (payload.empty()) {
        auto r = co_await uds_->sendto(c, path, Bytes{});
        status = std::string(uds::to_string(r.status));
      }
    } else if (v == "uds_recv") {
      const auto& path = a.at("path");
      auto it = actors_[idx].sockets.find(path);
      if (it == actors_[idx].sockets.end()) {
        status = "NotBound";
      } else {
        const Word sock = it->second;
        for (std::uint64_t i = 0, n = arg_u64(a, "count", 1); i < n; ++i) {
          auto r = co_await uds_->recvfrom(c, sock);
          status = std::string(uds::to_string(r.status));
          if (!r.ok()) break;
          const auto src = by_pid_.count(r.datagram.src_pid) ? by_pid_.at(r.datagram.src_pid) : actors_.size();
          auto& stream = received_[path][src];
          stream.insert(stream.end(), r.datagram.payload.begin(), r.datagram.payload.end());
          recv_bytes_[path][idx] += r.datagram.payload.size();
        }
      }
    } else if (v == "uds_close") {
      const auto& path = a.at("path");
      auto it = actors_[idx].sockets.find(path);
      if (it == actors_[idx].sockets.end()) {
        // Closing someone else's socket: let the library judge ownership.
        Word sock = 0;
        for (const auto& other : actors_)
          if (other.sockets.count(path)) sock = other.sockets.at(path);
        auto r = co_await uds_->close(c, sock);
        status = std::string(uds::to_string(r.status));
      } else {
        auto r = co_await uds_->close(c, it->second);
        status = std::string(uds::to_string(r.status));
        if (r.ok()) actors_[idx].sockets.erase(it);
      }
    }
    if (!ev.label.empty()) results_[ev.label] = status;
    rep_.trace.push_back(fmt::format("op,{},{},{},{},{}", actors_[idx].name, v, m().now(), status, ev.label));
  }

  // -- verdicts ----------------------------------------------------------------------

  void finish() {
    rep_.steps = m().now();
    rep_.faults = m().faults();
    for (const auto& f : rep_.faults)
      rep_.trace.push_back(fmt::format("fault,{},0x{:08x},{},{}", to_string(f.kind), f.address, f.proc.value, f.step));
    if (pf_) {
      auto& pf = *pf_;
      for (const auto& r : pf.vmm().records())
        rep_.trace.push_back(fmt::format("switch,{},{},{},{},{},{},{}", r.proc.value,
                                         r.from ? pf.domain_name(*r.from) : "-", r.to ? pf.domain_name(*r.to) : "base",
                                         r.steps(), r.ok ? 1 : 0, r.ordering_ok() ? 1 : 0, r.restored_exact ? 1 : 0));
      for (const auto& t : pf.partitioner().transitions())
        rep_.trace.push_back(fmt::format("transition,{},{},{},{},{}", t.kind, t.proc.value, t.domain, t.phase, t.steps));
      for (const char* kind : {"separate", "switch", "merge"}) {
        auto ph = pf.partitioner().last_phases(kind);
        if (!ph.empty()) rep_.phases[kind] = ph;
      }
      rep_.throughput = pf.probe().counts();
      for (const auto& [label, counts] : windows_)
        for (const auto& [dom, n] : counts) rep_.throughput[label + "." + dom] = n;
      for (auto p : sc_.platform.base_members)
        rep_.trace.push_back(fmt::format("final,base_progress,{},{}", p.value, pf.base_progress(p)));
      rep_.trace.push_back(fmt::format("fact,matrix,end,{:016x}", digest(m().matrix())));
      for (auto p : pf.base().members()) rep_.trace.push_back(fmt::format("fact,member,{}", p.value));
      for (auto p : pf.partitioner().lent_processors()) rep_.trace.push_back(fmt::format("fact,lent,{}", p.value));
      for (std::uint32_t i = 0; i < sc_.platform.processors; ++i) {
        const ProcessorId p{i};
        if (auto occ = pf.vmm().occupant(p)) rep_.trace.push_back(fmt::format("fact,occupant,{},{}", i, pf.domain_name(*occ)));
        if (auto it = attempts_.find(p); it != attempts_.end())
          rep_.trace.push_back(fmt::format("fact,state,{},{:016x}", i, switch_digest(p, it->second.target)));
      }
      for (const auto& [label, counts] : windows_)
        for (const auto& [dom, n] : counts) rep_.trace.push_back(fmt::format("fact,window,{},{},{}", label, dom, n));
      for (const auto& name : pf.open_domain_names())
        rep_.trace.push_back(fmt::format("fact,mailbox,{},{}", name, pf.vmm().mailbox(pf.domain(name)).size()));
      if (auto* g = pf.vmm().rate_guard())
        rep_.trace.push_back(fmt::format("fact,ipi_guard,{},{}", g->admitted(), g->released() + g->deferred()));
    } else {
      for (const auto& t : uds_->transfers()) rep_.trace.push_back(t.csv());
      for (Word key : sem_keys_) rep_.trace.push_back(fmt::format("fact,sem,{},{}", key, ipc_->sem_count(keys_.at(key))));
      for (const auto& path : paths_) {
        std::string prox;
        for (auto p : uds_->proxies(path)) prox += (prox.empty() ? "" : "+") + std::to_string(p.value);
        rep_.trace.push_back(fmt::format("fact,uds_residue,{},{}", path, uds_->residue_free(path) ? 0 : 1));
        rep_.trace.push_back(fmt::format("fact,proxies,{},{}", path, prox));
      }
      for (const auto& [path, per] : recv_bytes_)
        for (const auto& [idx, n] : per) rep_.trace.push_back(fmt::format("fact,uds_recv,{},{},{}", path, actors_[idx].name, n));
      for (const auto& [path, per] : sent_) {
        std::set<std::size_t> senders;
        for (const auto& [idx, b] : per) senders.insert(idx);
        if (received_.count(path))
          for (const auto& [idx, b] : received_.at(path)) senders.insert(idx);
        for (auto idx : senders) {
          const auto& got = received_[path][idx];
          const auto& put = sent_[path][idx];
          rep_.trace.push_back(fmt::format("fact,uds_stream,{},{},{},{:016x},{:016x}", path, idx, put.size(),
                                           digest(put), digest(got)));
        }
      }
      rep_.trace.push_back(fmt::format("fact,ipc_health,{},{}", ipc_->invariants_hold() ? 1 : 0, ipc_->violations().size()));
      for (const auto& t : ipc_->trace())
        rep_.trace.push_back(fmt::format("ipc,{},{},{},{},{},{}", t.op, t.step, t.proc.value, t.pid, t.object, t.detail));
    }
    for (const auto& [dom, n] : rep_.throughput) rep_.trace.push_back(fmt::format("final,throughput,{},{}", dom, n));
    for (std::size_t i = 0; i < rep_.errors.size(); ++i) rep_.trace.push_back(fmt::format("fact,error,{}", i));
    for (const auto& as : sc_.assertions) {
      Verdict v;
      v.name = as.name;
      v.check = as.check;
      try {
        judge(as, v);
      } catch (const std::exception& e) {
        v.pass = false;
        v.detail = e.what();
      }
      rep_.trace.push_back(fmt::format("verdict,{},{},{}", v.name, v.pass ? "pass" : "fail", v.detail));
      rep_.verdicts.push_back(std::move(v));
    }
  }

  std::vector<Fault> faults_on(const std::set<ProcessorId>& procs) const {
    std::vector<Fault> out;
    for (const auto& f : rep_.faults)
      if (procs.count(f.proc)) out.push_back(f);
    return out;
  }

  std::uint64_t window_value(const std::string& ref) const {
    const auto dot = ref.find('.');
    if (dot == std::string::npos) throw Error(Errc::Validation, fmt::format("'{}' is not label.domain", ref));
    const auto& w = windows_.at(ref.substr(0, dot));
    auto it = w.find(ref.substr(dot + 1));
    return it == w.end() ? 0 : it->second;
  }

  void judge(const Assertion& as, Verdict& v) {
    const auto& a = as.args;
    const auto& c = as.check;
    if (c == "no_faults") {
      std::set<ProcessorId> procs;
      for (const auto& p : arg_list(a, "procs")) procs.insert(ProcessorId{static_cast<std::uint32_t>(std::stoul(p))});
      const auto n = procs.empty() ? rep_.faults.size() : faults_on(procs).size();
      v.pass = n == 0;
      v.detail = fmt::format("{} faults", n);
      return;
    }
    if (c == "error") {
      v.pass = error_codes_.count(a.at("code")) > 0;
      v.detail = v.pass ? a.at("code") + " raised" : "not raised";
      return;
    }
    if (c == "no_errors") {
      v.pass = rep_.errors.empty();
      v.detail = v.pass ? "none" : rep_.errors.front();
      return;
    }
    if (sc_.mode == ScenarioMode::Ipc) return judge_ipc(as, v);
    auto& pf = *pf_;
    if (c == "base_progress") {
      const auto got = pf.base_progress(proc_arg(a, "proc"));
      v.pass = got >= arg_u64(a, "at_least");
      v.detail = fmt::format("{} units", got);
    } else if (c == "base_complete") {
      if (!sc_.platform.base_units) throw Error(Errc::Validation, "platform has no base_units");
      v.pass = true;
      std::string parts;
      for (auto p : sc_.platform.base_members) {
        const auto got = pf.base_progress(p);
        v.pass = v.pass && got >= *sc_.platform.base_units;
        parts += fmt::format("cpu{}={} ", p.value, got);
      }
      v.detail = parts + fmt::format("of {}", *sc_.platform.base_units);
    } else if (c == "no_base_faults") {
      const auto n = faults_on(sc_.platform.base_members).size();
      v.pass = n == 0;
      v.detail = fmt::format("{} faults on base processors", n);
    } else if (c == "fault") {
      const auto p = proc_arg(a, "proc");
      std::size_t n = 0;
      for (const auto& f : faults_on({p}))
        if (!a.count("kind") || to_string(f.kind) == a.at("kind")) ++n;
      v.pass = n > 0;
      v.detail = fmt::format("{} matching faults on cpu{}", n, p.value);
    } else if (c == "matrix_unchanged") {
      v.pass = pf.machine().matrix() == matrix0_;
      v.detail = v.pass ? "identical" : "matrix differs from boot";
    } else if (c == "domain_progress") {
      const auto& d = a.at("domain");
      const auto since = reboot_marks_.count(d) ? reboot_marks_.at(d) : 0;
      const auto got = pf.probe().count(d) - since;
      v.pass = got >= arg_u64(a, "at_least");
      v.detail = fmt::format("{} units{}", got, reboot_marks_.count(d) ? " since reboot" : "");
    } else if (c == "occupant") {
      const auto occ = pf.vmm().occupant(proc_arg(a, "proc"));
      const std::string name = occ ? pf.domain_name(*occ) : "none";
      v.pass = name == a.at("domain");
      v.detail = name;
    } else if (c == "switches_ok") {
      std::size_t bad = 0, n = 0;
      for (const auto& r : pf.vmm().records()) {
        ++n;
        if (!r.ok || !r.ordering_ok() || !r.restored_exact) ++bad;
      }
      v.pass = bad == 0;
      v.detail = fmt::format("{} of {} handshakes bad", bad, n);
    } else if (c == "switch_failed") {
      std::size_t failed = 0;
      for (const auto& r : pf.vmm().records())
        if (!r.ok && (!a.count("proc") || r.proc == proc_arg(a, "proc"))) ++failed;
      v.pass = failed > 0;
      v.detail = fmt::format("{} failed handshakes", failed);
    } else if (c == "no_partial_apply") {
      const auto p = proc_arg(a, "proc");
      auto it = attempts_.find(p);
      if (it == attempts_.end()) throw Error(Errc::Validation, fmt::format("no switch was requested on cpu{}", p.value));
      const auto& at = it->second;
      std::string bad;
      if (pf.vmm().occupant(p) != at.occupant) bad += "occupant ";
      if (pf.vmm().store().at(at.target).context != at.target_context) bad += "target-context ";
      if (m().matrix().entries(p) != at.entries) bad += "bmu-entries ";
      if (m().processor(p).regs.system.translation_base != at.table) bad += "page-table ";
      v.pass = bad.empty();
      v.detail = bad.empty() ? "switch left no trace" : "changed: " + bad;
    } else if (c == "conservation") {
      v.pass = pf.partitioner().conservation_holds();
      v.detail = fmt::format("{} base members, {} lent", pf.base().members().size(),
                             pf.partitioner().lent_processors().size());
    } else if (c == "base_members") {
      const auto n = pf.base().members().size();
      v.pass = n >= arg_u64(a, "at_least");
      v.detail = fmt::format("{} members", n);
    } else if (c == "lent") {
      const bool lent = pf.partitioner().lent(proc_arg(a, "proc"));
      v.pass = lent == (a.at("equals") == "true");
      v.detail = lent ? "lent" : "not lent";
    } else if (c == "throughput") {
      const auto got = window_value(a.at("label") + "." + a.at("domain"));
      v.pass = a.count("equals") ? got == arg_u64(a, "equals") : got >= arg_u64(a, "at_least", 1);
      v.detail = fmt::format("{} units", got);
    } else if (c == "throughput_ratio") {
      const auto num = window_value(a.at("num")), den = window_value(a.at("den"));
      v.pass = rational_equals(num, den, a.at("equals"));
      v.detail = fmt::format("{}:{}", num, den);
    } else if (c == "idc_delivered") {
      const auto& d = a.at("domain");
      const auto queued = pf.vmm().mailbox(pf.domain(d)).size();
      v.pass = queued == arg_u64(a, "count");
      v.detail = fmt::format("{} queued, {} sent", queued, idc_.count(d) ? idc_.at(d) : 0);
    } else if (c == "ipis_deferred") {
      auto* g = pf.vmm().rate_guard();
      const auto n = g ? g->released() + g->deferred() : 0;
      v.pass = n >= arg_u64(a, "at_least");
      v.detail = fmt::format("{} deferred, {} admitted", n, g ? g->admitted() : 0);
    } else {
      throw Error(Errc::Validation, fmt::format("check '{}' not handled", c));
    }
  }

  void judge_ipc(const Assertion& as, Verdict& v) {
    const auto& a = as.args;
    const auto& c = as.check;
    if (c == "result") {
      auto it = results_.find(a.at("label"));
      const std::string got = it == results_.end() ? "pending" : it->second;
      v.pass = got == a.at("equals");
      v.detail = got;
    } else if (c == "sem_count") {
      const auto key = static_cast<Word>(arg_u64(a, "key"));
      if (!keys_.count(key)) throw Error(Errc::Validation, fmt::format("no object with key {}", key));
      const auto got = ipc_->sem_count(keys_.at(key));
      v.pass = got == arg_u64(a, "equals");
      v.detail = fmt::format("count {}", got);
    } else if (c == "ipc_invariants") {
      v.pass = ipc_->invariants_hold() && ipc_->violations().empty();
      v.detail = fmt::format("{} violations", ipc_->violations().size());
    } else if (c == "uds_received") {
      const auto idx = actor_index(a.at("process"));
      const auto& path = a.at("path");
      const std::uint64_t got = recv_bytes_.count(path) && recv_bytes_.at(path).count(idx) ? recv_bytes_.at(path).at(idx) : 0;
      v.pass = got == arg_u64(a, "bytes");
      v.detail = fmt::format("{} bytes", got);
    } else if (c == "uds_identical") {
      const auto& path = a.at("path");
      const auto sent = sent_.count(path) ? sent_.at(path) : std::map<std::size_t, Bytes>{};
      const auto got = received_.count(path) ? received_.at(path) : std::map<std::size_t, Bytes>{};
      v.pass = !sent.empty() && sent == got;
      std::size_t bytes = 0;
      for (const auto& [k, s] : sent) bytes += s.size();
      v.detail = fmt::format("{} senders, {} bytes sent", sent.size(), bytes);
    } else if (c == "uds_residue_free") {
      v.pass = uds_->residue_free(a.at("path"));
      v.detail = v.pass ? "clean" : "state left behind";
    } else if (c == "proxies") {
      std::string got;
      for (auto p : uds_->proxies(a.at("path"))) got += (got.empty() ? "" : ",") + std::to_string(p.value);
      v.pass = got == a.at("equals");
      v.detail = got.empty() ? "none" : got;
    } else {
      throw Error(Errc::Validation, fmt::format("check '{}' not handled", c));
    }
  }

  const Scenario& sc_;
  RunOptions opts_;
  std::uint64_t seed_ = 0;
  std::mt19937_64 rng_;
  RunReport rep_;
  std::unique_ptr<Platform> pf_;
  std::unique_ptr<Machine> machine_;
  std::unique_ptr<ipc::IpcSystem> ipc_;
  std::unique_ptr<uds::UdsSystem> uds_;
  bmu::AccessMatrix matrix0_;
  bool budget_note_ = false;
  std::set<std::string> error_codes_;
  std::map<std::string, std::uint64_t> reboot_marks_;
  std::map<std::string, std::map<std::string, std::uint64_t>> windows_;
  std::map<std::string, std::uint64_t> idc_;
  std::map<ProcessorId, Attempt> attempts_;
  std::vector<Actor> actors_;
  std::map<Pid, std::size_t> by_pid_;
  std::map<Word, Word> keys_;
  std::set<Word> sem_keys_;
  std::set<std::string> paths_;
  std::map<std::string, std::string> results_;
  std::map<std::string, std::map<std::size_t, Bytes>> sent_;
  std::map<std::string, std::map<std::size_t, Bytes>> received_;
  std::map<std::string, std::map<std::size_t, std::uint64_t>> recv_bytes_;
};

}  // namespace

RunReport run_scenario(const Scenario& scenario, const RunOptions& options) {
  validate(scenario);
  Run run(scenario, options);
  return run.execute();
}

}  // namespace secpart::harness
