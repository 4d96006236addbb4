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

#include "secpart/harness/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace secpart::harness {

namespace {

struct Spec {
  std::vector<ScenarioMode> modes;
  std::vector<std::string> required;
};

const std::vector<ScenarioMode> kPlatformModes{ScenarioMode::Amp, ScenarioMode::Smp};
const std::vector<ScenarioMode> kIpcMode{ScenarioMode::Ipc};
const std::vector<ScenarioMode> kAllModes{ScenarioMode::Amp, ScenarioMode::Smp, ScenarioMode::Ipc};

const std::map<std::string, Spec>& verbs() {
  static const std::map<std::string, Spec> v{
      {"run", {kAllModes, {"steps"}}},
      {"switch", {kPlatformModes, {"proc", "domain"}}},
      {"separate", {kPlatformModes, {"proc", "domain"}}},
      {"merge", {kPlatformModes, {"proc"}}},
      {"reboot", {kPlatformModes, {"proc", "domain"}}},
      {"inject", {kPlatformModes, {"proc", "attack"}}},
      {"idc_send", {kPlatformModes, {"from", "to", "bytes"}}},
      {"rate_limit", {kPlatformModes, {"limit"}}},
      {"ipi_flood", {kPlatformModes, {"from", "to", "count"}}},
      {"measure", {kPlatformModes, {"window"}}},
      {"pin", {kPlatformModes, {"proc"}}},
      {"settle", {kIpcMode, {}}},
      {"sem_create", {kIpcMode, {"process", "key"}}},
      {"sem_down", {kIpcMode, {"process", "key"}}},
      {"sem_up", {kIpcMode, {"process", "key"}}},
      {"msg_create", {kIpcMode, {"process", "key"}}},
      {"msg_send", {kIpcMode, {"process", "key"}}},
      {"msg_recv", {kIpcMode, {"process", "key"}}},
      {"uds_bind", {kIpcMode, {"process", "path"}}},
      {"uds_send", {kIpcMode, {"process", "path"}}},
      {"uds_recv", {kIpcMode, {"process", "path"}}},
      {"uds_close", {kIpcMode, {"process", "path"}}},
  };
  return v;
}

const std::map<std::string, Spec>& checks() {
  static const std::map<std::string, Spec> c{
      {"base_progress", {kPlatformModes, {"proc", "at_least"}}},
      {"base_complete", {kPlatformModes, {}}},
      {"no_faults", {kAllModes, {}}},
      {"no_base_faults", {kPlatformModes, {}}},
      {"fault", {kPlatformModes, {"proc"}}},
      {"matrix_unchanged", {kPlatformModes, {}}},
      {"domain_progress", {kPlatformModes, {"domain", "at_least"}}},
      {"occupant", {kPlatformModes, {"proc", "domain"}}},
      {"switches_ok", {kPlatformModes, {}}},
      {"switch_failed", {kPlatformModes, {}}},
      {"no_partial_apply", {kPlatformModes, {"proc"}}},
      {"conservation", {kPlatformModes, {}}},
      {"base_members", {kPlatformModes, {"at_least"}}},
      {"lent", {kPlatformModes, {"proc", "equals"}}},
      {"error", {kAllModes, {"code"}}},
      {"no_errors", {kAllModes, {}}},
      {"throughput", {kPlatformModes, {"label", "domain"}}},
      {"throughput_ratio", {kPlatformModes, {"num", "den", "equals"}}},
      {"idc_delivered", {kPlatformModes, {"domain", "count"}}},
      {"ipis_deferred", {kPlatformModes, {"at_least"}}},
      {"result", {kIpcMode, {"label", "equals"}}},
      {"sem_count", {kIpcMode, {"key", "equals"}}},
      {"ipc_invariants", {kIpcMode, {}}},
      {"uds_received", {kIpcMode, {"process", "path", "bytes"}}},
      {"uds_identical", {kIpcMode, {"path"}}},
      {"uds_residue_free", {kIpcMode, {"path"}}},
      {"proxies", {kIpcMode, {"path", "equals"}}},
  };
  return c;
}

const std::set<std::string> kAttacks{"app_bug", "app_virus", "driver_bug", "driver_virus"};

[[noreturn]] void invalid(int line, const std::string& what) {
  throw Error(Errc::Validation, line > 0 ? fmt::format("line {}: {}", line, what) : what);
}

std::string scalar_text(const YAML::Node& n) {
  if (n.IsScalar()) return n.Scalar();
  if (n.IsSequence()) {
    std::string out;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (i) out += ",";
      out += scalar_text(n[i]);
    }
    return out;
  }
  if (n.IsNull()) return {};
  throw Error(Errc::Validation, fmt::format("line {}: nested mapping not allowed here", n.Mark().line + 1));
}

Args read_args(const YAML::Node& n, std::initializer_list<const char*> skip) {
  Args a;
  for (auto it = n.begin(); it != n.end(); ++it) {
    const auto key = it->first.as<std::string>();
    bool skipped = false;
    for (const char* s : skip) skipped = skipped || key == s;
    if (!skipped) a[key] = scalar_text(it->second);
  }
  return a;
}

template <typename T>
T get(const YAML::Node& n, const char* key, T fallback) {
  if (!n[key]) return fallback;
  try {
    return n[key].as<T>();
  } catch (const YAML::Exception&) {
    invalid(n[key].Mark().line + 1, fmt::format("'{}' has the wrong type", key));
  }
}

bool allowed(const Spec& s, ScenarioMode m) { return std::find(s.modes.begin(), s.modes.end(), m) != s.modes.end(); }

void check_proc(const Scenario& s, const Args& a, const std::string& key, int line) {
  if (!a.count(key)) return;
  for (const auto& text : arg_list(a, key)) {
    std::uint64_t v = 0;
    try {
      v = std::stoull(text, nullptr, 0);
    } catch (const std::exception&) {
      invalid(line, fmt::format("'{}' is not a processor number", text));
    }
    if (v >= s.platform.processors) invalid(line, fmt::format("processor {} does not exist", v));
  }
}

void check_domain(const Scenario& s, const Args& a, const std::string& key, int line) {
  if (!a.count(key)) return;
  const auto name = a.at(key);
  if (name == "base" || name == "none") return;
  for (const auto& d : s.platform.domains)
    if (d.name == name) return;
  invalid(line, fmt::format("unknown domain '{}'", name));
}

void check_process(const Scenario& s, const Args& a, int line) {
  if (!a.count("process")) return;
  for (const auto& p : s.processes)
    if (p.name == a.at("process")) return;
  invalid(line, fmt::format("unknown process '{}'", a.at("process")));
}

void check_numbers(const Args& a, std::initializer_list<const char*> keys, int line) {
  for (const char* k : keys) {
    if (!a.count(k)) continue;
    try {
      std::size_t used = 0;
      (void)std::stoull(a.at(k), &used, 0);
      if (used != a.at(k).size()) throw std::invalid_argument(k);
    } catch (const std::exception&) {
      invalid(line, fmt::format("'{}' must be a number, got '{}'", k, a.at(k)));
    }
  }
}

}  // namespace

std::string_view to_string(ScenarioMode m) {
  switch (m) {
    case ScenarioMode::Amp: return "amp";
    case ScenarioMode::Smp: return "smp";
    case ScenarioMode::Ipc: return "ipc";
  }
  return "?";
}

std::uint64_t arg_u64(const Args& a, const std::string& key) {
  auto it = a.find(key);
  if (it == a.end()) throw Error(Errc::Validation, fmt::format("missing '{}'", key));
  return std::stoull(it->second, nullptr, 0);
}

std::uint64_t arg_u64(const Args& a, const std::string& key, std::uint64_t fallback) {
  return a.count(key) ? arg_u64(a, key) : fallback;
}

std::string arg_str(const Args& a, const std::string& key, const std::string& fallback) {
  auto it = a.find(key);
  return it == a.end() ? fallback : it->second;
}

std::vector<std::string> arg_list(const Args& a, const std::string& key) {
  std::vector<std::string> out;
  auto it = a.find(key);
  if (it == a.end()) return out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void validate(const Scenario& s) {
  if (s.name.empty()) invalid(0, "scenario has no name");
  std::set<std::string> names;
  for (const auto& d : s.platform.domains) {
    if (d.name == "base" || d.kind == DomainKind::Base) invalid(0, fmt::format("domain '{}': only one base domain", d.name));
    if (!names.insert(d.name).second) invalid(0, fmt::format("domain '{}' declared twice", d.name));
  }
  std::set<std::string> procs;
  for (const auto& p : s.processes) {
    if (!procs.insert(p.name).second) invalid(0, fmt::format("process '{}' declared twice", p.name));
    if (p.proc.value >= s.platform.processors) invalid(0, fmt::format("process '{}' on missing cpu{}", p.name, p.proc.value));
  }
  std::set<std::string> labels;
  for (const auto& e : s.events) {
    auto it = verbs().find(e.verb);
    if (it == verbs().end()) invalid(e.line, fmt::format("unknown verb '{}'", e.verb));
    if (!allowed(it->second, s.mode))
      invalid(e.line, fmt::format("verb '{}' is not available in {} mode", e.verb, to_string(s.mode)));
    for (const auto& r : it->second.required)
      if (!e.args.count(r)) invalid(e.line, fmt::format("verb '{}' needs '{}'", e.verb, r));
    for (const char* k : {"proc", "from", "to"})
      if (e.verb != "idc_send") check_proc(s, e.args, k, e.line);
    if (e.verb == "idc_send") {
      check_domain(s, e.args, "from", e.line);
      check_domain(s, e.args, "to", e.line);
    }
    check_domain(s, e.args, "domain", e.line);
    check_process(s, e.args, e.line);
    check_numbers(e.args, {"steps", "bytes", "count", "limit", "window", "key", "initial", "capacity", "type",
                           "fragment", "vector", "max"},
                  e.line);
    if (e.verb == "inject" && !kAttacks.count(e.args.at("attack")))
      invalid(e.line, fmt::format("unknown attack '{}'", e.args.at("attack")));
    if ((e.verb == "msg_send" || e.verb == "uds_send") && !e.args.count("bytes") && !e.args.count("text"))
      invalid(e.line, fmt::format("verb '{}' needs 'bytes' or 'text'", e.verb));
    if (!e.label.empty() && !labels.insert(e.label).second) invalid(e.line, fmt::format("label '{}' used twice", e.label));
  }
  for (const auto& a : s.assertions) {
    auto it = checks().find(a.check);
    if (it == checks().end()) invalid(a.line, fmt::format("assertion '{}': unknown check '{}'", a.name, a.check));
    if (!allowed(it->second, s.mode))
      invalid(a.line, fmt::format("assertion '{}': check '{}' is not available in {} mode", a.name, a.check,
                                  to_string(s.mode)));
    for (const auto& r : it->second.required)
      if (!a.args.count(r)) invalid(a.line, fmt::format("assertion '{}' needs '{}'", a.name, r));
    check_proc(s, a.args, "proc", a.line);
    check_proc(s, a.args, "procs", a.line);
    check_domain(s, a.args, "domain", a.line);
    check_process(s, a.args, a.line);
    check_numbers(a.args, {"at_least", "count", "bytes", "key"}, a.line);
    if (a.check == "result" && !labels.count(a.args.at("label")))
      invalid(a.line, fmt::format("assertion '{}' refers to unknown label '{}'", a.name, a.args.at("label")));
  }
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(Errc::Parse, fmt::format("{}: line {}, column {}: {}", origin, e.mark.line + 1, e.mark.column + 1, e.msg));
  }
  if (!root.IsMap()) throw Error(Errc::Parse, fmt::format("{}: line 1, column 1: expected a mapping", origin));

  Scenario s;
  try {
    s.name = get<std::string>(root, "scenario", "");
    s.seed = get<std::uint64_t>(root, "seed", 0);
    const auto plat = root["platform"];
    if (!plat || !plat.IsMap()) invalid(root.Mark().line + 1, "missing 'platform' mapping");
    const auto mode = get<std::string>(plat, "mode", "amp");
    if (mode == "amp")
      s.mode = ScenarioMode::Amp;
    else if (mode == "smp")
      s.mode = ScenarioMode::Smp;
    else if (mode == "ipc")
      s.mode = ScenarioMode::Ipc;
    else
      invalid(plat["mode"].Mark().line + 1, fmt::format("unknown mode '{}'", mode));
    const auto n = get<std::uint32_t>(plat, "processors", s.mode == ScenarioMode::Ipc ? 3 : 4);

    std::vector<DomainDecl> open;
    int bases = 0;
    if (const auto doms = root["domains"]) {
      if (!doms.IsSequence()) invalid(doms.Mark().line + 1, "'domains' must be a list");
      for (const auto& d : doms) {
        const auto name = get<std::string>(d, "name", "");
        if (name.empty()) invalid(d.Mark().line + 1, "domain without a name");
        DomainKind kind;
        try {
          kind = parse_domain_kind(get<std::string>(d, "kind", ""));
        } catch (const Error& e) {
          invalid(d.Mark().line + 1, fmt::format("domain '{}': {}", name, e.what()));
        }
        if (kind == DomainKind::Base) {
          ++bases;
          if (name != "base") invalid(d.Mark().line + 1, fmt::format("the base domain must be named 'base', not '{}'", name));
          continue;
        }
        open.push_back({name, kind});
      }
    }
    if (s.mode != ScenarioMode::Ipc && bases != 1)
      invalid(root["domains"] ? root["domains"].Mark().line + 1 : 0,
              fmt::format("exactly one base domain required, found {}", bases));
    if (bases > 1) invalid(root["domains"].Mark().line + 1, "more than one base domain");

    s.platform = s.mode == ScenarioMode::Smp ? PlatformSpec::smp(n, open) : PlatformSpec::amp(n, open);
    if (s.mode == ScenarioMode::Ipc) s.platform.domains.clear();
    s.platform.seed = s.seed;
    s.platform.work_unit_ops = get<std::uint32_t>(plat, "work_unit_ops", s.platform.work_unit_ops);
    if (plat["base_units"]) s.platform.base_units = get<std::uint32_t>(plat, "base_units", 0);
    s.platform.switch_timeout = get<Step>(plat, "switch_timeout", s.platform.switch_timeout);
    if (const auto bm = plat["base_members"]) {
      s.platform.base_members.clear();
      s.platform.open.clear();
      for (const auto& p : bm) s.platform.base_members.insert(ProcessorId{p.as<std::uint32_t>()});
      for (std::uint32_t p = 0; p < n; ++p)
        if (!s.platform.base_members.count(ProcessorId{p})) s.platform.open.insert(ProcessorId{p});
    }
    if (const auto boot = plat["boot"]) {
      if (!boot.IsMap()) invalid(boot.Mark().line + 1, "'boot' must map processors to domains");
      for (auto it = boot.begin(); it != boot.end(); ++it) {
        const auto p = it->first.as<std::uint32_t>();
        const auto d = it->second.as<std::string>();
        if (!s.platform.open.count(ProcessorId{p}))
          invalid(it->first.Mark().line + 1, fmt::format("boot: cpu{} is not an open processor", p));
        if (std::none_of(open.begin(), open.end(), [&](const DomainDecl& x) { return x.name == d; }))
          invalid(it->second.Mark().line + 1, fmt::format("boot: unknown domain '{}'", d));
        s.platform.boot[ProcessorId{p}] = d;
      }
    }
    if (const auto skip = plat["skip_unified"])
      for (const auto& d : skip) s.platform.skip_unified.insert(d.as<std::string>());

    if (const auto procs = root["processes"])
      for (const auto& p : procs)
        s.processes.push_back({get<std::string>(p, "name", ""), ProcessorId{get<std::uint32_t>(p, "proc", 0)}});

    if (const auto evs = root["events"]) {
      if (!evs.IsSequence()) invalid(evs.Mark().line + 1, "'events' must be a list");
      for (const auto& e : evs) {
        if (!e.IsMap()) invalid(e.Mark().line + 1, "event must be a mapping");
        Event ev;
        ev.line = e.Mark().line + 1;
        ev.verb = get<std::string>(e, "verb", "");
        ev.label = get<std::string>(e, "label", "");
        if (e["at"]) ev.at = get<Step>(e, "at", 0);
        ev.args = read_args(e, {"verb", "label", "at"});
        s.events.push_back(std::move(ev));
      }
    }
    if (const auto as = root["assertions"]) {
      if (!as.IsSequence()) invalid(as.Mark().line + 1, "'assertions' must be a list");
      for (const auto& a : as) {
        if (!a.IsMap()) invalid(a.Mark().line + 1, "assertion must be a mapping");
        Assertion x;
        x.line = a.Mark().line + 1;
        x.check = get<std::string>(a, "check", "");
        x.name = get<std::string>(a, "name", x.check);
        x.args = read_args(a, {"check", "name"});
        s.assertions.push_back(std::move(x));
      }
    }
    for (auto it = root.begin(); it != root.end(); ++it) {
      static const std::set<std::string> known{"scenario", "seed", "platform", "domains", "processes", "events", "assertions"};
      const auto key = it->first.as<std::string>();
      if (!known.count(key)) invalid(it->first.Mark().line + 1, fmt::format("unknown section '{}'", key));
    }
  } catch (const YAML::Exception& e) {
    invalid(e.mark.line + 1, e.msg);
  }
  validate(s);
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Config, fmt::format("cannot open scenario '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

}  // namespace secpart::harness
