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

#include "secpart/harness/platform.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

namespace secpart::harness {

using machine::MemOperand;
using machine::PageTable;
using machine::ProgramBuilder;

std::string_view to_string(DomainKind k) {
  switch (k) {
    case DomainKind::Base: return "base";
    case DomainKind::Operator: return "operator";
    case DomainKind::Manufacturer: return "manufacturer";
    case DomainKind::Trusted: return "trusted";
    case DomainKind::Untrusted: return "untrusted";
  }
  return "?";
}

DomainKind parse_domain_kind(std::string_view text) {
  for (auto k : {DomainKind::Base, DomainKind::Operator, DomainKind::Manufacturer, DomainKind::Trusted,
                 DomainKind::Untrusted}) {
    if (to_string(k) == text) return k;
  }
  throw Error(Errc::Validation, fmt::format("unknown domain kind '{}'", text));
}

PlatformSpec PlatformSpec::smp(std::uint32_t processors, std::vector<DomainDecl> domains) {
  PlatformSpec s;
  s.processors = processors;
  for (std::uint32_t i = 0; i < processors; ++i) s.base_members.insert(ProcessorId{i});
  s.domains = std::move(domains);
  return s;
}

PlatformSpec PlatformSpec::amp(std::uint32_t processors, std::vector<DomainDecl> domains) {
  PlatformSpec s;
  s.processors = processors;
  s.base_members = {ProcessorId{0}};
  for (std::uint32_t i = 1; i < processors; ++i) s.open.insert(ProcessorId{i});
  s.domains = std::move(domains);
  return s;
}

namespace {

AddressRange open_ram(std::size_t index) {
  return {layout::kOpenRamBase + static_cast<Addr>(index) * layout::kOpenRamSize, layout::kOpenRamSize};
}

}  // namespace

bmu::DomainPolicy reference_policy(const std::vector<DomainDecl>& domains) {
  bmu::DomainPolicy pol;
  pol.base_domain = "base";
  pol.regions.push_back({"base_ram", layout::kBaseRam});
  pol.regions.push_back({"slave_a", layout::kSlaveA});
  pol.regions.push_back({"slave_b", layout::kSlaveB});
  pol.regions.push_back({"range1", layout::kRange1});
  for (std::size_t i = 0; i < domains.size(); ++i) pol.regions.push_back({"ram." + domains[i].name, open_ram(i)});
  using bmu::Permission;
  for (const auto& d : domains) {
    if (d.kind == DomainKind::Untrusted) {
      pol.set(d.name, "base_ram", Permission::Prohibited);
      pol.set(d.name, "slave_a", Permission::Prohibited);
      pol.set(d.name, "slave_b", Permission::ReadOnly);
      pol.set(d.name, "range1", Permission::ReadOnly);
    } else {
      pol.set(d.name, "base_ram", Permission::ReadOnly);
      pol.set(d.name, "slave_a", Permission::ReadOnly);
    }
    for (const auto& other : domains)
      if (other.name != d.name) pol.set(d.name, "ram." + other.name, Permission::Prohibited);
  }
  return pol;
}

Platform::Platform(PlatformSpec spec) : spec_(std::move(spec)), policy_(reference_policy(spec_.domains)) {
  const auto n = spec_.processors;
  if (spec_.base_members.empty()) throw Error(Errc::Validation, "the base domain needs at least one processor");
  if (spec_.work_unit_ops < 5) throw Error(Errc::Validation, "a work unit needs at least 5 instructions");
  if (spec_.domains.size() > layout::kMaxOpenDomains)
    throw Error(Errc::Validation, fmt::format("at most {} open domains", layout::kMaxOpenDomains));
  for (auto p : spec_.base_members)
    if (p.value >= n) throw Error(Errc::Validation, fmt::format("cpu{} does not exist", p.value));
  for (auto p : spec_.open) {
    if (p.value >= n) throw Error(Errc::Validation, fmt::format("cpu{} does not exist", p.value));
    if (spec_.base_members.contains(p))
      throw Error(Errc::Validation, fmt::format("cpu{} is both a base member and open", p.value));
  }
  for (std::size_t i = 0; i < spec_.domains.size(); ++i) {
    const auto& d = spec_.domains[i];
    if (d.kind == DomainKind::Base) throw Error(Errc::Validation, fmt::format("domain '{}': only one base domain", d.name));
    if (d.name == "base" || kinds_.contains(d.name))
      throw Error(Errc::Validation, fmt::format("duplicate domain '{}'", d.name));
    kinds_[d.name] = d.kind;
    rams_[d.name] = open_ram(i);
  }
  for (const auto& [p, name] : spec_.boot) {
    if (!spec_.open.contains(p)) throw Error(Errc::Validation, fmt::format("cpu{} is not an open processor", p.value));
    if (!kinds_.contains(name)) throw Error(Errc::Validation, fmt::format("unknown domain '{}'", name));
  }
  for (const auto& name : spec_.skip_unified)
    if (!kinds_.contains(name)) throw Error(Errc::Validation, fmt::format("unknown domain '{}'", name));
  kinds_["base"] = DomainKind::Base;
  rams_["base"] = layout::kBaseRam;

  machine::MachineConfig cfg;
  cfg.processor_count = n;
  cfg.ram_size = layout::kRamSize;
  cfg.io_windows = {layout::kIoWindow};
  cfg.slaves = {{"slave_a", layout::kSlaveA}, {"slave_b", layout::kSlaveB}, {"range1", layout::kRange1}};
  cfg.rng_seed = spec_.seed;
  machine_ = machine::Machine::build(cfg);
  auto& m = *machine_;

  auto make_table = [&](const std::string& name) {
    PageTable t(cfg.page_size, name);
    t.map({layout::kLowWindow.base, layout::kLowWindow.base, layout::kLowWindow.length});
    t.map({layout::kIoWindow.base, layout::kIoWindow.base, layout::kIoWindow.length});
    tables_[name] = m.add_page_table(std::move(t));
  };
  make_table("base");
  for (const auto& d : spec_.domains) make_table(d.name);

  std::vector<Word> unified;
  for (const auto& [name, handle] : tables_)
    if (!spec_.skip_unified.contains(name)) unified.push_back(handle);
  switch_program_ = dynpart::install_switch_code(m, switch_layout_, unified);

  // OS images.
  const auto base_prog = os_program("base", layout::kBaseData, layout::kPerCpuData, spec_.base_units.has_value());
  machine::load_program(m, base_prog, layout::kBaseText, layout::kBaseText);
  for (const auto& d : spec_.domains) {
    const auto ram = rams_[d.name];
    const auto prog = os_program(d.name, ram.base + layout::kOpenDataOffset, 0, false);
    machine::load_program(m, prog, ram.base, ram.base);
  }

  std::mt19937_64 rng(spec_.seed ^ 0x5ec9a47ull);
  auto make_context = [&](const std::string& name, Addr entry, std::uint32_t index) {
    DomainContext c;
    for (std::size_t r = 3; r < c.general.size(); ++r) c.general[r] = static_cast<Word>(rng());
    for (auto& bank : c.banked5)
      for (auto& w : bank) w = static_cast<Word>(rng());
    for (auto& bank : c.banked2)
      for (auto& w : bank) w = static_cast<Word>(rng());
    c.status_current = machine::kModeSvc;
    c.system.translation_base = tables_.at(name);
    c.system.vector_base = switch_layout_.handler().vector_base();
    c.system.context_id = index;
    c.pc = entry;
    return c;
  };
  for (std::size_t i = 0; i < spec_.domains.size(); ++i) {
    const auto& d = spec_.domains[i];
    pristine_[d.name] = make_context(d.name, rams_[d.name].base, static_cast<std::uint32_t>(i + 1));
  }
  pristine_["base"] = make_context("base", layout::kBaseText, 0);
  pristine_["base"].system.coherence = 1;
  if (spec_.base_units) pristine_["base"].general[1] = *spec_.base_units;

  m.install_matrix(bmu::AccessMatrix(n, spec_.base_members));

  virt::VmmOptions opts;
  opts.master = *spec_.base_members.begin();
  opts.open = spec_.open;
  opts.timeout = spec_.switch_timeout;
  vmm_ = std::make_unique<virt::Vmm>(m, switch_layout_.handler(), policy_, opts);
  for (const auto& d : spec_.domains) ids_[d.name] = vmm_->add_domain(d.name, d.name, pristine_[d.name]);

  base_ = std::make_unique<dynpart::BaseDomainModel>(spec_.base_members);
  partitioner_ = std::make_unique<dynpart::Partitioner>(m, *vmm_, *base_, switch_layout_, layout::kToken);
  probe_ = std::make_unique<dynpart::ThroughputProbe>(m);
  for (const auto& [name, handle] : tables_) probe_->attribute(handle, name);

  for (auto p : spec_.base_members) m.start(p, base_context(p));
  for (const auto& [p, name] : spec_.boot) vmm_->boot(p, ids_.at(name));
}

Platform::~Platform() {
  probe_.reset();
  partitioner_.reset();
  vmm_.reset();
}

machine::Program Platform::os_program(const std::string& name, Addr data, std::uint32_t data_stride,
                                      bool limited) const {
  const std::uint8_t tag = name == "base" ? 0x10 : static_cast<std::uint8_t>(0x20 + ids_.size());
  const MemOperand counter = data_stride ? MemOperand::per_cpu(data, data_stride) : MemOperand::at(data);
  ProgramBuilder b(tag);
  b.label("loop").load(2, counter).add(2, 1).store(2, counter);
  for (std::uint32_t i = 5; i < spec_.work_unit_ops; ++i) b.nop();
  b.mark(kMarkWork);
  if (limited) {
    b.dec_branch_nonzero(1, "loop");
    b.label("idle").wfi().branch("idle");
  } else {
    b.branch("loop");
  }
  return b.build();
}

DomainId Platform::domain(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw Error(Errc::UnknownDomain, fmt::format("'{}'", name));
  return it->second;
}

const std::string& Platform::domain_name(DomainId d) const { return vmm_->store().at(d).name; }

DomainKind Platform::kind(const std::string& name) const {
  auto it = kinds_.find(name);
  if (it == kinds_.end()) throw Error(Errc::UnknownDomain, fmt::format("'{}'", name));
  return it->second;
}

Word Platform::table(const std::string& name) const {
  auto it = tables_.find(name);
  if (it == tables_.end()) throw Error(Errc::UnknownDomain, fmt::format("'{}'", name));
  return it->second;
}

AddressRange Platform::ram(const std::string& name) const {
  auto it = rams_.find(name);
  if (it == rams_.end()) throw Error(Errc::UnknownDomain, fmt::format("'{}'", name));
  return it->second;
}

DomainContext Platform::pristine_context(const std::string& name) const {
  auto it = pristine_.find(name);
  if (it == pristine_.end()) throw Error(Errc::UnknownDomain, fmt::format("'{}'", name));
  return it->second;
}

DomainContext Platform::base_context(ProcessorId p) const {
  auto c = pristine_.at("base");
  c.general[0] = p.value;
  return c;
}

std::vector<std::string> Platform::open_domain_names() const {
  std::vector<std::string> out;
  for (const auto& d : spec_.domains) out.push_back(d.name);
  return out;
}

void Platform::reboot(ProcessorId p, const std::string& name) {
  const auto id = domain(name);
  auto& m = *machine_;
  if (auto occ = vmm_->occupant(p)) vmm_->set_occupant(p, std::nullopt);
  m.reset_processor(p);
  vmm_->set_context(id, pristine_.at(name));
  vmm_->boot(p, id);
}

Word Platform::base_progress(ProcessorId p) const {
  return machine_->peek(layout::kBaseData + p.value * layout::kPerCpuData);
}

}  // namespace secpart::harness
