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

// Reference platform: the address map, policy, OS images and VMM wiring shared
// by scenarios, the attack suite, the benchmarks and the acceptance checks.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "secpart/bmu/bmu.hpp"
#include "secpart/dynpart/dynpart.hpp"
#include "secpart/machine/machine.hpp"
#include "secpart/virt/vmm.hpp"

namespace secpart::harness {

using machine::DomainContext;

/// Physical address map. Everything below 0x02000000 and the slave window are
/// identity mapped in every OS image.
namespace layout {
inline constexpr AddressRange kBaseRam{0x00000000, 0x01000000};
inline constexpr Addr kBaseText = 0x00100000;
inline constexpr Addr kBaseData = 0x00200000;
inline constexpr std::uint32_t kPerCpuData = 0x100;
inline constexpr AddressRange kIpcRegion{0x00800000, 0x00100000};
inline constexpr Addr kToken = 0x00f00000;
inline constexpr Addr kOpenRamBase = 0x01000000;
inline constexpr std::uint32_t kOpenRamSize = 0x00100000;
inline constexpr std::uint32_t kOpenDataOffset = 0x00080000;
inline constexpr std::uint32_t kMaxOpenDomains = 16;
inline constexpr AddressRange kLowWindow{0x00000000, 0x02000000};
inline constexpr AddressRange kSlaveA{0x10000000, 0x00010000};
inline constexpr AddressRange kSlaveB{0x10010000, 0x00010000};
inline constexpr AddressRange kRange1{0x10020000, 0x00010000};
inline constexpr AddressRange kIoWindow{0x10000000, 0x00030000};
inline constexpr std::uint32_t kRamSize = 0x10000000;
}  // namespace layout

/// Marker ids emitted by the OS images.
inline constexpr Word kMarkWork = 1;

enum class DomainKind : std::uint8_t { Base, Operator, Manufacturer, Trusted, Untrusted };

std::string_view to_string(DomainKind k);
/// Throws Error(Errc::Validation) for an unknown kind.
DomainKind parse_domain_kind(std::string_view text);

struct DomainDecl {
  std::string name;
  DomainKind kind = DomainKind::Untrusted;
};

struct PlatformSpec {
  std::uint32_t processors = 4;
  /// Processors running the base OS at boot.
  std::set<ProcessorId> base_members;
  /// Open processors at boot (not base members).
  std::set<ProcessorId> open;
  std::vector<DomainDecl> domains;
  /// Initial occupant of each open processor.
  std::map<ProcessorId, std::string> boot;
  /// Domains whose page table is left without the shared switch window.
  std::set<std::string> skip_unified;
  /// Instructions per work unit, including its marker and loop branch.
  std::uint32_t work_unit_ops = 8;
  /// When set, each base member stops after this many units and idles.
  std::optional<std::uint32_t> base_units;
  std::uint64_t seed = 0;
  Step switch_timeout = virt::kDefaultSwitchTimeout;

  /// One base domain on every processor; open domains are lent later.
  static PlatformSpec smp(std::uint32_t processors, std::vector<DomainDecl> domains);
  /// CPU0 is the base domain, the rest are open processors.
  static PlatformSpec amp(std::uint32_t processors, std::vector<DomainDecl> domains);
};

/// The default access policy: operator, trusted and manufacturer domains may
/// read the base RAM and slave A; the untrusted domain may not touch either
/// and may only read slave B and range 1; no open domain reaches another's
/// RAM.
bmu::DomainPolicy reference_policy(const std::vector<DomainDecl>& domains);

class Platform {
 public:
  /// Throws Error(Errc::Config / Validation) for an inconsistent spec.
  explicit Platform(PlatformSpec spec);
  ~Platform();
  Platform(const Platform&) = delete;
  Platform& operator=(const Platform&) = delete;

  machine::Machine& machine() { return *machine_; }
  virt::Vmm& vmm() { return *vmm_; }
  dynpart::BaseDomainModel& base() { return *base_; }
  dynpart::Partitioner& partitioner() { return *partitioner_; }
  dynpart::ThroughputProbe& probe() { return *probe_; }
  const PlatformSpec& spec() const { return spec_; }
  const bmu::DomainPolicy& policy() const { return policy_; }
  const dynpart::SwitchCodeLayout& switch_layout() const { return switch_layout_; }
  const machine::LoadedProgram& switch_program() const { return switch_program_; }

  /// Throws Error(Errc::UnknownDomain).
  DomainId domain(const std::string& name) const;
  const std::string& domain_name(DomainId d) const;
  DomainKind kind(const std::string& name) const;
  Word table(const std::string& name) const;
  AddressRange ram(const std::string& name) const;
  /// The context a domain boots with (also used to reboot it).
  DomainContext pristine_context(const std::string& name) const;
  DomainContext base_context(ProcessorId p) const;
  std::vector<std::string> open_domain_names() const;

  /// Resets p and boots the named domain's pristine image on it.
  void reboot(ProcessorId p, const std::string& name);
  /// Work units completed by base member p so far (its data word).
  Word base_progress(ProcessorId p) const;

 private:
  machine::Program os_program(const std::string& name, Addr data, std::uint32_t data_stride, bool limited) const;

  PlatformSpec spec_;
  bmu::DomainPolicy policy_;
  dynpart::SwitchCodeLayout switch_layout_;
  std::unique_ptr<machine::Machine> machine_;
  std::map<std::string, Word> tables_;
  std::map<std::string, AddressRange> rams_;
  std::map<std::string, DomainId> ids_;
  std::map<std::string, DomainContext> pristine_;
  std::map<std::string, DomainKind> kinds_;
  machine::LoadedProgram switch_program_;
  std::unique_ptr<virt::Vmm> vmm_;
  std::unique_ptr<dynpart::BaseDomainModel> base_;
  std::unique_ptr<dynpart::Partitioner> partitioner_;
  std::unique_ptr<dynpart::ThroughputProbe> probe_;
};

}  // namespace secpart::harness
