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

// Bus management unit: an access matrix of per-processor deny ranges and the
// access check applied to every bus transaction from a non-controller.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "secpart/common.hpp"
#include "secpart/machine/bus.hpp"

namespace secpart::bmu {

/// Set of access kinds. Swap is never stored; it is denied when either Read
/// or Write is denied since it drives both address channels.
class KindSet {
 public:
  constexpr KindSet() = default;
  constexpr KindSet(std::initializer_list<AccessKind> kinds) {
    for (auto k : kinds) bits_ |= bit(k);
  }

  static constexpr KindSet all() { return KindSet{AccessKind::Read, AccessKind::Write, AccessKind::Fetch}; }
  static constexpr KindSet writes() { return KindSet{AccessKind::Write}; }
  static constexpr KindSet data() { return KindSet{AccessKind::Read, AccessKind::Write}; }

  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool contains(AccessKind k) const {
    if (k == AccessKind::Swap) return (bits_ & (bit(AccessKind::Read) | bit(AccessKind::Write))) != 0;
    return (bits_ & bit(k)) != 0;
  }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr KindSet operator|(KindSet o) const { return from_bits(bits_ | o.bits_); }
  static constexpr KindSet from_bits(std::uint8_t b) {
    KindSet s;
    s.bits_ = b & 0x7;
    return s;
  }
  friend constexpr bool operator==(KindSet, KindSet) = default;

 private:
  static constexpr std::uint8_t bit(AccessKind k) {
    switch (k) {
      case AccessKind::Read: return 1;
      case AccessKind::Write: return 2;
      case AccessKind::Fetch: return 4;
      case AccessKind::Swap: return 3;
    }
    return 0;
  }
  std::uint8_t bits_ = 0;
};

std::string to_string(KindSet s);

struct RangeEntry {
  AddressRange range;
  KindSet denied;

  friend bool operator==(const RangeEntry&, const RangeEntry&) = default;
};

enum class Decision : std::uint8_t { Allowed, Blocked };

inline constexpr std::uint32_t kDefaultEntriesPerProcessor = 8;

/// Per-processor deny entries plus the set of controller processors whose
/// accesses bypass the check and who alone may reconfigure the matrix.
class AccessMatrix {
 public:
  AccessMatrix() = default;
  AccessMatrix(std::uint32_t processor_count, std::set<ProcessorId> controllers,
               std::uint32_t entries_per_processor = kDefaultEntriesPerProcessor);

  /// Pure: never mutates the matrix.
  Decision check(const machine::BusAccess& access) const;

  /// Returns a BusError fault (and leaves the matrix untouched) when the
  /// requester is not a controller. Throws Error(Errc::Slot) for a slot out
  /// of range and Error(Errc::Validation) for an empty range or deny set.
  std::optional<Fault> set_entry(ProcessorId requester, ProcessorId target, std::size_t slot,
                                 const std::optional<RangeEntry>& entry);

  /// Replaces the controller set. Processors entering the set lose their
  /// entries. Throws Error(Errc::EmptySet) for an empty set.
  std::optional<Fault> set_controllers(ProcessorId requester, const std::set<ProcessorId>& next);

  /// Replaces all entries of one processor in a single update. Same authority
  /// rule as set_entry; throws Error(Errc::Capacity) when entries don't fit.
  std::optional<Fault> replace_entries(ProcessorId requester, ProcessorId target,
                                       std::span<const RangeEntry> entries);

  std::span<const std::optional<RangeEntry>> slots(ProcessorId p) const;
  std::vector<RangeEntry> entries(ProcessorId p) const;
  bool is_controller(ProcessorId p) const { return controllers_.contains(p); }
  const std::set<ProcessorId>& controllers() const { return controllers_; }
  std::uint32_t entries_per_processor() const { return capacity_; }
  std::uint32_t processor_count() const { return static_cast<std::uint32_t>(slots_.size()); }

  friend bool operator==(const AccessMatrix&, const AccessMatrix&);

 private:
  struct Segment {
    Addr base;
    std::uint64_t end;
    KindSet denied;
  };
  void rebuild(ProcessorId p);
  static void validate(const RangeEntry& e);

  std::uint32_t capacity_ = kDefaultEntriesPerProcessor;
  std::set<ProcessorId> controllers_;
  std::vector<std::vector<std::optional<RangeEntry>>> slots_;
  // Flattened, sorted, non-overlapping view of each processor's slots.
  std::vector<std::vector<Segment>> segments_;
};

/// Permission a domain holds on a named resource region.
enum class Permission : std::uint8_t { Any, ReadOnly, ExecuteOnly, Prohibited };

std::string_view to_string(Permission p);
Permission parse_permission(std::string_view text);
KindSet denied_kinds(Permission p);

struct PolicyRegion {
  std::string name;
  AddressRange range;
};

/// High-level view: which domain may do what with each resource region.
/// Domains and regions are named; unlisted cells default to Any.
struct DomainPolicy {
  std::string base_domain = "base";
  std::vector<PolicyRegion> regions;
  std::map<std::string, std::map<std::string, Permission>> levels;

  Permission level(const std::string& domain, const std::string& region) const;
  void set(const std::string& domain, const std::string& region, Permission p) { levels[domain][region] = p; }
  const PolicyRegion* region(const std::string& name) const;
};

/// Deny entries realizing `domain`'s column of the policy, with `extra`
/// entries appended. Adjacent ranges with the same deny set are coalesced.
/// Throws Error(Errc::Capacity) when more than `capacity` entries result.
std::vector<RangeEntry> compile_entries(const DomainPolicy& policy, const std::string& domain,
                                        std::span<const RangeEntry> extra = {},
                                        std::uint32_t capacity = kDefaultEntriesPerProcessor);

/// Builds a matrix for a processor→domain assignment. Processors assigned to
/// the policy's base domain become controllers.
AccessMatrix compile_policy(const DomainPolicy& policy,
                            const std::map<ProcessorId, std::string>& assignment,
                            std::uint32_t entries_per_processor = kDefaultEntriesPerProcessor);

/// Four domains on four processors: base on cpu0 using slave_a and range0,
/// operator on cpu1 and trusted on cpu2 sharing slave_b and range1, and
/// untrusted on cpu3.
struct ExamplePolicy {
  DomainPolicy policy;
  std::map<ProcessorId, std::string> assignment;
};

ExamplePolicy four_domain_example();

}  // namespace secpart::bmu
