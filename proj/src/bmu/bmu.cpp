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

#include "secpart/bmu/bmu.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

namespace secpart::bmu {

std::string to_string(KindSet s) {
  std::string out;
  out += s.contains(AccessKind::Read) ? 'R' : '-';
  out += s.contains(AccessKind::Write) ? 'W' : '-';
  out += s.contains(AccessKind::Fetch) ? 'X' : '-';
  return out;
}

AccessMatrix::AccessMatrix(std::uint32_t processor_count, std::set<ProcessorId> controllers,
                           std::uint32_t entries_per_processor)
    : capacity_(entries_per_processor),
      controllers_(std::move(controllers)),
      slots_(processor_count, std::vector<std::optional<RangeEntry>>(entries_per_processor)),
      segments_(processor_count) {
  if (controllers_.empty()) throw Error(Errc::EmptySet, "access matrix needs at least one controller");
  for (auto c : controllers_)
    if (c.value >= processor_count) throw Error(Errc::Validation, fmt::format("controller cpu{} out of range", c.value));
}

Decision AccessMatrix::check(const machine::BusAccess& a) const {
  if (controllers_.contains(a.initiator)) return Decision::Allowed;
  if (a.initiator.value >= segments_.size()) return Decision::Blocked;
  const auto& segs = segments_[a.initiator.value];
  // Last segment whose base is <= the address.
  auto it = std::upper_bound(segs.begin(), segs.end(), a.phys_addr,
                             [](Addr addr, const Segment& s) { return addr < s.base; });
  if (it == segs.begin()) return Decision::Allowed;
  --it;
  if (a.phys_addr < it->end && it->denied.contains(a.kind)) return Decision::Blocked;
  return Decision::Allowed;
}

void AccessMatrix::validate(const RangeEntry& e) {
  if (e.range.length == 0) throw Error(Errc::Validation, "range entry with zero length");
  if (e.denied.empty()) throw Error(Errc::Validation, "range entry that denies nothing");
}

std::optional<Fault> AccessMatrix::set_entry(ProcessorId requester, ProcessorId target, std::size_t slot,
                                             const std::optional<RangeEntry>& entry) {
  if (target.value >= slots_.size()) throw Error(Errc::Validation, fmt::format("no processor {}", target.value));
  if (slot >= capacity_) throw Error(Errc::Slot, fmt::format("slot {} >= {}", slot, capacity_));
  if (entry) validate(*entry);
  if (!controllers_.contains(requester)) return Fault{FaultKind::BusError, 0, requester, 0};
  if (entry && controllers_.contains(target))
    throw Error(Errc::Validation, fmt::format("cpu{} is a controller and cannot hold entries", target.value));
  slots_[target.value][slot] = entry;
  rebuild(target);
  return std::nullopt;
}

std::optional<Fault> AccessMatrix::set_controllers(ProcessorId requester, const std::set<ProcessorId>& next) {
  if (next.empty()) throw Error(Errc::EmptySet, "controller set must not be empty");
  for (auto c : next)
    if (c.value >= slots_.size()) throw Error(Errc::Validation, fmt::format("no processor {}", c.value));
  if (!controllers_.contains(requester)) return Fault{FaultKind::BusError, 0, requester, 0};
  for (auto c : next) {
    if (controllers_.contains(c)) continue;
    std::fill(slots_[c.value].begin(), slots_[c.value].end(), std::nullopt);
    rebuild(c);
  }
  controllers_ = next;
  return std::nullopt;
}

std::optional<Fault> AccessMatrix::replace_entries(ProcessorId requester, ProcessorId target,
                                                   std::span<const RangeEntry> entries) {
  if (target.value >= slots_.size()) throw Error(Errc::Validation, fmt::format("no processor {}", target.value));
  if (entries.size() > capacity_)
    throw Error(Errc::Capacity, fmt::format("{} entries for cpu{}, {} slots", entries.size(), target.value, capacity_));
  for (const auto& e : entries) validate(e);
  if (!controllers_.contains(requester)) return Fault{FaultKind::BusError, 0, requester, 0};
  if (!entries.empty() && controllers_.contains(target))
    throw Error(Errc::Validation, fmt::format("cpu{} is a controller and cannot hold entries", target.value));
  auto& s = slots_[target.value];
  std::fill(s.begin(), s.end(), std::nullopt);
  std::copy(entries.begin(), entries.end(), s.begin());
  rebuild(target);
  return std::nullopt;
}

std::span<const std::optional<RangeEntry>> AccessMatrix::slots(ProcessorId p) const { return slots_.at(p.value); }

std::vector<RangeEntry> AccessMatrix::entries(ProcessorId p) const {
  std::vector<RangeEntry> out;
  for (const auto& s : slots_.at(p.value))
    if (s) out.push_back(*s);
  return out;
}

void AccessMatrix::rebuild(ProcessorId p) {
  // Sweep the entry boundaries; each elementary interval denies the union of
  // the entries covering it.
  std::vector<std::uint64_t> cuts;
  const auto& s = slots_[p.value];
  for (const auto& e : s) {
    if (!e) continue;
    cuts.push_back(e->range.base);
    cuts.push_back(e->range.end());
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<Segment> segs;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    KindSet denied;
    for (const auto& e : s)
      if (e && e->range.base <= cuts[i] && cuts[i] < e->range.end()) denied = denied | e->denied;
    if (denied.empty()) continue;
    if (!segs.empty() && segs.back().end == cuts[i] && segs.back().denied == denied) {
      segs.back().end = cuts[i + 1];
    } else {
      segs.push_back({static_cast<Addr>(cuts[i]), cuts[i + 1], denied});
    }
  }
  segments_[p.value] = std::move(segs);
}

bool operator==(const AccessMatrix& a, const AccessMatrix& b) {
  return a.capacity_ == b.capacity_ && a.controllers_ == b.controllers_ && a.slots_ == b.slots_;
}

// -- policy ------------------------------------------------------------------------

std::string_view to_string(Permission p) {
  switch (p) {
    case Permission::Any: return "Any";
    case Permission::ReadOnly: return "ReadOnly";
    case Permission::ExecuteOnly: return "ExecuteOnly";
    case Permission::Prohibited: return "Prohibited";
  }
  return "?";
}

Permission parse_permission(std::string_view text) {
  std::string k;
  for (char c : text)
    if (c != '_' && c != '-' && c != ' ') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "any") return Permission::Any;
  if (k == "readonly") return Permission::ReadOnly;
  if (k == "executeonly") return Permission::ExecuteOnly;
  if (k == "prohibited" || k == "none") return Permission::Prohibited;
  throw Error(Errc::Validation, fmt::format("unknown permission '{}'", text));
}

KindSet denied_kinds(Permission p) {
  switch (p) {
    case Permission::Any: return {};
    case Permission::ReadOnly: return KindSet::writes();
    case Permission::ExecuteOnly: return KindSet::data();
    case Permission::Prohibited: return KindSet::all();
  }
  return KindSet::all();
}

Permission DomainPolicy::level(const std::string& domain, const std::string& region) const {
  auto d = levels.find(domain);
  if (d == levels.end()) return Permission::Any;
  auto r = d->second.find(region);
  return r == d->second.end() ? Permission::Any : r->second;
}

const PolicyRegion* DomainPolicy::region(const std::string& name) const {
  for (const auto& r : regions)
    if (r.name == name) return &r;
  return nullptr;
}

std::vector<RangeEntry> compile_entries(const DomainPolicy& policy, const std::string& domain,
                                        std::span<const RangeEntry> extra, std::uint32_t capacity) {
  std::vector<RangeEntry> raw;
  for (const auto& region : policy.regions) {
    auto denied = denied_kinds(policy.level(domain, region.name));
    if (!denied.empty() && region.range.length > 0) raw.push_back({region.range, denied});
  }
  raw.insert(raw.end(), extra.begin(), extra.end());
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RangeEntry& a, const RangeEntry& b) { return a.range.base < b.range.base; });
  std::vector<RangeEntry> out;
  for (const auto& e : raw) {
    if (!out.empty() && out.back().denied == e.denied && out.back().range.end() == e.range.base &&
        std::uint64_t{out.back().range.length} + e.range.length <= 0xffffffffull) {
      out.back().range.length += e.range.length;
      continue;
    }
    out.push_back(e);
  }
  if (out.size() > capacity)
    throw Error(Errc::Capacity,
                fmt::format("domain '{}' needs {} entries, {} slots available", domain, out.size(), capacity));
  return out;
}

AccessMatrix compile_policy(const DomainPolicy& policy, const std::map<ProcessorId, std::string>& assignment,
                            std::uint32_t entries_per_processor) {
  if (assignment.empty()) throw Error(Errc::Validation, "empty processor assignment");
  std::set<ProcessorId> controllers;
  for (const auto& [p, d] : assignment)
    if (d == policy.base_domain) controllers.insert(p);
  if (controllers.empty()) throw Error(Errc::EmptySet, "no processor assigned to the base domain");
  const auto count = assignment.rbegin()->first.value + 1;
  AccessMatrix m(count, controllers, entries_per_processor);
  const ProcessorId requester = *controllers.begin();
  for (const auto& [p, d] : assignment) {
    if (controllers.contains(p)) continue;
    auto entries = compile_entries(policy, d, {}, entries_per_processor);
    m.replace_entries(requester, p, entries);
  }
  return m;
}

ExamplePolicy four_domain_example() {
  ExamplePolicy ex;
  auto& pol = ex.policy;
  pol.base_domain = "base";
  pol.regions = {{"range0", {0x00000000, 0x01000000}},
                 {"slave_a", {0x10000000, 0x00010000}},
                 {"slave_b", {0x10010000, 0x00010000}},
                 {"range1", {0x10020000, 0x00010000}}};
  for (const char* d : {"operator", "trusted"}) {
    pol.set(d, "range0", Permission::ReadOnly);
    pol.set(d, "slave_a", Permission::ReadOnly);
  }
  pol.set("untrusted", "range0", Permission::Prohibited);
  pol.set("untrusted", "slave_a", Permission::Prohibited);
  pol.set("untrusted", "slave_b", Permission::ReadOnly);
  pol.set("untrusted", "range1", Permission::ReadOnly);
  ex.assignment = {{ProcessorId{0}, "base"}, {ProcessorId{1}, "operator"}, {ProcessorId{2}, "trusted"},
                   {ProcessorId{3}, "untrusted"}};
  return ex;
}

}  // namespace secpart::bmu
