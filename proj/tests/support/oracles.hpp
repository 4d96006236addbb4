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

// Independent oracles shared by the unit and acceptance tests.

#pragma once

#include <cstdint>
#include <iterator>
#include <map>
#include <random>
#include <vector>

#include "secpart/bmu/bmu.hpp"

namespace secpart::oracle {

/// Linear scan over a processor's entries, no preprocessing.
inline bool bmu_blocks(const std::vector<bmu::RangeEntry>& entries, bool controller, AccessKind kind, Addr addr) {
  if (controller) return false;
  for (const auto& e : entries) {
    const std::uint64_t lo = e.range.base, hi = lo + e.range.length;
    if (addr < lo || addr >= hi) continue;
    const bool r = e.denied.contains(AccessKind::Read), w = e.denied.contains(AccessKind::Write);
    const bool f = e.denied.contains(AccessKind::Fetch);
    if ((kind == AccessKind::Read && r) || (kind == AccessKind::Write && w) || (kind == AccessKind::Fetch && f) ||
        (kind == AccessKind::Swap && (r || w)))
      return true;
  }
  return false;
}

/// `per_boundary` addresses for every region edge: the edge and its +-1
/// neighbours, then interior and exterior addresses within 4 KB of it.
inline std::vector<Addr> boundary_samples(const std::vector<bmu::PolicyRegion>& regions, std::size_t per_boundary,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Addr> out;
  for (const auto& r : regions) {
    const std::int64_t lo = r.range.base, hi = lo + r.range.length;
    for (std::int64_t edge : {lo, hi}) {
      const std::int64_t span = std::min<std::int64_t>(0x1000, r.range.length);
      for (std::size_t i = 0; i < per_boundary; ++i) {
        std::int64_t a = 0;
        switch (i < 3 ? i : 3 + rng() % 2) {
          case 0: a = edge - 1; break;
          case 1: a = edge; break;
          case 2: a = edge + 1; break;
          case 3: a = edge == lo ? lo + static_cast<std::int64_t>(rng() % span) : hi - 1 - static_cast<std::int64_t>(rng() % span); break;
          default: a = edge == lo ? lo - 1 - static_cast<std::int64_t>(rng() % 0x1000) : hi + static_cast<std::int64_t>(rng() % 0x1000); break;
        }
        if (a < 0 || a > 0xffffffffLL) a = edge == lo ? lo + static_cast<std::int64_t>(rng() % span) : hi - 1;
        out.push_back(static_cast<Addr>(a));
      }
    }
  }
  return out;
}

/// Interval model of a buddy heap: live blocks by offset. A buddy heap with
/// full coalescing can serve a block exactly when some size-aligned span of
/// that size is free here.
class IntervalHeap {
 public:
  IntervalHeap(std::uint32_t capacity, std::uint32_t min_block) : cap_(capacity), min_(min_block) {}

  std::uint32_t block_for(std::uint32_t size) const {
    std::uint32_t b = min_;
    while (b < size) b <<= 1;
    return b;
  }
  bool overlaps(std::uint32_t off, std::uint32_t len) const {
    auto next = live_.lower_bound(off);
    if (next != live_.end() && next->first < off + len) return true;
    if (next != live_.begin() && std::prev(next)->first + std::prev(next)->second > off) return true;
    return false;
  }
  bool can_serve(std::uint32_t size) const {
    const auto b = block_for(size);
    if (b > cap_) return false;
    for (std::uint32_t off = 0; off + b <= cap_; off += b)
      if (!overlaps(off, b)) return true;
    return false;
  }
  void add(std::uint32_t off, std::uint32_t len) { live_[off] = len; }
  void remove(std::uint32_t off) { live_.erase(off); }
  std::uint64_t used() const {
    std::uint64_t u = 0;
    for (const auto& [o, l] : live_) u += l;
    return u;
  }
  const std::map<std::uint32_t, std::uint32_t>& live() const { return live_; }

 private:
  std::uint32_t cap_, min_;
  std::map<std::uint32_t, std::uint32_t> live_;
};

}  // namespace secpart::oracle
