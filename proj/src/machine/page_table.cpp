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

#include "secpart/machine/page_table.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace secpart::machine {

PageTable::PageTable(std::uint32_t page_size, std::string name) : page_size_(page_size), name_(std::move(name)) {}

void PageTable::map(const Mapping& m) {
  if (m.length == 0 || m.virtual_base % page_size_ || m.physical_base % page_size_ || m.length % page_size_)
    throw Error(Errc::Mapping, fmt::format("mapping v=0x{:08x} p=0x{:08x} len=0x{:x} is not page aligned",
                                          m.virtual_base, m.physical_base, m.length));
  if (m.virtual_range().end() > (std::uint64_t{1} << 32) || m.physical_range().end() > (std::uint64_t{1} << 32))
    throw Error(Errc::Mapping, "mapping wraps the 32-bit address space");
  for (const auto& existing : mappings_) {
    if (existing.virtual_range().overlaps(m.virtual_range()))
      throw Error(Errc::Mapping, fmt::format("{}: virtual 0x{:08x} already mapped", name_, m.virtual_base));
  }
  auto pos = std::lower_bound(mappings_.begin(), mappings_.end(), m,
                              [](const Mapping& a, const Mapping& b) { return a.virtual_base < b.virtual_base; });
  mappings_.insert(pos, m);
}

bool PageTable::unmap(Addr virtual_base) {
  auto it = std::find_if(mappings_.begin(), mappings_.end(),
                         [&](const Mapping& m) { return m.virtual_base == virtual_base; });
  if (it == mappings_.end()) return false;
  mappings_.erase(it);
  return true;
}

const Mapping* PageTable::find(Addr vaddr) const {
  auto it = std::upper_bound(mappings_.begin(), mappings_.end(), vaddr,
                             [](Addr a, const Mapping& m) { return a < m.virtual_base; });
  if (it == mappings_.begin()) return nullptr;
  --it;
  return it->virtual_range().contains(vaddr) ? &*it : nullptr;
}

std::optional<Addr> PageTable::translate(Addr vaddr) const {
  const Mapping* m = find(vaddr);
  if (!m) return std::nullopt;
  return m->physical_base + (vaddr - m->virtual_base);
}

PageTable PageTable::identity(std::uint32_t page_size, AddressRange range, std::string name) {
  PageTable t(page_size, std::move(name));
  t.map({range.base, range.base, range.length});
  return t;
}

}  // namespace secpart::machine
