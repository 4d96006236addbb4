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

#include "secpart/machine/config.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

namespace secpart::machine {

namespace {

bool inside(const AddressRange& r, const AddressRange& outer) {
  return r.base >= outer.base && r.end() <= outer.end();
}

}  // namespace

void MachineConfig::validate() const {
  if (processor_count < 2)
    throw Error(Errc::Config, fmt::format("platform requires at least 2 processors, got {}", processor_count));
  if (processor_count > kMaxProcessors)
    throw Error(Errc::Config, fmt::format("bus id tag encodes at most {} processors, got {}", kMaxProcessors,
                                          processor_count));
  if (page_size == 0 || !std::has_single_bit(page_size))
    throw Error(Errc::Config, fmt::format("page_size {} is not a power of two", page_size));
  if (ram_size == 0 || ram_size % page_size != 0)
    throw Error(Errc::Config, fmt::format("ram_size {} is not a multiple of page_size", ram_size));
  if (time_slice == 0) throw Error(Errc::Config, "time_slice must be positive");
  for (const auto& w : io_windows) {
    if (w.length == 0) throw Error(Errc::Config, "empty I/O window");
    if (w.base < ram_size) throw Error(Errc::Config, fmt::format("I/O window 0x{:x} overlaps RAM", w.base));
  }
  const AddressRange ram{0, ram_size};
  for (std::size_t i = 0; i < slaves.size(); ++i) {
    const auto& s = slaves[i];
    if (s.range.length == 0) throw Error(Errc::Config, fmt::format("slave {} has an empty range", s.name));
    const bool placed = inside(s.range, ram) || std::any_of(io_windows.begin(), io_windows.end(),
                                                            [&](const AddressRange& w) { return inside(s.range, w); });
    if (!placed) throw Error(Errc::Config, fmt::format("slave {} lies outside RAM and every I/O window", s.name));
    for (std::size_t j = i + 1; j < slaves.size(); ++j) {
      if (s.range.overlaps(slaves[j].range))
        throw Error(Errc::Config, fmt::format("slaves {} and {} overlap", s.name, slaves[j].name));
    }
  }
}

MachineConfig MachineConfig::amp3() {
  MachineConfig c;
  c.processor_count = 3;
  return c;
}

MachineConfig MachineConfig::smp4() {
  MachineConfig c;
  c.processor_count = 4;
  c.ram_size = 256u << 20;
  return c;
}

}  // namespace secpart::machine
