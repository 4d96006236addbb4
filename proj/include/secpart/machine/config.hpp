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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "secpart/common.hpp"

namespace secpart::machine {

/// A bus slave (memory bank or device) occupying a physical range.
struct SlaveRegion {
  std::string name;
  AddressRange range;
};

/// The bus id tag carries two initiator bits, so at most four processors.
inline constexpr std::uint32_t kMaxProcessors = 4;

struct MachineConfig {
  std::uint32_t processor_count = 2;
  std::uint32_t ram_size = 16u << 20;
  std::uint32_t page_size = 4096;
  std::vector<SlaveRegion> slaves;
  /// Physical windows outside RAM that still decode to storage (I/O space).
  std::vector<AddressRange> io_windows;
  std::uint64_t rng_seed = 0;
  /// Micro-ops a host thread may run before its processor's local scheduler
  /// rotates to the next runnable thread.
  std::uint32_t time_slice = 64;

  /// Throws Error(Errc::Config) when an invariant does not hold.
  void validate() const;

  /// The three-processor AMP reference platform.
  static MachineConfig amp3();
  /// The four-processor SMP reference platform.
  static MachineConfig smp4();
};

}  // namespace secpart::machine
