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
#include <utility>

#include "secpart/common.hpp"

namespace secpart::machine {

/// One transaction on the system bus as seen by the access checker: the
/// 32-bit address plus a 4-bit id naming the initiator and the access type.
struct BusAccess {
  ProcessorId initiator;
  AccessKind kind = AccessKind::Read;
  Addr phys_addr = 0;
  std::uint8_t width = kWordBytes;
  std::uint8_t id_tag = 0;

  /// Bits [3:2] initiator, bits [1:0] access kind.
  static constexpr std::uint8_t encode_tag(ProcessorId initiator, AccessKind kind) {
    return static_cast<std::uint8_t>(((initiator.value & 0x3u) << 2) |
                                     (static_cast<std::uint8_t>(kind) & 0x3u));
  }
  static constexpr std::pair<ProcessorId, AccessKind> decode_tag(std::uint8_t tag) {
    return {ProcessorId{(tag >> 2) & 0x3u}, static_cast<AccessKind>(tag & 0x3u)};
  }

  static constexpr BusAccess make(ProcessorId initiator, AccessKind kind, Addr phys) {
    return BusAccess{initiator, kind, phys, kWordBytes, encode_tag(initiator, kind)};
  }
};

}  // namespace secpart::machine
