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

// The context-switch handler shared by every OS image. It is entered through
// the interrupt vector table at the start of its text and talks to the master
// through one mailbox block per processor in its data area.

#pragma once

#include <cstdint>

#include "secpart/common.hpp"
#include "secpart/machine/context.hpp"
#include "secpart/machine/isa.hpp"

namespace secpart::virt {

inline constexpr std::uint32_t kVectorSwitch = 1;
inline constexpr std::uint32_t kVectorRemove = 2;
inline constexpr std::uint32_t kVectorMerge = 3;
inline constexpr std::uint32_t kVectorIdc = 4;
inline constexpr std::uint32_t kHandlerVectors = 6;

inline constexpr std::uint8_t kSwitchCodeTag = 0x5c;

// Host hooks invoked by the handler text.
inline constexpr Word kHookSpurious = 0x100;
inline constexpr Word kHookMigrate = 0x101;
inline constexpr Word kHookReroute = 0x102;
inline constexpr Word kHookRejoin = 0x103;
inline constexpr Word kHookCoherence = 0x104;

/// Byte offsets inside one processor's mailbox block. The slave-writable part
/// (previous, ack, go, cmd) comes first so the BMU can protect the rest of
/// the block with a single entry.
namespace ivc {
inline constexpr std::uint32_t kPrevious = 0x000;
inline constexpr std::uint32_t kAck = 0x098;
inline constexpr std::uint32_t kGo = 0x09c;
inline constexpr std::uint32_t kCmd = 0x0a0;
inline constexpr std::uint32_t kWritableEnd = 0x0c0;
inline constexpr std::uint32_t kNext = 0x0c0;
inline constexpr std::uint32_t kBaseBuffer = 0x158;
inline constexpr std::uint32_t kBlockSize = 0x200;
static_assert(kNext + machine::DomainContext::kBytes <= kBaseBuffer);
static_assert(kBaseBuffer + machine::DomainContext::kBytes <= kBlockSize);
static_assert(kCmd + kWordBytes <= kWritableEnd);
}  // namespace ivc

/// Where the handler text and the mailbox blocks live, both physically and
/// at the virtual window every OS maps them at.
struct HandlerLayout {
  Addr text_paddr = 0;
  Addr text_vaddr = 0;
  std::uint32_t text_size = 0x2000;
  Addr data_paddr = 0;
  Addr data_vaddr = 0;
  std::uint32_t data_size = 0x1000;

  Addr block_vaddr(ProcessorId p) const { return data_vaddr + p.value * ivc::kBlockSize; }
  Addr block_paddr(ProcessorId p) const { return data_paddr + p.value * ivc::kBlockSize; }
  Addr vaddr(ProcessorId p, std::uint32_t offset) const { return block_vaddr(p) + offset; }
  Addr paddr(ProcessorId p, std::uint32_t offset) const { return block_paddr(p) + offset; }
  AddressRange text_range() const { return {text_paddr, text_size}; }
  AddressRange data_range() const { return {data_paddr, data_size}; }
  /// Vector base every OS context must carry to enter the handler.
  Addr vector_base() const { return text_vaddr; }
};

/// Builds the handler: vector table, switch path, and the hot-remove and
/// hot-add paths used by dynamic partitioning. Label "hotadd" marks the point
/// a separated processor's saved base context resumes at.
machine::Program build_switch_program(const HandlerLayout& layout);

}  // namespace secpart::virt
