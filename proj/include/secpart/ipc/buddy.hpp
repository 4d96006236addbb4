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
#include <map>
#include <set>
#include <vector>

#include "secpart/common.hpp"

namespace secpart::ipc {

/// Binary buddy allocator over [0, capacity). Blocks are powers of two no
/// smaller than min_block and aligned to their size; frees coalesce with the
/// buddy block recursively.
class BuddyAllocator {
 public:
  /// Throws Error(Errc::Config) unless capacity and min_block are powers of
  /// two with min_block <= capacity.
  BuddyAllocator(std::uint32_t capacity, std::uint32_t min_block = 32);

  /// Returns the block offset. Throws Error(Errc::OutOfMemory).
  std::uint32_t alloc(std::uint32_t size);
  /// Throws Error(Errc::UnknownId) for an offset that is not a live block.
  void free(std::uint32_t offset);

  std::uint32_t capacity() const { return capacity_; }
  std::uint32_t min_block() const { return min_block_; }
  /// Size of the block a request of `size` bytes receives.
  std::uint32_t block_size(std::uint32_t size) const;
  /// Size of the live block at offset, 0 if none.
  std::uint32_t live_size(std::uint32_t offset) const;
  const std::map<std::uint32_t, std::uint32_t>& live() const { return live_; }
  std::uint64_t free_bytes() const;
  /// Free block offsets per order (order 0 is min_block).
  const std::vector<std::set<std::uint32_t>>& free_lists() const { return free_; }
  bool pristine() const;

 private:
  std::uint32_t order_of(std::uint32_t block) const;
  std::uint32_t size_of(std::uint32_t order) const { return min_block_ << order; }

  std::uint32_t capacity_;
  std::uint32_t min_block_;
  std::vector<std::set<std::uint32_t>> free_;
  std::map<std::uint32_t, std::uint32_t> live_;  // offset -> size
};

}  // namespace secpart::ipc
