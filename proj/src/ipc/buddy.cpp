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

#include "secpart/ipc/buddy.hpp"

#include <bit>

#include <fmt/format.h>

namespace secpart::ipc {

BuddyAllocator::BuddyAllocator(std::uint32_t capacity, std::uint32_t min_block)
    : capacity_(capacity), min_block_(min_block) {
  if (!std::has_single_bit(capacity) || !std::has_single_bit(min_block) || min_block > capacity)
    throw Error(Errc::Config, fmt::format("buddy capacity {} / min block {} must be powers of two", capacity, min_block));
  free_.resize(order_of(capacity) + 1);
  free_.back().insert(0);
}

std::uint32_t BuddyAllocator::order_of(std::uint32_t block) const {
  return static_cast<std::uint32_t>(std::countr_zero(block) - std::countr_zero(min_block_));
}

std::uint32_t BuddyAllocator::block_size(std::uint32_t size) const {
  if (size <= min_block_) return min_block_;
  if (size > capacity_) return 0;
  return std::bit_ceil(size);
}

std::uint32_t BuddyAllocator::alloc(std::uint32_t size) {
  const std::uint32_t want = block_size(size);
  if (want == 0) throw Error(Errc::OutOfMemory, fmt::format("{} bytes exceed the region", size));
  const std::uint32_t k = order_of(want);
  std::uint32_t j = k;
  while (j < free_.size() && free_[j].empty()) ++j;
  if (j == free_.size()) throw Error(Errc::OutOfMemory, fmt::format("no free block of {} bytes", want));
  std::uint32_t off = *free_[j].begin();
  free_[j].erase(free_[j].begin());
  while (j > k) {
    --j;
    free_[j].insert(off + size_of(j));
  }
  live_[off] = want;
  return off;
}

void BuddyAllocator::free(std::uint32_t offset) {
  auto it = live_.find(offset);
  if (it == live_.end()) throw Error(Errc::UnknownId, fmt::format("no live block at offset {}", offset));
  std::uint32_t k = order_of(it->second);
  live_.erase(it);
  std::uint32_t off = offset;
  while (k + 1 < free_.size()) {
    const std::uint32_t buddy = off ^ size_of(k);
    auto b = free_[k].find(buddy);
    if (b == free_[k].end()) break;
    free_[k].erase(b);
    off = std::min(off, buddy);
    ++k;
  }
  free_[k].insert(off);
}

std::uint32_t BuddyAllocator::live_size(std::uint32_t offset) const {
  auto it = live_.find(offset);
  return it == live_.end() ? 0 : it->second;
}

std::uint64_t BuddyAllocator::free_bytes() const {
  std::uint64_t n = 0;
  for (std::uint32_t k = 0; k < free_.size(); ++k) n += std::uint64_t{free_[k].size()} * size_of(k);
  return n;
}

bool BuddyAllocator::pristine() const {
  if (!live_.empty() || free_.back().size() != 1) return false;
  for (std::size_t k = 0; k + 1 < free_.size(); ++k)
    if (!free_[k].empty()) return false;
  return true;
}

}  // namespace secpart::ipc
