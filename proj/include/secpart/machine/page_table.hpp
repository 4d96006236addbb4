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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "secpart/common.hpp"

namespace secpart::machine {

struct Mapping {
  Addr virtual_base = 0;
  Addr physical_base = 0;
  std::uint32_t length = 0;

  AddressRange virtual_range() const { return {virtual_base, length}; }
  AddressRange physical_range() const { return {physical_base, length}; }
  friend bool operator==(const Mapping&, const Mapping&) = default;
};

/// Linear translation table: page-aligned, virtually disjoint mappings.
class PageTable {
 public:
  explicit PageTable(std::uint32_t page_size = 4096, std::string name = {});

  /// Throws Error(Errc::Mapping) on misalignment or virtual overlap.
  void map(const Mapping& m);
  /// Removes the mapping starting at virtual_base; false if none.
  bool unmap(Addr virtual_base);

  const Mapping* find(Addr vaddr) const;
  std::optional<Addr> translate(Addr vaddr) const;

  std::span<const Mapping> mappings() const { return mappings_; }
  std::uint32_t page_size() const { return page_size_; }
  const std::string& name() const { return name_; }

  /// Identity map of [base, base + length).
  static PageTable identity(std::uint32_t page_size, AddressRange range, std::string name = {});

 private:
  std::uint32_t page_size_;
  std::string name_;
  std::vector<Mapping> mappings_;
};

}  // namespace secpart::machine
