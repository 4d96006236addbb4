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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace secpart {

using Word = std::uint32_t;
using Addr = std::uint32_t;
using Step = std::uint64_t;

inline constexpr std::uint32_t kWordBytes = 4;

/// Processor index on the simulated platform.
struct ProcessorId {
  std::uint32_t value = 0;

  constexpr ProcessorId() = default;
  constexpr explicit ProcessorId(std::uint32_t v) : value(v) {}
  friend constexpr auto operator<=>(ProcessorId, ProcessorId) = default;
};

/// Protection domain identifier (base, operator, trusted, ...).
struct DomainId {
  std::uint32_t value = 0;

  constexpr DomainId() = default;
  constexpr explicit DomainId(std::uint32_t v) : value(v) {}
  friend constexpr auto operator<=>(DomainId, DomainId) = default;
};

/// Half-open physical or virtual address range [base, base + length).
struct AddressRange {
  Addr base = 0;
  std::uint32_t length = 0;

  constexpr std::uint64_t end() const { return std::uint64_t{base} + length; }
  constexpr bool contains(Addr a) const { return a >= base && std::uint64_t{a} < end(); }
  constexpr bool overlaps(const AddressRange& o) const {
    return std::uint64_t{base} < o.end() && std::uint64_t{o.base} < end();
  }
  constexpr bool adjacent_to(const AddressRange& o) const {
    return end() == o.base || o.end() == base;
  }
  friend constexpr bool operator==(const AddressRange&, const AddressRange&) = default;
};

enum class AccessKind : std::uint8_t { Read = 0, Write = 1, Fetch = 2, Swap = 3 };

std::string_view to_string(AccessKind kind);

enum class FaultKind : std::uint8_t { BusError, PageFault, UnexpectedFlow };

std::string_view to_string(FaultKind kind);

/// A fault raised by a simulated access. Faults are values: they are reported
/// through step reports and results, never thrown out of the step loop.
struct Fault {
  FaultKind kind = FaultKind::BusError;
  Addr address = 0;  // physical for BusError, virtual otherwise
  ProcessorId proc;
  Step step = 0;

  friend bool operator==(const Fault&, const Fault&) = default;
};

std::string describe(const Fault& fault);

enum class Errc {
  Config,
  Slot,
  EmptySet,
  Capacity,
  Mapping,
  UnknownDomain,
  NotOpenProcessor,
  Timeout,
  Protocol,
  NoProcessorAvailable,
  EmptyPayload,
  LastProcessor,
  NotLentOut,
  OutOfMemory,
  UnknownId,
  UnknownKey,
  QueueFull,
  NotAttached,
  AlreadyBound,
  NotBound,
  NotOwner,
  Parse,
  Validation,
  FaultRaised,
};

std::string_view to_string(Errc code);

/// Error thrown by host-level API calls whose contract is violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Error carrying the fault that aborted an operation.
class FaultError : public Error {
 public:
  explicit FaultError(const Fault& f) : Error(Errc::FaultRaised, describe(f)), fault_(f) {}
  const Fault& fault() const noexcept { return fault_; }

 private:
  Fault fault_;
};

}  // namespace secpart

template <>
struct std::hash<secpart::ProcessorId> {
  std::size_t operator()(secpart::ProcessorId p) const noexcept { return p.value; }
};

template <>
struct std::hash<secpart::DomainId> {
  std::size_t operator()(secpart::DomainId d) const noexcept { return d.value; }
};
