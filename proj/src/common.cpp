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

#include "secpart/common.hpp"

#include <fmt/format.h>

namespace secpart {

std::string_view to_string(AccessKind kind) {
  switch (kind) {
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::Fetch: return "fetch";
    case AccessKind::Swap: return "swap";
  }
  return "?";
}

std::string_view to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::BusError: return "BusError";
    case FaultKind::PageFault: return "PageFault";
    case FaultKind::UnexpectedFlow: return "UnexpectedFlow";
  }
  return "?";
}

std::string describe(const Fault& f) {
  return fmt::format("{}(0x{:08x}) on cpu{} at step {}", to_string(f.kind), f.address, f.proc.value, f.step);
}

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::Config: return "ConfigError";
    case Errc::Slot: return "SlotError";
    case Errc::EmptySet: return "EmptySet";
    case Errc::Capacity: return "CapacityError";
    case Errc::Mapping: return "MappingError";
    case Errc::UnknownDomain: return "UnknownDomain";
    case Errc::NotOpenProcessor: return "NotOpenProcessor";
    case Errc::Timeout: return "Timeout";
    case Errc::Protocol: return "ProtocolError";
    case Errc::NoProcessorAvailable: return "NoProcessorAvailable";
    case Errc::EmptyPayload: return "EmptyPayload";
    case Errc::LastProcessor: return "LastProcessor";
    case Errc::NotLentOut: return "NotLentOut";
    case Errc::OutOfMemory: return "OutOfMemory";
    case Errc::UnknownId: return "UnknownId";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::QueueFull: return "QueueFull";
    case Errc::NotAttached: return "NotAttached";
    case Errc::AlreadyBound: return "AlreadyBound";
    case Errc::NotBound: return "NotBound";
    case Errc::NotOwner: return "NotOwner";
    case Errc::Parse: return "ParseError";
    case Errc::Validation: return "ValidationError";
    case Errc::FaultRaised: return "FaultRaised";
  }
  return "Error";
}

}  // namespace secpart
