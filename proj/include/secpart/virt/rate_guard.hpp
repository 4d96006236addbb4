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
#include <deque>
#include <map>
#include <algorithm>
#include <set>

#include "secpart/machine/machine.hpp"

namespace secpart::virt {

/// QoS on the interrupt path: at most `limit` IPIs reach a protected
/// processor per sliding window of steps. Excess IPIs are queued in arrival
/// order and released one per step as the window frees up; an IPI is also
/// held back while the same vector is still pending at its target, so
/// deferral never turns into collapse.
class IpiRateGuard : public machine::IpiGate {
 public:
  IpiRateGuard(std::uint32_t limit, Step window, std::set<ProcessorId> protected_targets);

  bool admit(machine::Machine& m, ProcessorId from, ProcessorId to, std::uint32_t vector) override;
  void on_step(machine::Machine& m) override;

  void set_protected(std::set<ProcessorId> targets) { protected_ = std::move(targets); }
  std::size_t deferred() const { return deferred_.size(); }
  std::uint64_t admitted() const { return admitted_; }
  std::uint64_t released() const { return released_; }
  std::uint32_t limit() const { return limit_; }
  Step window() const { return window_; }

 private:
  struct Held {
    ProcessorId from;
    ProcessorId to;
    std::uint32_t vector;
  };
  bool has_room(ProcessorId to, Step now);

  std::uint32_t limit_;
  Step window_;
  std::set<ProcessorId> protected_;
  std::map<ProcessorId, std::deque<Step>> history_;
  std::deque<Held> deferred_;
  std::uint64_t admitted_ = 0;
  std::uint64_t released_ = 0;
};

}  // namespace secpart::virt
