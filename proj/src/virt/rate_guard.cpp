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

#include "secpart/virt/rate_guard.hpp"

namespace secpart::virt {

IpiRateGuard::IpiRateGuard(std::uint32_t limit, Step window, std::set<ProcessorId> protected_targets)
    : limit_(limit), window_(window), protected_(std::move(protected_targets)) {
  if (limit_ == 0) throw Error(Errc::Validation, "IPI rate limit must be positive");
  if (window_ == 0) throw Error(Errc::Validation, "IPI rate window must be positive");
}

bool IpiRateGuard::has_room(ProcessorId to, Step now) {
  auto& h = history_[to];
  while (!h.empty() && h.front() + window_ <= now) h.pop_front();
  return h.size() < limit_;
}

bool IpiRateGuard::admit(machine::Machine& m, ProcessorId from, ProcessorId to, std::uint32_t vector) {
  if (!protected_.contains(to)) return true;
  const bool queued_ahead =
      std::any_of(deferred_.begin(), deferred_.end(), [&](const Held& h) { return h.to == to; });
  if (queued_ahead || !has_room(to, m.now()) || m.pending_ipis(to).test(vector)) {
    deferred_.push_back({from, to, vector});
    return false;
  }
  history_[to].push_back(m.now());
  ++admitted_;
  return true;
}

void IpiRateGuard::on_step(machine::Machine& m) {
  // Only the oldest held IPI of each target is eligible, which keeps the
  // per-target order.
  std::set<ProcessorId> seen;
  for (auto it = deferred_.begin(); it != deferred_.end(); ++it) {
    if (!seen.insert(it->to).second) continue;
    if (!has_room(it->to, m.now()) || m.pending_ipis(it->to).test(it->vector)) continue;
    history_[it->to].push_back(m.now());
    const Held h = *it;
    deferred_.erase(it);
    ++released_;
    m.raise_ipi(h.from, h.to, h.vector);
    return;
  }
}

}  // namespace secpart::virt
