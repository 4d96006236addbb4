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

#include "secpart/machine/context.hpp"

#include <fmt/format.h>

namespace secpart::machine {

std::array<Word, DomainContext::kWords> DomainContext::to_words() const {
  std::array<Word, kWords> w{};
  std::size_t i = 0;
  for (Word g : general) w[i++] = g;
  for (const auto& bank : banked5)
    for (Word v : bank) w[i++] = v;
  for (const auto& bank : banked2)
    for (Word v : bank) w[i++] = v;
  w[i++] = status_current;
  w[i++] = status_saved;
  w[i++] = system.translation_base;
  w[i++] = system.control;
  w[i++] = system.coherence;
  w[i++] = system.vector_base;
  w[i++] = system.context_id;
  w[i++] = pc;
  return w;
}

DomainContext DomainContext::from_words(std::span<const Word, kWords> w) {
  DomainContext c;
  std::size_t i = 0;
  for (Word& g : c.general) g = w[i++];
  for (auto& bank : c.banked5)
    for (Word& v : bank) v = w[i++];
  for (auto& bank : c.banked2)
    for (Word& v : bank) v = w[i++];
  c.status_current = w[i++];
  c.status_saved = w[i++];
  c.system.translation_base = w[i++];
  c.system.control = w[i++];
  c.system.coherence = w[i++];
  c.system.vector_base = w[i++];
  c.system.context_id = w[i++];
  c.pc = w[i++];
  return c;
}

std::string describe(const DomainContext& ctx) {
  return fmt::format("pc=0x{:08x} cpsr=0x{:08x} ttb={} r0=0x{:x} vbar=0x{:08x} coh={}", ctx.pc, ctx.status_current,
                     ctx.system.translation_base, ctx.general[0], ctx.system.vector_base, ctx.system.coherence);
}

std::string_view to_string(RunState s) {
  switch (s) {
    case RunState::Running: return "Running";
    case RunState::WaitingForInterrupt: return "WaitingForInterrupt";
    case RunState::Halted: return "Halted";
  }
  return "?";
}

}  // namespace secpart::machine
