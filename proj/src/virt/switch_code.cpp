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

#include "secpart/virt/switch_code.hpp"

namespace secpart::virt {

using machine::MemOperand;
using machine::ProgramBuilder;

machine::Program build_switch_program(const HandlerLayout& layout) {
  auto slot = [&](std::uint32_t offset) { return MemOperand::per_cpu(layout.data_vaddr + offset, ivc::kBlockSize); };
  ProgramBuilder b(kSwitchCodeTag);

  // Vector table: one 8-instruction slot per vector.
  const char* targets[kHandlerVectors] = {nullptr, "switch", "remove", "merge", nullptr, nullptr};
  for (std::uint32_t v = 0; v < kHandlerVectors; ++v) {
    if (targets[v])
      b.branch(targets[v]);
    else
      b.reti();
    for (std::uint32_t i = 1; i < machine::kInstructionWords; ++i) b.nop();
  }

  // Context switch requested by the master.
  // The interrupted context is saved before any register is touched.
  b.label("switch")
      .save_ctx(slot(ivc::kPrevious))
      .load(0, slot(ivc::kCmd))
      .branch_zero(0, "spurious")
      .store_imm(slot(ivc::kAck), 1)
      .label("wait")
      .load(0, slot(ivc::kGo))
      .branch_zero(0, "wait")
      .store_imm(slot(ivc::kGo), 0)
      .store_imm(slot(ivc::kCmd), 0)
      .load_ctx(slot(ivc::kNext))
      .set_ptb_from(slot(ivc::kNext))
      .store_imm(slot(ivc::kAck), 2)
      .resume(slot(ivc::kNext));

  b.label("spurious").hook(kHookSpurious).load_ctx(slot(ivc::kPrevious)).reti();

  // Hot remove: leave the SMP OS, park its context with the program counter
  // rewritten to the hot-add sequence, then load the open domain.
  b.label("remove")
      .hook(kHookMigrate)
      .hook(kHookReroute)
      .set_coherence(false)
      .hook(kHookCoherence)
      .save_ctx_at(slot(ivc::kBaseBuffer), "hotadd")
      .store_imm(slot(ivc::kAck), 1)
      .branch("wait");

  // Hot add: the base context resumes here as if woken from the idle wait.
  b.label("hotadd")
      .set_coherence(true)
      .hook(kHookCoherence)
      .hook(kHookRejoin)
      .store_imm(slot(ivc::kAck), 3)
      .reti();

  // Merge: leave the open domain and resume the parked base context.
  b.label("merge")
      .save_ctx(slot(ivc::kPrevious))
      .store_imm(slot(ivc::kAck), 1)
      .label("merge_wait")
      .load(0, slot(ivc::kGo))
      .branch_zero(0, "merge_wait")
      .store_imm(slot(ivc::kGo), 0)
      .load_ctx(slot(ivc::kBaseBuffer))
      .set_ptb_from(slot(ivc::kBaseBuffer))
      .store_imm(slot(ivc::kAck), 2)
      .resume(slot(ivc::kBaseBuffer));

  return b.build();
}

}  // namespace secpart::virt
