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

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "secpart/common.hpp"

namespace secpart::machine {

// Status register layout (ARM-like).
inline constexpr Word kStatusIrqMask = 0x80;
inline constexpr Word kModeMask = 0x1f;
inline constexpr Word kModeUser = 0x10;
inline constexpr Word kModeIrq = 0x12;
inline constexpr Word kModeSvc = 0x13;

/// Index into DomainContext::banked2 for each exception mode's (sp, lr).
enum class BankedMode : std::size_t { Fiq = 0, Svc, Abt, Und, Irq, Mon };

/// Coprocessor-style system registers restored with a domain.
struct SystemRegisters {
  Word translation_base = 0;  // page table handle, 0 = none
  Word control = 0;
  Word coherence = 0;  // 1 = SMP (coherent) mode, 0 = AMP mode
  Word vector_base = 0;
  Word context_id = 0;

  friend bool operator==(const SystemRegisters&, const SystemRegisters&) = default;
};

/// Every register needed to put an OS back onto a processor: one bank of
/// eight, two banks of five, six banks of two, both status registers, the
/// system registers and the program counter.
struct DomainContext {
  std::array<Word, 8> general{};
  std::array<std::array<Word, 5>, 2> banked5{};
  std::array<std::array<Word, 2>, 6> banked2{};
  Word status_current = 0;
  Word status_saved = 0;
  SystemRegisters system{};
  Addr pc = 0;

  static constexpr std::size_t kWords = 8 + 10 + 12 + 2 + 5 + 1;
  static constexpr std::uint32_t kBytes = kWords * kWordBytes;

  // Word offsets of the fields the switch code reads individually.
  static constexpr std::size_t kStatusCurrentWord = 30;
  static constexpr std::size_t kTranslationBaseWord = 32;
  static constexpr std::size_t kPcWord = 37;

  bool interrupts_masked() const { return (status_current & kStatusIrqMask) != 0; }
  Word& sp(BankedMode m) { return banked2[static_cast<std::size_t>(m)][0]; }
  Word& lr(BankedMode m) { return banked2[static_cast<std::size_t>(m)][1]; }
  Word lr(BankedMode m) const { return banked2[static_cast<std::size_t>(m)][1]; }

  std::array<Word, kWords> to_words() const;
  static DomainContext from_words(std::span<const Word, kWords> words);

  friend bool operator==(const DomainContext&, const DomainContext&) = default;
};

std::string describe(const DomainContext& ctx);

enum class RunState : std::uint8_t { Running, WaitingForInterrupt, Halted };

std::string_view to_string(RunState s);

/// Architectural state of one processor. The register file has exactly the
/// DomainContext layout, so snapshot/restore is lossless.
struct ProcessorState {
  ProcessorId id;
  DomainContext regs;
  RunState run_state = RunState::Halted;

  bool interrupt_mask() const { return regs.interrupts_masked(); }
  void set_interrupt_mask(bool masked) {
    if (masked)
      regs.status_current |= kStatusIrqMask;
    else
      regs.status_current &= ~kStatusIrqMask;
  }

  friend bool operator==(const ProcessorState&, const ProcessorState&) = default;
};

}  // namespace secpart::machine
