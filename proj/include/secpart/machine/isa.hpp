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

// Scripted micro-operation programs. Programs live in simulated RAM and are
// fetched through the executing processor's page table, so a translation
// change in the middle of a sequence can derail control flow.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "secpart/common.hpp"

namespace secpart::machine {

class Machine;

enum class Opcode : std::uint8_t {
  Nop = 0,
  Label,          // imm = marker id, traced
  Load,           // r <- [mem]
  Store,          // [mem] <- r
  StoreImm,       // [mem] <- imm
  Swap,           // r <- [mem]; [mem] <- imm, indivisible
  FetchProbe,     // r <- [mem] as an instruction-side access
  MovImm,         // r <- imm
  AddImm,         // r <- r + imm
  Ipi,            // post vector imm to processor a
  SetPtb,         // translation base <- imm
  SetPtbMem,      // translation base <- [mem + translation-base word]
  SetCoherence,   // coherence <- imm
  Mask,
  Unmask,
  Wfi,
  Halt,
  Branch,         // pc <- a
  BranchZero,     // if r == 0: pc <- a
  BranchNonZero,  // if r != 0: pc <- a
  DecBranchNonZero,  // r <- r - 1; if r != 0: pc <- a
  Mark,           // work-unit completion marker, imm = id
  Hook,           // host hook imm
  SaveCtx,        // interrupted context -> [mem]
  SaveCtxAt,      // current context with pc replaced by imm -> [mem]
  LoadCtx,        // all registers but pc, status and translation base <- [mem]
  Resume,         // status, pc <- [mem]
  Reti,           // return from interrupt
  kCount
};

std::string_view to_string(Opcode op);

inline constexpr std::uint32_t kInstructionWords = 8;
inline constexpr std::uint32_t kInstructionBytes = kInstructionWords * kWordBytes;
inline constexpr Word kInstructionMagic = 0xA5;
inline constexpr std::uint8_t kNoBaseReg = 0xF;

/// Memory operand: a + cpu_id * per_cpu_stride (+ r[base_reg]).
struct MemOperand {
  Addr addr = 0;
  std::uint32_t per_cpu_stride = 0;
  std::uint8_t base_reg = kNoBaseReg;

  static MemOperand at(Addr a) { return {a, 0, kNoBaseReg}; }
  static MemOperand per_cpu(Addr a, std::uint32_t stride) { return {a, stride, kNoBaseReg}; }
  static MemOperand reg(std::uint8_t r, Addr offset = 0) { return {offset, 0, r}; }
};

struct Instruction {
  Opcode op = Opcode::Nop;
  std::uint8_t tag = 0;
  std::uint8_t reg = 0;
  std::uint8_t base_reg = kNoBaseReg;
  Word a = 0;
  Word stride = 0;
  Word imm = 0;

  std::array<Word, kInstructionWords> encode() const;
  /// nullopt when the words are not a well-formed instruction.
  static std::optional<Instruction> decode(const std::array<Word, kInstructionWords>& words);
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

/// A relocatable program: instructions plus symbolic branch targets.
class Program {
 public:
  struct Fixup {
    std::size_t index;
    bool into_imm;  // else into `a`
    std::string label;
  };

  std::uint8_t tag = 0;
  std::vector<Instruction> code;
  std::map<std::string, std::size_t> labels;  // label -> instruction index
  std::vector<Fixup> fixups;

  std::uint32_t size_bytes() const { return static_cast<std::uint32_t>(code.size()) * kInstructionBytes; }
};

/// Where a program landed in memory.
struct LoadedProgram {
  std::uint8_t tag = 0;
  Addr virtual_base = 0;
  Addr physical_base = 0;
  std::uint32_t size_bytes = 0;
  std::map<std::string, Addr> labels;

  Addr entry() const { return virtual_base; }
  Addr label(const std::string& name) const;
  AddressRange virtual_range() const { return {virtual_base, size_bytes}; }
  AddressRange physical_range() const { return {physical_base, size_bytes}; }
};

class ProgramBuilder {
 public:
  explicit ProgramBuilder(std::uint8_t tag) { program_.tag = tag; }

  ProgramBuilder& label(const std::string& name);
  ProgramBuilder& nop();
  ProgramBuilder& marker(Word id);
  ProgramBuilder& load(std::uint8_t r, MemOperand m);
  ProgramBuilder& store(std::uint8_t r, MemOperand m);
  ProgramBuilder& store_imm(MemOperand m, Word value);
  ProgramBuilder& swap(std::uint8_t r, MemOperand m, Word value);
  ProgramBuilder& fetch_probe(std::uint8_t r, MemOperand m);
  ProgramBuilder& mov(std::uint8_t r, Word value);
  ProgramBuilder& add(std::uint8_t r, Word value);
  ProgramBuilder& ipi(ProcessorId target, std::uint32_t vector);
  ProgramBuilder& set_ptb(Word table);
  ProgramBuilder& set_ptb_from(MemOperand context_buffer);
  ProgramBuilder& set_coherence(bool smp);
  ProgramBuilder& mask();
  ProgramBuilder& unmask();
  ProgramBuilder& wfi();
  ProgramBuilder& halt();
  ProgramBuilder& branch(const std::string& target);
  ProgramBuilder& branch_zero(std::uint8_t r, const std::string& target);
  ProgramBuilder& branch_nonzero(std::uint8_t r, const std::string& target);
  ProgramBuilder& dec_branch_nonzero(std::uint8_t r, const std::string& target);
  ProgramBuilder& mark(Word id);
  ProgramBuilder& hook(Word id);
  ProgramBuilder& save_ctx(MemOperand buffer);
  ProgramBuilder& save_ctx_at(MemOperand buffer, const std::string& resume_label);
  ProgramBuilder& load_ctx(MemOperand buffer);
  ProgramBuilder& resume(MemOperand buffer);
  ProgramBuilder& reti();

  Program build() const;

 private:
  ProgramBuilder& emit(Instruction ins);
  ProgramBuilder& emit_mem(Opcode op, std::uint8_t r, MemOperand m, Word imm = 0);
  Program program_;
};

/// Resolves labels against `virtual_base` and writes the encoded program to
/// physical memory at `physical_base` (host-side, no bus traffic).
LoadedProgram load_program(Machine& machine, const Program& program, Addr physical_base,
                           Addr virtual_base);

/// Encodes the program for a given virtual base without writing it.
std::vector<Word> encode_program(const Program& program, Addr virtual_base,
                                 std::map<std::string, Addr>* labels_out = nullptr);

}  // namespace secpart::machine
