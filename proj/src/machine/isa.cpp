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

#include "secpart/machine/isa.hpp"

#include <bit>

#include <fmt/format.h>

#include "secpart/machine/machine.hpp"

namespace secpart::machine {

namespace {

constexpr Word kCheckSeed = 0x5AC3E1F0;

Word checksum(const std::array<Word, kInstructionWords>& w) {
  Word c = kCheckSeed;
  for (std::size_t i = 0; i + 1 < kInstructionWords; ++i) c ^= std::rotl(w[i], static_cast<int>(i));
  return c;
}

}  // namespace

std::string_view to_string(Opcode op) {
  switch (op) {
    case Opcode::Nop: return "nop";
    case Opcode::Label: return "label";
    case Opcode::Load: return "load";
    case Opcode::Store: return "store";
    case Opcode::StoreImm: return "store_imm";
    case Opcode::Swap: return "swap";
    case Opcode::FetchProbe: return "fetch";
    case Opcode::MovImm: return "mov";
    case Opcode::AddImm: return "add";
    case Opcode::Ipi: return "ipi";
    case Opcode::SetPtb: return "set_ptb";
    case Opcode::SetPtbMem: return "set_ptb_mem";
    case Opcode::SetCoherence: return "set_coherence";
    case Opcode::Mask: return "mask";
    case Opcode::Unmask: return "unmask";
    case Opcode::Wfi: return "wfi";
    case Opcode::Halt: return "halt";
    case Opcode::Branch: return "branch";
    case Opcode::BranchZero: return "bz";
    case Opcode::BranchNonZero: return "bnz";
    case Opcode::DecBranchNonZero: return "dbnz";
    case Opcode::Mark: return "mark";
    case Opcode::Hook: return "hook";
    case Opcode::SaveCtx: return "save_ctx";
    case Opcode::SaveCtxAt: return "save_ctx_at";
    case Opcode::LoadCtx: return "load_ctx";
    case Opcode::Resume: return "resume";
    case Opcode::Reti: return "reti";
    case Opcode::kCount: break;
  }
  return "?";
}

std::array<Word, kInstructionWords> Instruction::encode() const {
  std::array<Word, kInstructionWords> w{};
  w[0] = (kInstructionMagic << 24) | (Word{tag} << 16) | (Word{static_cast<std::uint8_t>(op)} << 8) |
         (Word{base_reg & 0xFu} << 4) | (reg & 0xFu);
  w[1] = a;
  w[2] = stride;
  w[3] = imm;
  w[kInstructionWords - 1] = checksum(w);
  return w;
}

std::optional<Instruction> Instruction::decode(const std::array<Word, kInstructionWords>& w) {
  if ((w[0] >> 24) != kInstructionMagic) return std::nullopt;
  if (w[kInstructionWords - 1] != checksum(w)) return std::nullopt;
  for (std::size_t i = 4; i + 1 < kInstructionWords; ++i)
    if (w[i] != 0) return std::nullopt;
  const auto opcode = static_cast<std::uint8_t>((w[0] >> 8) & 0xFF);
  if (opcode >= static_cast<std::uint8_t>(Opcode::kCount)) return std::nullopt;
  Instruction ins;
  ins.op = static_cast<Opcode>(opcode);
  ins.tag = static_cast<std::uint8_t>((w[0] >> 16) & 0xFF);
  ins.base_reg = static_cast<std::uint8_t>((w[0] >> 4) & 0xF);
  ins.reg = static_cast<std::uint8_t>(w[0] & 0xF);
  ins.a = w[1];
  ins.stride = w[2];
  ins.imm = w[3];
  if (ins.reg >= 8 || (ins.base_reg != kNoBaseReg && ins.base_reg >= 8)) return std::nullopt;
  return ins;
}

Addr LoadedProgram::label(const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end()) throw Error(Errc::Validation, fmt::format("program has no label '{}'", name));
  return it->second;
}

ProgramBuilder& ProgramBuilder::label(const std::string& name) {
  if (!program_.labels.emplace(name, program_.code.size()).second)
    throw Error(Errc::Validation, fmt::format("duplicate label '{}'", name));
  return *this;
}

ProgramBuilder& ProgramBuilder::emit(Instruction ins) {
  ins.tag = program_.tag;
  program_.code.push_back(ins);
  return *this;
}

ProgramBuilder& ProgramBuilder::emit_mem(Opcode op, std::uint8_t r, MemOperand m, Word imm) {
  Instruction ins;
  ins.op = op;
  ins.reg = r;
  ins.base_reg = m.base_reg;
  ins.a = m.addr;
  ins.stride = m.per_cpu_stride;
  ins.imm = imm;
  return emit(ins);
}

ProgramBuilder& ProgramBuilder::nop() { return emit({}); }
ProgramBuilder& ProgramBuilder::marker(Word id) { return emit({Opcode::Label, 0, 0, kNoBaseReg, 0, 0, id}); }
ProgramBuilder& ProgramBuilder::load(std::uint8_t r, MemOperand m) { return emit_mem(Opcode::Load, r, m); }
ProgramBuilder& ProgramBuilder::store(std::uint8_t r, MemOperand m) { return emit_mem(Opcode::Store, r, m); }
ProgramBuilder& ProgramBuilder::store_imm(MemOperand m, Word v) { return emit_mem(Opcode::StoreImm, 0, m, v); }
ProgramBuilder& ProgramBuilder::swap(std::uint8_t r, MemOperand m, Word v) { return emit_mem(Opcode::Swap, r, m, v); }
ProgramBuilder& ProgramBuilder::fetch_probe(std::uint8_t r, MemOperand m) {
  return emit_mem(Opcode::FetchProbe, r, m);
}
ProgramBuilder& ProgramBuilder::mov(std::uint8_t r, Word v) { return emit({Opcode::MovImm, 0, r, kNoBaseReg, 0, 0, v}); }
ProgramBuilder& ProgramBuilder::add(std::uint8_t r, Word v) { return emit({Opcode::AddImm, 0, r, kNoBaseReg, 0, 0, v}); }
ProgramBuilder& ProgramBuilder::ipi(ProcessorId target, std::uint32_t vector) {
  return emit({Opcode::Ipi, 0, 0, kNoBaseReg, target.value, 0, vector});
}
ProgramBuilder& ProgramBuilder::set_ptb(Word table) { return emit({Opcode::SetPtb, 0, 0, kNoBaseReg, 0, 0, table}); }
ProgramBuilder& ProgramBuilder::set_ptb_from(MemOperand m) { return emit_mem(Opcode::SetPtbMem, 0, m); }
ProgramBuilder& ProgramBuilder::set_coherence(bool smp) {
  return emit({Opcode::SetCoherence, 0, 0, kNoBaseReg, 0, 0, smp ? 1u : 0u});
}
ProgramBuilder& ProgramBuilder::mask() { return emit({Opcode::Mask}); }
ProgramBuilder& ProgramBuilder::unmask() { return emit({Opcode::Unmask}); }
ProgramBuilder& ProgramBuilder::wfi() { return emit({Opcode::Wfi}); }
ProgramBuilder& ProgramBuilder::halt() { return emit({Opcode::Halt}); }

ProgramBuilder& ProgramBuilder::branch(const std::string& target) {
  program_.fixups.push_back({program_.code.size(), false, target});
  return emit({Opcode::Branch});
}
ProgramBuilder& ProgramBuilder::branch_zero(std::uint8_t r, const std::string& target) {
  program_.fixups.push_back({program_.code.size(), false, target});
  return emit({Opcode::BranchZero, 0, r});
}
ProgramBuilder& ProgramBuilder::branch_nonzero(std::uint8_t r, const std::string& target) {
  program_.fixups.push_back({program_.code.size(), false, target});
  return emit({Opcode::BranchNonZero, 0, r});
}
ProgramBuilder& ProgramBuilder::dec_branch_nonzero(std::uint8_t r, const std::string& target) {
  program_.fixups.push_back({program_.code.size(), false, target});
  return emit({Opcode::DecBranchNonZero, 0, r});
}
ProgramBuilder& ProgramBuilder::mark(Word id) { return emit({Opcode::Mark, 0, 0, kNoBaseReg, 0, 0, id}); }
ProgramBuilder& ProgramBuilder::hook(Word id) { return emit({Opcode::Hook, 0, 0, kNoBaseReg, 0, 0, id}); }
ProgramBuilder& ProgramBuilder::save_ctx(MemOperand m) { return emit_mem(Opcode::SaveCtx, 0, m); }
ProgramBuilder& ProgramBuilder::save_ctx_at(MemOperand m, const std::string& resume_label) {
  program_.fixups.push_back({program_.code.size(), true, resume_label});
  return emit_mem(Opcode::SaveCtxAt, 0, m);
}
ProgramBuilder& ProgramBuilder::load_ctx(MemOperand m) { return emit_mem(Opcode::LoadCtx, 0, m); }
ProgramBuilder& ProgramBuilder::resume(MemOperand m) { return emit_mem(Opcode::Resume, 0, m); }
ProgramBuilder& ProgramBuilder::reti() { return emit({Opcode::Reti}); }

Program ProgramBuilder::build() const {
  for (const auto& f : program_.fixups)
    if (!program_.labels.contains(f.label))
      throw Error(Errc::Validation, fmt::format("undefined label '{}'", f.label));
  return program_;
}

std::vector<Word> encode_program(const Program& program, Addr virtual_base, std::map<std::string, Addr>* labels_out) {
  auto resolve = [&](const std::string& name) {
    return virtual_base + static_cast<Addr>(program.labels.at(name)) * kInstructionBytes;
  };
  std::vector<Instruction> code = program.code;
  for (const auto& f : program.fixups) {
    if (f.into_imm)
      code[f.index].imm = resolve(f.label);
    else
      code[f.index].a = resolve(f.label);
  }
  std::vector<Word> words;
  words.reserve(code.size() * kInstructionWords);
  for (const auto& ins : code) {
    auto enc = ins.encode();
    words.insert(words.end(), enc.begin(), enc.end());
  }
  if (labels_out) {
    labels_out->clear();
    for (const auto& [name, idx] : program.labels) (*labels_out)[name] = resolve(name);
  }
  return words;
}

LoadedProgram load_program(Machine& machine, const Program& program, Addr physical_base, Addr virtual_base) {
  LoadedProgram out;
  out.tag = program.tag;
  out.virtual_base = virtual_base;
  out.physical_base = physical_base;
  out.size_bytes = program.size_bytes();
  auto words = encode_program(program, virtual_base, &out.labels);
  machine.poke_block(physical_base, words);
  return out;
}

}  // namespace secpart::machine
