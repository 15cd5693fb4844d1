// Copyright 2026 The bcsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Rule-based synthetic corpora for desk-scale experiments.
//
// Each family is an abstract straight-line program over virtual registers.
// It is lowered once per optimization level with level-specific rules:
//   O0  frame pointer, every virtual register spilled to a stack slot;
//   O1  register allocation (a per-variant permutation of physical names);
//   O2  O1 plus peephole substitutions and swaps of adjacent independent ops;
//   O3  O2 plus unrolling of the loop body and alignment padding;
//   Os  O1 plus size-oriented substitutions.

#ifndef BCSD_SYNTHETIC_HPP
#define BCSD_SYNTHETIC_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "bcsd/corpus.hpp"
#include "bcsd/random.hpp"

namespace bcsd {

struct SyntheticOptions {
  std::size_t families = 200;
  std::size_t variants_per_family = 3;  // distinct levels per family, 1..5
  std::size_t min_ops = 4;
  std::size_t max_ops = 10;
  std::size_t binaries = 8;
  std::uint64_t seed = 1;
  std::string project = "synth";
  std::string function_prefix = "fn";
};

namespace synthetic_detail {

enum class OpKind {
  kArith,         // op dst, src
  kArithImm,      // op dst, imm
  kLoadArg,       // mov dst, [arg]
  kStoreGlobal,   // mov [global], dst
  kSetImm,        // mov dst, imm
  kLea,           // lea dst, [src+imm]
  kCall,          // call target ; result in dst
  kCompareBranch, // cmp dst, imm ; jcc
  kTestBranch,    // test dst, dst ; jcc
  kExtend,        // movzx / movsx dst, src-byte
};

struct Op {
  OpKind kind;
  int dst = 0;
  int src = 0;
  std::string mnemonic;
  std::string imm;
  std::string target;
  bool in_loop = false;
};

inline const std::vector<std::string>& immediates() {
  static const std::vector<std::string> v = {"1",   "2",   "3",   "4",   "5",   "7",
                                             "8",   "0Ah", "0Ch", "10h", "18h", "20h",
                                             "40h", "80h", "0FFh", "100h"};
  return v;
}

// Shared by every generated corpus so that separately generated train and
// test sets draw from one token inventory.
inline const std::vector<std::string>& call_targets() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> names = {"_malloc", "_free", "_memcpy", "_strlen", "_memset",
                                      "_printf", "_strcmp", "_fwrite"};
    Rng rng(0xB1A5);
    for (int i = 0; i < 16; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "sub_%X", 0x401000u + 0x10u * static_cast<unsigned>(
                                                                  uniform_index(rng, 0x2000)));
      names.emplace_back(buf);
    }
    return names;
  }();
  return v;
}

inline const std::vector<std::string>& globals() {
  static const std::vector<std::string> v = {"cs:dword_604010", "cs:dword_604018",
                                             "cs:qword_604020", "cs:dword_604030",
                                             "cs:byte_604040", "cs:dword_604048"};
  return v;
}

inline constexpr std::array<const char*, 8> kArithOps = {"add", "sub",  "xor", "and",
                                                         "or",  "imul", "shl", "sar"};
inline constexpr std::array<const char*, 8> kBranches = {"jz", "jnz", "jl", "jle",
                                                         "jg", "jge", "ja", "jb"};
inline constexpr std::array<const char*, 10> kPhysRegs = {
    "eax", "ebx", "ecx", "edx", "esi", "edi", "r8d", "r9d", "r10d", "r11d"};
inline constexpr int kVirtualRegs = 5;

template <typename C>
const auto& pick(Rng& rng, const C& c) {
  return c[uniform_index(rng, c.size())];
}

inline std::string hex(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%zX", v);
  return buf;
}

inline std::vector<Op> make_program(Rng& rng, std::size_t n_ops) {
  std::vector<Op> ops;
  // Arguments arrive first so the program has live values.
  ops.push_back({OpKind::kLoadArg, 0, 0, "mov", "", "arg_0"});
  const std::size_t loop_begin = 1 + uniform_index(rng, n_ops / 2 + 1);
  const std::size_t loop_len = 2 + uniform_index(rng, 2);
  while (ops.size() < n_ops) {
    Op op;
    const int dst = static_cast<int>(uniform_index(rng, kVirtualRegs));
    const int src = static_cast<int>(uniform_index(rng, kVirtualRegs));
    switch (uniform_index(rng, 10)) {
      case 0:
      case 1: op = {OpKind::kArith, dst, src, pick(rng, kArithOps)}; break;
      case 2:
      case 3: op = {OpKind::kArithImm, dst, 0, pick(rng, kArithOps), pick(rng, immediates())}; break;
      case 4: op = {OpKind::kLoadArg, dst, 0, "mov", "", "arg_" + hex(8 * uniform_index(rng, 4))}; break;
      case 5: op = {OpKind::kStoreGlobal, dst, 0, "mov", "", pick(rng, globals())}; break;
      case 6: op = {OpKind::kLea, dst, src, "lea", pick(rng, immediates())}; break;
      case 7: op = {OpKind::kCall, dst, src, "call", "", pick(rng, call_targets())}; break;
      case 8:
        op = uniform_unit(rng) < 0.5
                 ? Op{OpKind::kCompareBranch, dst, 0, pick(rng, kBranches), pick(rng, immediates())}
                 : Op{OpKind::kTestBranch, dst, 0, pick(rng, kBranches)};
        break;
      default:
        op = uniform_unit(rng) < 0.5 ? Op{OpKind::kSetImm, dst, 0, "mov", pick(rng, immediates())}
                                     : Op{OpKind::kExtend, dst, src,
                                          uniform_unit(rng) < 0.5 ? "movzx" : "movsx"};
    }
    op.in_loop = ops.size() >= loop_begin && ops.size() < loop_begin + loop_len;
    ops.push_back(op);
  }
  return ops;
}

inline std::string byte_reg(const std::string& r) {
  if (r == "eax") return "al";
  if (r == "ebx") return "bl";
  if (r == "ecx") return "cl";
  if (r == "edx") return "dl";
  if (r == "esi") return "sil";
  if (r == "edi") return "dil";
  return r.substr(0, r.size() - 1) + "b";  // r8d -> r8b
}

inline std::string qword_reg(const std::string& r) {
  if (r[0] == 'e') return "r" + r.substr(1);
  return r.substr(0, r.size() - 1);  // r8d -> r8
}

class Lowering {
 public:
  Lowering(OptLevel level, Rng& rng) : level_(level), rng_(rng) {
    std::vector<std::string> regs(kPhysRegs.begin(), kPhysRegs.end());
    for (std::size_t i = regs.size(); i > 1; --i) {
      std::swap(regs[i - 1], regs[uniform_index(rng_, i)]);
    }
    regs_.assign(regs.begin(), regs.begin() + kVirtualRegs);
  }

  std::vector<std::string> lower(const std::vector<Op>& program) {
    std::vector<Op> ops = program;
    if (level_ == OptLevel::O2 || level_ == OptLevel::O3) swap_independent(ops);
    if (level_ == OptLevel::O0) {
      emit("push    rbp");
      emit("mov     rbp, rsp");
      emit("sub     rsp, 20h");
    } else if (level_ != OptLevel::Os) {
      emit("push    rbx");
    }
    std::size_t label = 0;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const bool loop_head = ops[i].in_loop && (i == 0 || !ops[i - 1].in_loop);
      if (loop_head && level_ == OptLevel::O3) emit("nop     dword ptr [rax+00h]");
      lower_op(ops[i], label);
      const bool loop_tail = ops[i].in_loop && (i + 1 == ops.size() || !ops[i + 1].in_loop);
      if (loop_tail && level_ == OptLevel::O3) {
        // Unrolled second copy of the body.
        for (std::size_t j = i + 1; j-- > 0 && ops[j].in_loop;) lower_op(ops[j], label);
      }
      if (loop_tail) {
        emit("cmp     " + reg(ops[i].dst) + ", " + pick(rng_, immediates()));
        emit("jl      short loc_" + hex(0x400 + 0x10 * label++));
      }
    }
    if (level_ == OptLevel::O0) {
      emit("mov     eax, [rbp+var_4]");
      emit("leave");
    } else {
      emit("mov     eax, " + reg(0));
      if (level_ != OptLevel::Os) emit("pop     rbx");
    }
    emit("retn");
    return std::move(out_);
  }

 private:
  std::string reg(int v) const {
    return level_ == OptLevel::O0 ? (v % 2 ? "edx" : "eax") : regs_[v];
  }
  static std::string slot(int v) { return "[rbp+var_" + hex(4 + 4 * v) + "]"; }

  // Pads the mnemonic to eight columns, as disassembly listings do.
  void emit(const std::string& s) {
    const auto space = s.find(' ');
    if (space == std::string::npos) {
      out_.push_back(s);
      return;
    }
    std::string mnemonic = s.substr(0, space);
    const std::string operands = s.substr(s.find_first_not_of(' ', space));
    mnemonic.resize(std::max<std::size_t>(mnemonic.size() + 1, 8), ' ');
    out_.push_back(mnemonic + operands);
  }

  // O0 reloads operands from their stack slots before use and spills after.
  void load(int v) {
    if (level_ == OptLevel::O0) emit("mov     " + reg(v) + ", " + slot(v));
  }
  void spill(int v) {
    if (level_ == OptLevel::O0) emit("mov     " + slot(v) + ", " + reg(v));
  }

  bool peephole() const {
    return level_ == OptLevel::O2 || level_ == OptLevel::O3 || level_ == OptLevel::Os;
  }

  void lower_op(const Op& op, std::size_t& label) {
    const std::string d = reg(op.dst);
    const std::string s = level_ == OptLevel::O0 ? reg(op.dst + 1) : reg(op.src);
    switch (op.kind) {
      case OpKind::kArith:
        load(op.dst);
        if (op.mnemonic == std::string("shl") || op.mnemonic == std::string("sar")) {
          emit(std::string(op.mnemonic) + "     " + d + ", cl");
        } else if (level_ == OptLevel::O0) {
          emit(std::string(op.mnemonic) + "     " + d + ", " + slot(op.src));
        } else {
          emit(std::string(op.mnemonic) + "     " + d + ", " + s);
        }
        spill(op.dst);
        break;
      case OpKind::kArithImm:
        load(op.dst);
        if (peephole() && op.mnemonic == std::string("add") && op.imm == "1") {
          emit("inc     " + d);
        } else if (peephole() && op.mnemonic == std::string("sub") && op.imm == "1") {
          emit("dec     " + d);
        } else if (peephole() && op.mnemonic == std::string("imul") &&
                   (op.imm == "2" || op.imm == "4" || op.imm == "8")) {
          emit("shl     " + d + ", " + (op.imm == "2" ? "1" : op.imm == "4" ? "2" : "3"));
        } else if (op.mnemonic == std::string("imul")) {
          emit("imul    " + d + ", " + d + ", " + op.imm);
        } else {
          emit(op.mnemonic + "     " + d + ", " + op.imm);
        }
        spill(op.dst);
        break;
      case OpKind::kLoadArg:
        if (level_ == OptLevel::O0) {
          emit("mov     eax, [rbp+" + op.target + "]");
          spill(op.dst);
        } else {
          emit("mov     " + d + ", [rsp+" + op.target + "]");
        }
        break;
      case OpKind::kStoreGlobal:
        load(op.dst);
        emit("mov     " + op.target + ", " + d);
        break;
      case OpKind::kSetImm:
        if (peephole() && op.imm == "0") {
          emit("xor     " + d + ", " + d);
        } else if (level_ == OptLevel::Os && op.imm.size() <= 2) {
          emit("push    " + op.imm);
          emit("pop     " + qword_reg(d));
        } else {
          emit("mov     " + d + ", " + op.imm);
        }
        spill(op.dst);
        break;
      case OpKind::kLea:
        if (level_ == OptLevel::O0) {
          emit("mov     " + s + ", " + slot(op.src));
          emit("add     " + s + ", " + op.imm);
          emit("mov     " + d + ", " + s);
        } else {
          emit("lea     " + d + ", [" + qword_reg(s) + "+" + op.imm + "]");
        }
        spill(op.dst);
        break;
      case OpKind::kCall:
        if (level_ == OptLevel::O0) {
          emit("mov     edi, " + slot(op.src).substr(0, 0) + "eax");
        } else {
          emit("mov     edi, " + s);
        }
        emit("call    " + op.target);
        if (level_ != OptLevel::O0 && d != "eax") emit("mov     " + d + ", eax");
        spill(op.dst);
        break;
      case OpKind::kCompareBranch:
      case OpKind::kTestBranch: {
        load(op.dst);
        if (op.kind == OpKind::kCompareBranch) {
          emit("cmp     " + d + ", " + op.imm);
        } else {
          emit("test    " + d + ", " + d);
        }
        std::string jcc = op.mnemonic;
        if (level_ == OptLevel::Os || level_ == OptLevel::O3) {
          // Block layout inverts the condition.
          static const std::array<std::pair<const char*, const char*>, 8> inv = {{
              {"jz", "jnz"}, {"jnz", "jz"}, {"jl", "jge"}, {"jle", "jg"},
              {"jg", "jle"}, {"jge", "jl"}, {"ja", "jbe"}, {"jb", "jnb"}}};
          for (const auto& [a, b] : inv) {
            if (jcc == a) {
              jcc = b;
              break;
            }
          }
        }
        emit(jcc + " short loc_" + hex(0x400 + 0x10 * label++));
        break;
      }
      case OpKind::kExtend:
        if (level_ == OptLevel::O0) {
          emit(op.mnemonic + "   " + d + ", byte ptr " + slot(op.src));
        } else {
          emit(op.mnemonic + "   " + d + ", " + byte_reg(s));
        }
        spill(op.dst);
        break;
    }
  }

  // Swaps adjacent ops that touch disjoint registers and neither branches,
  // calls or stores.
  void swap_independent(std::vector<Op>& ops) {
    auto movable = [](const Op& o) {
      return o.kind == OpKind::kArith || o.kind == OpKind::kArithImm ||
             o.kind == OpKind::kSetImm || o.kind == OpKind::kLea || o.kind == OpKind::kExtend;
    };
    for (std::size_t i = 1; i + 1 < ops.size(); ++i) {
      Op& a = ops[i];
      Op& b = ops[i + 1];
      if (!movable(a) || !movable(b) || a.in_loop != b.in_loop) continue;
      const bool disjoint = a.dst != b.dst && a.dst != b.src && b.dst != a.src;
      if (disjoint && uniform_unit(rng_) < 0.5) std::swap(a, b);
    }
  }

  OptLevel level_;
  Rng& rng_;
  std::vector<std::string> regs_;
  std::vector<std::string> out_;
};

}  // namespace synthetic_detail

inline std::vector<FunctionRecord> generate_synthetic_corpus(const SyntheticOptions& options) {
  using namespace synthetic_detail;
  if (options.variants_per_family == 0 || options.variants_per_family > kAllOptLevels.size()) {
    throw Error("variants_per_family must be in [1, 5]");
  }
  if (options.min_ops < 2 || options.max_ops < options.min_ops) {
    throw Error("op count range must satisfy 2 <= min_ops <= max_ops");
  }
  std::vector<FunctionRecord> records;
  Rng rng(derive_seed(options.seed, 0x5717));
  for (std::size_t f = 0; f < options.families; ++f) {
    const std::size_t n_ops = options.min_ops + uniform_index(rng, options.max_ops - options.min_ops + 1);
    const std::vector<Op> program = make_program(rng, n_ops);

    std::vector<OptLevel> levels(kAllOptLevels.begin(), kAllOptLevels.end());
    for (std::size_t i = levels.size(); i > 1; --i) {
      std::swap(levels[i - 1], levels[uniform_index(rng, i)]);
    }
    levels.resize(options.variants_per_family);
    std::sort(levels.begin(), levels.end());

    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu", options.function_prefix.c_str(), f);
    for (OptLevel level : levels) {
      FunctionRecord r;
      r.project = options.project;
      r.binary = "bin" + std::to_string(f % std::max<std::size_t>(1, options.binaries));
      r.function_name = name;
      r.opt_level = level;
      Lowering lowering(level, rng);
      r.instructions = lowering.lower(program);
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace bcsd

#endif  // BCSD_SYNTHETIC_HPP
