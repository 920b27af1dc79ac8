#pragma once

// Toy sandboxed ISA used by both the leakage model and the microarchitectural
// simulator. Every memory access is SB + offset, where the offset register is
// masked by an AND immediately before the access.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace relfuzz {

inline constexpr int kNumRegs = 8;
inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kLineSize = 64;
inline constexpr int kMaxBlocks = 5;
inline constexpr int kDefaultMaxBodyLen = 12;

struct Reg {
  std::uint8_t index = 0;
  friend bool operator==(Reg, Reg) = default;
};

enum class Opcode : std::uint8_t { ADD, SUB, AND, OR, XOR, MOVI, CMP, CMOV, LOAD, STORE, JCC, JMP };

// Two-flag model: Z (result == 0) and S (bit 63 of the result). L and GE are
// evaluated on S alone, i.e. L == S and GE == NS.
enum class Cond : std::uint8_t { Z, NZ, L, GE, S, NS };

struct Flags {
  bool z = false;
  bool s = false;
  friend bool operator==(Flags, Flags) = default;
};

// Register-or-immediate source operand.
struct Src {
  bool is_imm = false;
  Reg reg{};
  std::uint64_t imm = 0;

  static Src r(std::uint8_t i) { return Src{false, Reg{i}, 0}; }
  static Src i(std::uint64_t v) { return Src{true, Reg{}, v}; }
  friend bool operator==(const Src&, const Src&) = default;
};

// Field usage by opcode:
//   ADD..XOR  dst = dst op src           (sets Z,S)
//   MOVI      dst = src.imm              (flags untouched)
//   CMP       flags from dst - src
//   CMOV      if cc: dst = src.reg
//   LOAD      dst = mem[SB + addr], width bytes, zero-extended
//   STORE     mem[SB + addr] = low width bytes of src.reg
struct Instruction {
  Opcode op = Opcode::MOVI;
  Reg dst{};
  Src src{};
  Cond cc = Cond::Z;
  std::uint8_t width = 8;
  Reg addr{};

  bool is_mem() const { return op == Opcode::LOAD || op == Opcode::STORE; }
  bool writes_reg() const {
    return op == Opcode::ADD || op == Opcode::SUB || op == Opcode::AND || op == Opcode::OR ||
           op == Opcode::XOR || op == Opcode::MOVI || op == Opcode::CMOV || op == Opcode::LOAD;
  }
  bool writes_flags() const {
    return op == Opcode::ADD || op == Opcode::SUB || op == Opcode::AND || op == Opcode::OR ||
           op == Opcode::XOR || op == Opcode::CMP;
  }
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

struct Terminator {
  enum class Kind : std::uint8_t { Exit, Jump, Branch };
  Kind kind = Kind::Exit;
  Cond cc = Cond::Z;
  int target = -1;       // Jump target, or Branch taken target
  int fallthrough = -1;  // Branch not-taken target (rendered as a trailing JMP)
  friend bool operator==(const Terminator&, const Terminator&) = default;
};

struct BasicBlock {
  int id = 0;
  std::vector<Instruction> body;
  Terminator term;
  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

struct Program {
  std::vector<BasicBlock> blocks;
  int entry = 0;
  friend bool operator==(const Program&, const Program&) = default;
};

struct SandboxConfig {
  int page_count = 1;

  // Rounds up to a power of two in 1..=128.
  static SandboxConfig pages(int n) {
    if (n < 1 || n > 128) throw std::invalid_argument("sandbox page_count must be in 1..=128");
    return SandboxConfig{static_cast<int>(std::bit_ceil(static_cast<unsigned>(n)))};
  }
  std::uint64_t size() const { return static_cast<std::uint64_t>(page_count) * kPageSize; }
  std::uint64_t mask() const { return size() - 1; }
  friend bool operator==(const SandboxConfig&, const SandboxConfig&) = default;
};

// Instruction addresses. Index body.size() is the terminator's first
// instruction (Jcc, JMP or EXIT); body.size() + 1 is a Branch's trailing JMP.
constexpr std::uint64_t pc_of(int block, int idx) {
  return 0x1000 + static_cast<std::uint64_t>(block) * 0x100 + static_cast<std::uint64_t>(idx) * 4;
}

constexpr bool cond_holds(Cond cc, Flags f) {
  switch (cc) {
    case Cond::Z: return f.z;
    case Cond::NZ: return !f.z;
    case Cond::L: return f.s;
    case Cond::GE: return !f.s;
    case Cond::S: return f.s;
    case Cond::NS: return !f.s;
  }
  return false;
}

constexpr Flags flags_of(std::uint64_t v) { return Flags{v == 0, (v >> 63) != 0}; }

constexpr std::uint64_t alu(Opcode op, std::uint64_t a, std::uint64_t b) {
  switch (op) {
    case Opcode::ADD: return a + b;
    case Opcode::SUB:
    case Opcode::CMP: return a - b;
    case Opcode::AND: return a & b;
    case Opcode::OR: return a | b;
    case Opcode::XOR: return a ^ b;
    default: return b;
  }
}

// Byte-wise address of an access: wraps inside the sandbox.
constexpr std::uint64_t byte_addr(std::uint64_t offset, int k, std::uint64_t mask) {
  return (offset + static_cast<std::uint64_t>(k)) & mask;
}

constexpr std::uint64_t line_of(std::uint64_t addr) { return addr & ~(kLineSize - 1); }

// True when a width-byte access at offset touches two cache lines.
constexpr bool is_split(std::uint64_t offset, int width, std::uint64_t mask) {
  return line_of(offset & mask) != line_of(byte_addr(offset, width - 1, mask));
}

inline const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::ADD: return "ADD";
    case Opcode::SUB: return "SUB";
    case Opcode::AND: return "AND";
    case Opcode::OR: return "OR";
    case Opcode::XOR: return "XOR";
    case Opcode::MOVI: return "MOVI";
    case Opcode::CMP: return "CMP";
    case Opcode::CMOV: return "CMOV";
    case Opcode::LOAD: return "LOAD";
    case Opcode::STORE: return "STORE";
    case Opcode::JCC: return "JCC";
    case Opcode::JMP: return "JMP";
  }
  return "?";
}

inline const char* cond_name(Cond cc) {
  switch (cc) {
    case Cond::Z: return "Z";
    case Cond::NZ: return "NZ";
    case Cond::L: return "L";
    case Cond::GE: return "GE";
    case Cond::S: return "S";
    case Cond::NS: return "NS";
  }
  return "?";
}

struct ValidationIssue {
  int block = -1;  // -1: program-level
  int instr = -1;  // -1: block-level
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  bool has(const std::string& msg) const {
    return std::any_of(issues.begin(), issues.end(),
                       [&](const ValidationIssue& i) { return i.message == msg; });
  }
};

inline ValidationReport validate_program(const Program& p, const SandboxConfig& sb,
                                         int max_body_len = kDefaultMaxBodyLen) {
  ValidationReport rep;
  auto fail = [&](int b, int i, std::string m) { rep.issues.push_back({b, i, std::move(m)}); };
  const int n = static_cast<int>(p.blocks.size());
  if (n == 0) {
    fail(-1, -1, "no entry block");
    return rep;
  }
  if (n > kMaxBlocks) fail(-1, -1, "too many blocks");
  if (p.entry < 0 || p.entry >= n) fail(-1, -1, "no entry block");

  auto bad_reg = [](Reg r) { return r.index >= kNumRegs; };
  int exits = 0;
  for (int b = 0; b < n; ++b) {
    const BasicBlock& bb = p.blocks[static_cast<std::size_t>(b)];
    if (bb.id != b) fail(b, -1, "block id does not match position");
    if (static_cast<int>(bb.body.size()) > max_body_len) fail(b, -1, "block body too long");
    for (int i = 0; i < static_cast<int>(bb.body.size()); ++i) {
      const Instruction& in = bb.body[static_cast<std::size_t>(i)];
      if (in.op == Opcode::JCC || in.op == Opcode::JMP) {
        fail(b, i, "control flow inside block body");
        continue;
      }
      if (bad_reg(in.dst) || bad_reg(in.addr) || (!in.src.is_imm && bad_reg(in.src.reg)))
        fail(b, i, "bad register");
      if (in.op == Opcode::MOVI && !in.src.is_imm) fail(b, i, "MOVI needs an immediate");
      if ((in.op == Opcode::CMOV || in.op == Opcode::STORE) && in.src.is_imm)
        fail(b, i, "register source required");
      if (in.is_mem()) {
        if (in.width != 1 && in.width != 2 && in.width != 4 && in.width != 8)
          fail(b, i, "bad access width");
        bool masked = false;
        if (i > 0) {
          const Instruction& prev = bb.body[static_cast<std::size_t>(i - 1)];
          masked = prev.op == Opcode::AND && prev.dst == in.addr && prev.src.is_imm &&
                   prev.src.imm == sb.mask();
        }
        if (!masked) fail(b, i, "unmasked memory operand");
      }
    }
    const Terminator& t = bb.term;
    auto check_target = [&](int tgt) {
      if (tgt < 0 || tgt >= n) fail(b, -1, "unknown branch target");
    };
    switch (t.kind) {
      case Terminator::Kind::Exit: ++exits; break;
      case Terminator::Kind::Jump: check_target(t.target); break;
      case Terminator::Kind::Branch:
        check_target(t.target);
        check_target(t.fallthrough);
        break;
    }
  }
  if (exits != 1) fail(-1, -1, "program needs exactly one EXIT block");

  // Cycle check by DFS colouring.
  std::vector<int> colour(static_cast<std::size_t>(n), 0);
  bool cyclic = false;
  auto succ = [&](int b) {
    std::vector<int> s;
    const Terminator& t = p.blocks[static_cast<std::size_t>(b)].term;
    if (t.kind != Terminator::Kind::Exit && t.target >= 0 && t.target < n) s.push_back(t.target);
    if (t.kind == Terminator::Kind::Branch && t.fallthrough >= 0 && t.fallthrough < n)
      s.push_back(t.fallthrough);
    return s;
  };
  auto dfs = [&](auto&& self, int b) -> void {
    colour[static_cast<std::size_t>(b)] = 1;
    for (int s : succ(b)) {
      if (colour[static_cast<std::size_t>(s)] == 1) cyclic = true;
      else if (colour[static_cast<std::size_t>(s)] == 0) self(self, s);
    }
    colour[static_cast<std::size_t>(b)] = 2;
  };
  for (int b = 0; b < n; ++b)
    if (colour[static_cast<std::size_t>(b)] == 0) dfs(dfs, b);
  if (cyclic) fail(-1, -1, "control-flow graph has a cycle");
  return rep;
}

}  // namespace relfuzz
