#pragma once

// Random test programs and inputs, plus contract-preserving input mutation.

#include <map>
#include <stdexcept>
#include <vector>

#include "relfuzz/input.hpp"
#include "relfuzz/isa.hpp"
#include "relfuzz/leakage_model.hpp"
#include "relfuzz/random.hpp"

namespace relfuzz {

struct GenConfig {
  std::uint64_t rng_seed = 1;
  int max_blocks = kMaxBlocks;
  int max_body_len = kDefaultMaxBodyLen;
  // Body opcodes pick ALU work; JCC vs JMP weights pick non-final terminators.
  std::map<Opcode, double> opcode_weights = {
      {Opcode::ADD, 1.0}, {Opcode::SUB, 1.0},  {Opcode::AND, 1.0}, {Opcode::OR, 1.0},
      {Opcode::XOR, 1.0}, {Opcode::MOVI, 0.5}, {Opcode::CMP, 1.5}, {Opcode::CMOV, 1.0},
      {Opcode::JCC, 4.0}, {Opcode::JMP, 1.0}};
  double mem_op_fraction = 0.4;
  double store_fraction = 0.4;  // share of memory ops that are stores
  SandboxConfig sandbox{};

  void check() const {
    if (max_blocks < 1 || max_blocks > kMaxBlocks) throw std::invalid_argument("max_blocks must be in 1..=5");
    if (max_body_len < 1) throw std::invalid_argument("max_body_len must be >= 1");
    if (mem_op_fraction < 0 || mem_op_fraction > 1) throw std::invalid_argument("mem_op_fraction out of [0,1]");
    double alu = 0;
    for (const auto& [op, w] : opcode_weights) {
      if (w < 0) throw std::invalid_argument("negative opcode weight");
      if (op != Opcode::JCC && op != Opcode::JMP && op != Opcode::LOAD && op != Opcode::STORE) alu += w;
    }
    if (alu <= 0) throw std::invalid_argument("at least one ALU opcode weight must be positive");
  }
};

namespace detail {

inline std::uint64_t input_stream_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x696e70757473ULL); }

inline Opcode pick_alu(const GenConfig& cfg, Rng& rng) {
  double total = 0;
  for (const auto& [op, w] : cfg.opcode_weights)
    if (op != Opcode::JCC && op != Opcode::JMP && op != Opcode::LOAD && op != Opcode::STORE) total += w;
  double x = rng.unit() * total;
  Opcode last = Opcode::ADD;
  for (const auto& [op, w] : cfg.opcode_weights) {
    if (op == Opcode::JCC || op == Opcode::JMP || op == Opcode::LOAD || op == Opcode::STORE || w <= 0) continue;
    last = op;
    if (x < w) return op;
    x -= w;
  }
  return last;
}

inline std::uint64_t random_imm(Rng& rng) {
  switch (rng.below(3)) {
    case 0: return rng.below(16);
    case 1: return rng.below(4096);
    default: return rng.next();
  }
}

inline Reg random_reg(Rng& rng) { return Reg{static_cast<std::uint8_t>(rng.below(kNumRegs))}; }

inline Cond random_cond(Rng& rng) { return static_cast<Cond>(rng.below(6)); }

inline double weight(const GenConfig& cfg, Opcode op) {
  auto it = cfg.opcode_weights.find(op);
  return it == cfg.opcode_weights.end() ? 0.0 : it->second;
}

}  // namespace detail

inline Program generate_program(const GenConfig& cfg) {
  cfg.check();
  using namespace detail;
  Rng rng(cfg.rng_seed);
  const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_blocks)));
  const std::uint64_t mask = cfg.sandbox.mask();
  const double jcc = weight(cfg, Opcode::JCC), jmp = weight(cfg, Opcode::JMP);
  const double p_cond = jcc + jmp > 0 ? jcc / (jcc + jmp) : 0.0;

  Program p;
  for (int b = 0; b < n; ++b) {
    BasicBlock bb;
    bb.id = b;
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_body_len)));
    while (static_cast<int>(bb.body.size()) < len) {
      const bool room = static_cast<int>(bb.body.size()) + 2 <= len;
      if (room && rng.chance(cfg.mem_op_fraction)) {
        Instruction m;
        m.op = rng.chance(cfg.store_fraction) ? Opcode::STORE : Opcode::LOAD;
        m.addr = random_reg(rng);
        m.width = static_cast<std::uint8_t>(1u << rng.below(4));
        if (m.op == Opcode::LOAD) m.dst = random_reg(rng);
        else m.src = Src{false, random_reg(rng), 0};
        Instruction and_mask;
        and_mask.op = Opcode::AND;
        and_mask.dst = m.addr;
        and_mask.src = Src::i(mask);
        bb.body.push_back(and_mask);
        bb.body.push_back(m);
        continue;
      }
      Instruction in;
      in.op = pick_alu(cfg, rng);
      in.dst = random_reg(rng);
      switch (in.op) {
        case Opcode::MOVI: in.src = Src::i(random_imm(rng)); break;
        case Opcode::CMOV:
          in.cc = random_cond(rng);
          in.src = Src{false, random_reg(rng), 0};
          break;
        default:
          in.src = rng.chance(0.5) ? Src{false, random_reg(rng), 0} : Src::i(random_imm(rng));
          break;
      }
      bb.body.push_back(in);
    }
    if (b == n - 1) {
      bb.term = Terminator{Terminator::Kind::Exit, Cond::Z, -1, -1};
    } else {
      const int span = n - 1 - b;
      const int tgt = b + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
      if (rng.chance(p_cond)) {
        int taken = tgt;
        if (taken == b + 1 && span > 1) taken = b + 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span - 1)));
        bb.term = Terminator{Terminator::Kind::Branch, random_cond(rng), taken, b + 1};
      } else {
        bb.term = Terminator{Terminator::Kind::Jump, Cond::Z, tgt, -1};
      }
    }
    p.blocks.push_back(std::move(bb));
  }
  return p;
}

inline TestInput random_input(const SandboxConfig& sb, Rng& rng) {
  TestInput in(sb);
  for (auto& r : in.regs) r = rng.next();
  for (std::size_t i = 0; i < in.memory.size(); i += 8) {
    std::uint64_t v = rng.next();
    for (std::size_t k = 0; k < 8 && i + k < in.memory.size(); ++k) in.memory[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
  }
  return in;
}

inline std::vector<TestInput> generate_inputs(const GenConfig& cfg, int n) {
  if (n < 1) throw std::invalid_argument("generate_inputs needs n >= 1");
  Rng rng(detail::input_stream_seed(cfg.rng_seed));
  std::vector<TestInput> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(random_input(cfg.sandbox, rng));
  return out;
}

struct MutationResult {
  TestInput input;
  int attempts = 0;
  bool fallback = false;  // true: verification never succeeded, input returned unchanged
};

inline constexpr int kMutationAttempts = 8;

// Generate-and-test boosting. Bytes never read by the leakage model are always
// re-randomized. Registers and read bytes that individually leave the trace
// unchanged are re-randomized jointly on the first attempt, then in shrinking
// random subsets; the last attempt keeps all of them. Each candidate is
// verified against the leakage model.
inline MutationResult mutate_preserving_contract(const Program& p, const TestInput& in, ContractId c, Rng& rng) {
  const ContractRun base = run_contract(p, in, c, RunOptions{true, false});
  const ContractTrace& want = base.trace;

  std::vector<bool> is_read(in.memory.size(), false);
  for (std::uint64_t a : base.bytes_read) is_read[a] = true;

  // Probe which registers / read bytes are individually free.
  std::vector<int> free_regs;
  std::vector<std::uint64_t> free_bytes;
  TestInput probe = in;
  if (c.kind != ContractKind::ARCH_SEQ) {
    for (int r = 0; r < kNumRegs; ++r) {
      probe.regs[static_cast<std::size_t>(r)] = rng.next();
      if (collect_contract_trace(p, probe, c) == want) free_regs.push_back(r);
      probe.regs[static_cast<std::size_t>(r)] = in.regs[static_cast<std::size_t>(r)];
    }
    for (std::uint64_t a : base.bytes_read) {
      probe.memory[a] = static_cast<std::uint8_t>(in.memory[a] ^ (1 + rng.below(255)));
      if (collect_contract_trace(p, probe, c) == want) free_bytes.push_back(a);
      probe.memory[a] = in.memory[a];
    }
  }

  MutationResult res{in, 0, false};
  for (int attempt = 1; attempt <= kMutationAttempts; ++attempt) {
    res.attempts = attempt;
    TestInput cand = in;
    for (std::size_t a = 0; a < cand.memory.size(); ++a)
      if (!is_read[a]) cand.memory[a] = static_cast<std::uint8_t>(rng.next());
    if (attempt < kMutationAttempts) {
      const double keep = attempt == 1 ? 1.0 : 1.0 / static_cast<double>(1u << (attempt - 1));
      for (int r : free_regs)
        if (rng.chance(keep)) cand.regs[static_cast<std::size_t>(r)] = rng.next();
      for (std::uint64_t a : free_bytes)
        if (rng.chance(keep)) cand.memory[a] = static_cast<std::uint8_t>(rng.next());
    }
    if (collect_contract_trace(p, cand, c) == want) {
      res.input = std::move(cand);
      return res;
    }
  }
  res.fallback = true;
  return res;
}

}  // namespace relfuzz
