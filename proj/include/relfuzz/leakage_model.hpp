#pragma once

// Executable leakage contracts: a sequential interpreter of the ISA that
// records contract observations, optionally exploring mispredicted branch
// directions (CT_COND).

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "relfuzz/input.hpp"
#include "relfuzz/isa.hpp"

namespace relfuzz {

enum class ContractKind : std::uint8_t { CT_SEQ, CT_COND, ARCH_SEQ };

struct ContractId {
  ContractKind kind = ContractKind::CT_SEQ;
  int window = 64;        // CT_COND speculation window, in instructions
  int nesting_depth = 1;  // CT_COND maximum nested mispredictions

  static ContractId ct_seq() { return {ContractKind::CT_SEQ}; }
  static ContractId ct_cond(int window = 64, int nesting = 1) {
    if (window < 1 || nesting < 1) throw std::invalid_argument("CT_COND needs window >= 1 and nesting >= 1");
    return {ContractKind::CT_COND, window, nesting};
  }
  static ContractId arch_seq() { return {ContractKind::ARCH_SEQ}; }
  friend bool operator==(const ContractId&, const ContractId&) = default;
};

inline std::string contract_name(ContractKind k) {
  switch (k) {
    case ContractKind::CT_SEQ: return "CT_SEQ";
    case ContractKind::CT_COND: return "CT_COND";
    case ContractKind::ARCH_SEQ: return "ARCH_SEQ";
  }
  return "?";
}

inline std::optional<ContractKind> parse_contract_kind(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  for (auto k : {ContractKind::CT_SEQ, ContractKind::CT_COND, ContractKind::ARCH_SEQ})
    if (s == contract_name(k)) return k;
  return std::nullopt;
}

enum class ObsKind : std::uint8_t { PC, LOAD_ADDR, STORE_ADDR, LOAD_VALUE, SPEC_BEGIN, SPEC_END };

inline const char* obs_name(ObsKind k) {
  switch (k) {
    case ObsKind::PC: return "PC";
    case ObsKind::LOAD_ADDR: return "LOAD_ADDR";
    case ObsKind::STORE_ADDR: return "STORE_ADDR";
    case ObsKind::LOAD_VALUE: return "LOAD_VALUE";
    case ObsKind::SPEC_BEGIN: return "SPEC_BEGIN";
    case ObsKind::SPEC_END: return "SPEC_END";
  }
  return "?";
}

struct Observation {
  ObsKind kind = ObsKind::PC;
  std::uint64_t value = 0;
  friend bool operator==(const Observation&, const Observation&) = default;
};

inline constexpr std::uint64_t kEmptyTraceDigest = 0xcbf29ce484222325ULL;  // FNV-1a offset basis

// FNV-1a over (kind, value little-endian) per observation; order-sensitive.
inline std::uint64_t trace_digest(const std::vector<Observation>& obs) {
  std::uint64_t h = kEmptyTraceDigest;
  auto mix = [&](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (const Observation& o : obs) {
    mix(static_cast<std::uint8_t>(o.kind));
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(o.value >> (8 * i)));
  }
  return h;
}

struct ContractTrace {
  std::vector<Observation> observations;
  std::uint64_t hash = kEmptyTraceDigest;

  ContractTrace() = default;
  explicit ContractTrace(std::vector<Observation> obs)
      : observations(std::move(obs)), hash(trace_digest(observations)) {}
  friend bool operator==(const ContractTrace& a, const ContractTrace& b) {
    return a.hash == b.hash && a.observations == b.observations;
  }
};

inline std::uint64_t trace_digest(const ContractTrace& t) { return trace_digest(t.observations); }

class ModelError : public std::runtime_error {
 public:
  enum class Kind { StepCapExceeded, InvalidProgram };
  ModelError(Kind k, const std::string& m) : std::runtime_error(m), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Sandbox memory as the input image plus a sparse write overlay.
class MemoryView {
 public:
  explicit MemoryView(const std::vector<std::uint8_t>& base) : base_(&base), mask_(base.size() - 1) {}

  std::uint8_t read(std::uint64_t a) const {
    a &= mask_;
    auto it = writes_.find(a);
    return it != writes_.end() ? it->second : (*base_)[a];
  }
  void write(std::uint64_t a, std::uint8_t v) { writes_[a & mask_] = v; }

  std::uint64_t load(std::uint64_t offset, int width) const {
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= std::uint64_t{read(byte_addr(offset, k, mask_))} << (8 * k);
    return v;
  }
  void store(std::uint64_t offset, int width, std::uint64_t v) {
    for (int k = 0; k < width; ++k) write(byte_addr(offset, k, mask_), static_cast<std::uint8_t>(v >> (8 * k)));
  }

  std::vector<std::uint8_t> materialize() const {
    std::vector<std::uint8_t> out = *base_;
    for (const auto& [a, v] : writes_) out[a] = v;
    return out;
  }
  std::uint64_t mask() const { return mask_; }

 private:
  const std::vector<std::uint8_t>* base_;
  std::uint64_t mask_;
  std::unordered_map<std::uint64_t, std::uint8_t> writes_;
};

struct ArchState {
  std::array<std::uint64_t, kNumRegs> regs{};
  Flags flags{};
  std::vector<std::uint8_t> memory;
  friend bool operator==(const ArchState&, const ArchState&) = default;
};

struct ContractRun {
  ContractTrace trace;
  ArchState final_state;
  std::vector<std::uint64_t> bytes_read;  // sorted, includes speculative reads
  std::vector<bool> branch_outcomes;      // architectural Jcc outcomes in order
  std::vector<std::uint64_t> mem_offsets; // every effective offset, arch and speculative
  int steps = 0;
};

inline constexpr int kContractStepCap = 10'000;

namespace detail {

class ContractInterpreter {
 public:
  ContractInterpreter(const Program& p, const TestInput& in, ContractId c, bool record_reads, bool keep_state)
      : p_(p), c_(c), mem_(in.memory), record_(record_reads), keep_state_(keep_state) {
    regs_.regs = in.regs;
  }

  ContractRun run() {
    if (p_.blocks.empty() || p_.entry < 0 || p_.entry >= static_cast<int>(p_.blocks.size()))
      throw ModelError(ModelError::Kind::InvalidProgram, "program has no entry block");
    if (c_.kind == ContractKind::ARCH_SEQ)
      for (std::uint64_t r : regs_.regs) obs_.push_back({ObsKind::LOAD_VALUE, r});
    walk(p_.entry, 0, regs_, 0, nullptr);
    ContractRun out;
    out.trace = ContractTrace(std::move(obs_));
    out.final_state.regs = regs_.regs;
    out.final_state.flags = regs_.flags;
    if (keep_state_) out.final_state.memory = mem_.materialize();
    std::sort(reads_.begin(), reads_.end());
    reads_.erase(std::unique(reads_.begin(), reads_.end()), reads_.end());
    out.bytes_read = std::move(reads_);
    out.branch_outcomes = std::move(outcomes_);
    out.mem_offsets = std::move(offsets_);
    out.steps = steps_;
    return out;
  }

 private:
  struct Regs {
    std::array<std::uint64_t, kNumRegs> regs{};
    Flags flags{};
  };

  std::uint8_t read_byte(std::uint64_t a) {
    a &= mem_.mask();
    if (record_) reads_.push_back(a);
    for (auto it = spec_.rbegin(); it != spec_.rend(); ++it) {
      auto f = it->find(a);
      if (f != it->end()) return f->second;
    }
    return mem_.read(a);
  }
  void write_byte(std::uint64_t a, std::uint8_t v) {
    if (spec_.empty()) mem_.write(a, v);
    else spec_.back()[a & mem_.mask()] = v;
  }

  void exec(const Instruction& in, Regs& r) {
    const std::uint64_t mask = mem_.mask();
    auto src = [&] { return in.src.is_imm ? in.src.imm : r.regs[in.src.reg.index]; };
    switch (in.op) {
      case Opcode::ADD:
      case Opcode::SUB:
      case Opcode::AND:
      case Opcode::OR:
      case Opcode::XOR: {
        std::uint64_t v = alu(in.op, r.regs[in.dst.index], src());
        r.regs[in.dst.index] = v;
        r.flags = flags_of(v);
        break;
      }
      case Opcode::CMP: r.flags = flags_of(r.regs[in.dst.index] - src()); break;
      case Opcode::MOVI: r.regs[in.dst.index] = in.src.imm; break;
      case Opcode::CMOV:
        if (cond_holds(in.cc, r.flags)) r.regs[in.dst.index] = r.regs[in.src.reg.index];
        break;
      case Opcode::LOAD: {
        const std::uint64_t off = r.regs[in.addr.index];
        offsets_.push_back(off);
        obs_.push_back({ObsKind::LOAD_ADDR, off});
        std::uint64_t v = 0;
        for (int k = 0; k < in.width; ++k) v |= std::uint64_t{read_byte(byte_addr(off, k, mask))} << (8 * k);
        if (c_.kind == ContractKind::ARCH_SEQ) obs_.push_back({ObsKind::LOAD_VALUE, v});
        r.regs[in.dst.index] = v;
        break;
      }
      case Opcode::STORE: {
        const std::uint64_t off = r.regs[in.addr.index];
        offsets_.push_back(off);
        obs_.push_back({ObsKind::STORE_ADDR, off});
        const std::uint64_t v = r.regs[in.src.reg.index];
        for (int k = 0; k < in.width; ++k) write_byte(byte_addr(off, k, mask), static_cast<std::uint8_t>(v >> (8 * k)));
        break;
      }
      default: throw ModelError(ModelError::Kind::InvalidProgram, "control flow in block body");
    }
  }

  // Returns false when the speculation budget is exhausted.
  bool consume(int* budget) {
    if (budget != nullptr) {
      if (*budget <= 0) return false;
      --*budget;
    } else if (++steps_ > kContractStepCap) {
      throw ModelError(ModelError::Kind::StepCapExceeded, "architectural step cap exceeded");
    }
    return true;
  }

  const BasicBlock& block(int b) const {
    if (b < 0 || b >= static_cast<int>(p_.blocks.size()))
      throw ModelError(ModelError::Kind::InvalidProgram, "branch to unknown block");
    return p_.blocks[static_cast<std::size_t>(b)];
  }

  void explore(int b, int i, Regs r, int depth, int* budget) {
    int fresh = c_.window;
    int* use = budget != nullptr ? budget : &fresh;
    obs_.push_back({ObsKind::SPEC_BEGIN, pc_of(b, i)});
    spec_.emplace_back();
    walk(b, i, r, depth, use);
    spec_.pop_back();
    obs_.push_back({ObsKind::SPEC_END, 0});
  }

  void walk(int b, int i, Regs& r, int depth, int* budget) {
    for (;;) {
      const BasicBlock& bb = block(b);
      const int n = static_cast<int>(bb.body.size());
      if (i < n) {
        if (!consume(budget)) return;
        obs_.push_back({ObsKind::PC, pc_of(b, i)});
        exec(bb.body[static_cast<std::size_t>(i)], r);
        ++i;
        continue;
      }
      const Terminator& t = bb.term;
      if (i == n + 1) {  // trailing JMP of a Branch
        if (!consume(budget)) return;
        obs_.push_back({ObsKind::PC, pc_of(b, i)});
        b = t.fallthrough;
        i = 0;
        continue;
      }
      switch (t.kind) {
        case Terminator::Kind::Exit: return;
        case Terminator::Kind::Jump:
          if (!consume(budget)) return;
          obs_.push_back({ObsKind::PC, pc_of(b, i)});
          b = t.target;
          i = 0;
          break;
        case Terminator::Kind::Branch: {
          if (!consume(budget)) return;
          obs_.push_back({ObsKind::PC, pc_of(b, i)});
          const bool taken = cond_holds(t.cc, r.flags);
          if (budget == nullptr) outcomes_.push_back(taken);
          if (c_.kind == ContractKind::CT_COND && depth < c_.nesting_depth) {
            if (taken) explore(b, n + 1, r, depth + 1, budget);
            else explore(t.target, 0, r, depth + 1, budget);
          }
          if (taken) {
            b = t.target;
            i = 0;
          } else {
            i = n + 1;
          }
          break;
        }
      }
    }
  }

  const Program& p_;
  ContractId c_;
  MemoryView mem_;
  bool record_;
  bool keep_state_;
  Regs regs_;
  std::vector<std::unordered_map<std::uint64_t, std::uint8_t>> spec_;
  std::vector<Observation> obs_;
  std::vector<std::uint64_t> reads_;
  std::vector<bool> outcomes_;
  std::vector<std::uint64_t> offsets_;
  int steps_ = 0;
};

}  // namespace detail

struct RunOptions {
  bool record_reads = false;
  bool keep_memory = false;  // materialize final memory into final_state
};

inline ContractRun run_contract(const Program& p, const TestInput& in, ContractId c, RunOptions opt = {}) {
  return detail::ContractInterpreter(p, in, c, opt.record_reads, opt.keep_memory).run();
}

inline ContractTrace collect_contract_trace(const Program& p, const TestInput& in, ContractId c) {
  return run_contract(p, in, c).trace;
}

// Committed architectural state after sequential execution.
inline ArchState execute_sequential(const Program& p, const TestInput& in) {
  return run_contract(p, in, ContractId::ct_seq(), RunOptions{false, true}).final_state;
}

}  // namespace relfuzz
