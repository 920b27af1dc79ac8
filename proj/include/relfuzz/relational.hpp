#pragma once

// Contract-violation detection: group inputs by contract trace, compare
// microarchitectural traces inside each group, confirm candidates by re-running
// both inputs from a common starting context, and triage confirmed ones.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "relfuzz/debug_log.hpp"
#include "relfuzz/input.hpp"
#include "relfuzz/leakage_model.hpp"
#include "relfuzz/mutrace.hpp"
#include "relfuzz/uarch_context.hpp"

namespace relfuzz {

struct EquivClass {
  std::uint64_t contract_digest = 0;
  std::vector<std::size_t> members;  // input indices, ascending
};

// Partition by full contract-trace equality; digest is only the first key.
inline std::vector<EquivClass> group_by_contract(const std::vector<ContractTrace>& ct) {
  std::vector<EquivClass> classes;
  std::map<std::uint64_t, std::vector<std::size_t>> by_digest;  // digest -> class ids
  for (std::size_t i = 0; i < ct.size(); ++i) {
    auto& ids = by_digest[ct[i].hash];
    bool placed = false;
    for (std::size_t id : ids)
      if (ct[classes[id].members.front()] == ct[i]) {
        classes[id].members.push_back(i);
        placed = true;
        break;
      }
    if (!placed) {
      ids.push_back(classes.size());
      classes.push_back(EquivClass{ct[i].hash, {i}});
    }
  }
  return classes;
}

struct CandidatePair {
  std::size_t a = 0;  // first representative of one microarchitectural trace value
  std::size_t b = 0;  // first representative of another, a < b
  std::size_t class_id = 0;
  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
  friend auto operator<=>(const CandidatePair&, const CandidatePair&) = default;
};

// One candidate per pair of distinct trace values within a class.
inline std::vector<CandidatePair> detect_pairs(const std::vector<ContractTrace>& ct, const std::vector<MuTrace>& mu) {
  std::vector<CandidatePair> out;
  const auto classes = group_by_contract(ct);
  for (std::size_t cid = 0; cid < classes.size(); ++cid) {
    std::vector<std::size_t> reps;
    for (std::size_t i : classes[cid].members) {
      bool seen = false;
      for (std::size_t r : reps)
        if (mutrace_equal(mu[r], mu[i])) {
          seen = true;
          break;
        }
      if (!seen) reps.push_back(i);
    }
    for (std::size_t x = 0; x < reps.size(); ++x)
      for (std::size_t y = x + 1; y < reps.size(); ++y) out.push_back(CandidatePair{reps[x], reps[y], cid});
  }
  return out;
}

struct Violation {
  Program program;
  ContractId contract;
  std::size_t index_a = 0, index_b = 0;
  TestInput input_a, input_b;
  ContractTrace contract_trace;
  MicroArchContext ctx_a, ctx_b;  // initial contexts of the original runs
  std::optional<MicroArchContext> common_ctx;  // context that confirmed the violation
  MuTrace mutrace_a, mutrace_b;
  MuTraceDiff diff;
  DebugLog log_a, log_b;
  bool validated = false;
  std::vector<std::string> signature_tags;
  std::vector<std::string> rule_errors;
};

inline std::vector<Violation> detect(const Program& p, const std::vector<TestInput>& inputs,
                                     const std::vector<ContractTrace>& ct, const std::vector<MuTrace>& mu,
                                     const std::vector<MicroArchContext>& contexts, ContractId contract = {}) {
  if (inputs.size() != ct.size() || ct.size() != mu.size() || mu.size() != contexts.size())
    throw std::invalid_argument("detect needs aligned lists");
  std::vector<Violation> out;
  for (const CandidatePair& c : detect_pairs(ct, mu)) {
    Violation v;
    v.program = p;
    v.contract = contract;
    v.index_a = c.a;
    v.index_b = c.b;
    v.input_a = inputs[c.a];
    v.input_b = inputs[c.b];
    v.contract_trace = ct[c.a];
    v.ctx_a = contexts[c.a];
    v.ctx_b = contexts[c.b];
    v.mutrace_a = mu[c.a];
    v.mutrace_b = mu[c.b];
    v.diff = mutrace_diff(mu[c.a], mu[c.b]);
    out.push_back(std::move(v));
  }
  return out;
}

// Runs one input from a given starting context; fills the log when non-null.
using RunFn = std::function<MuTrace(const TestInput&, const MicroArchContext&, DebugLog*)>;

// Re-runs both inputs from input_a's starting context, then from input_b's.
// The candidate is confirmed as soon as one common context yields different
// traces: that is a witness (p, i, i', mu) with equal contract traces and
// different microarchitectural traces.
inline Violation& validate(Violation& v, const RunFn& run) {
  v.validated = false;
  for (const MicroArchContext* ctx : {&v.ctx_a, &v.ctx_b}) {
    DebugLog la, lb;
    MuTrace ta = run(v.input_a, *ctx, &la);
    MuTrace tb = run(v.input_b, *ctx, &lb);
    if (!mutrace_equal(ta, tb)) {
      v.validated = true;
      v.common_ctx = *ctx;
      v.mutrace_a = std::move(ta);
      v.mutrace_b = std::move(tb);
      v.diff = mutrace_diff(v.mutrace_a, v.mutrace_b);
      v.log_a = std::move(la);
      v.log_b = std::move(lb);
      break;
    }
    if (ctx == &v.ctx_a && v.ctx_a == v.ctx_b) break;
  }
  return v;
}

// ---- log diffing -----------------------------------------------------------

struct SideBySideRow {
  std::optional<LogRecord> a, b;
  bool highlighted = false;
  bool squashed_a = false, squashed_b = false;
};

struct SideBySideReport {
  std::vector<SideBySideRow> rows;
  std::vector<LogRecord> squashes_a, squashes_b;

  std::size_t highlighted_count() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const SideBySideRow& r) { return r.highlighted; }));
  }
  // A row where both sides issue the same speculative load, which is later
  // squashed, with different addresses.
  bool has_squashed_spec_load_address_diff() const {
    for (const auto& r : rows)
      if (r.highlighted && r.a && r.b && r.a->kind == LogKind::ISSUE && r.a->detail.rfind("load", 0) == 0 &&
          r.a->speculative && r.b->speculative && r.squashed_a && r.squashed_b && r.a->addr != r.b->addr)
        return true;
    return false;
  }
};

namespace detail {

inline bool is_memory_row(const LogRecord& r) {
  switch (r.kind) {
    case LogKind::ISSUE: return r.detail.rfind("load", 0) == 0 || r.detail == "store";
    case LogKind::L1_HIT:
    case LogKind::L1_MISS:
    case LogKind::L1_FILL:
    case LogKind::L1_EVICT:
    case LogKind::TLB_FILL:
    case LogKind::MSHR_STALL:
    case LogKind::EXPOSE:
    case LogKind::EXPOSE_STALL:
    case LogKind::CLEANUP:
    case LogKind::SPLIT_REQ: return true;
    default: return false;
  }
}

struct MemRow {
  LogRecord rec;
  bool squashed = false;
};

inline std::vector<MemRow> memory_rows(const DebugLog& log) {
  std::vector<MemRow> rows;
  for (const LogRecord& r : log.records) {
    if (r.kind == LogKind::SQUASH && r.detail.find("victim") != std::string::npos) {
      for (auto it = rows.rbegin(); it != rows.rend(); ++it)
        if (it->rec.kind == LogKind::ISSUE && it->rec.pc == r.pc && it->rec.addr == r.addr && !it->squashed) {
          it->squashed = true;
          break;
        }
      continue;
    }
    if (is_memory_row(r)) rows.push_back(MemRow{r, false});
  }
  return rows;
}

}  // namespace detail

// Aligns the memory-access records of both logs (LCS over kind and pc) and
// highlights rows that are missing on one side or differ in address or
// speculative flag.
inline SideBySideReport diff_logs(const DebugLog& la, const DebugLog& lb) {
  SideBySideReport rep;
  for (const auto& r : la.records)
    if (r.kind == LogKind::SQUASH) rep.squashes_a.push_back(r);
  for (const auto& r : lb.records)
    if (r.kind == LogKind::SQUASH) rep.squashes_b.push_back(r);
  const auto ra = detail::memory_rows(la), rb = detail::memory_rows(lb);
  const std::size_t n = ra.size(), m = rb.size();
  auto key_eq = [&](std::size_t i, std::size_t j) {
    return ra[i].rec.kind == rb[j].rec.kind && ra[i].rec.pc == rb[j].rec.pc && ra[i].rec.detail == rb[j].rec.detail;
  };
  std::vector<std::vector<std::uint32_t>> L(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      L[i][j] = key_eq(i, j) ? L[i + 1][j + 1] + 1 : std::max(L[i + 1][j], L[i][j + 1]);
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    SideBySideRow row;
    if (i < n && j < m && key_eq(i, j)) {
      row.a = ra[i].rec;
      row.b = rb[j].rec;
      row.squashed_a = ra[i].squashed;
      row.squashed_b = rb[j].squashed;
      row.highlighted = row.a->addr != row.b->addr || row.a->speculative != row.b->speculative;
      ++i, ++j;
    } else if (j >= m || (i < n && L[i + 1][j] >= L[i][j + 1])) {
      row.a = ra[i].rec;
      row.squashed_a = ra[i].squashed;
      row.highlighted = true;
      ++i;
    } else {
      row.b = rb[j].rec;
      row.squashed_b = rb[j].squashed;
      row.highlighted = true;
      ++j;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline SideBySideReport diff_logs(const Violation& v) { return diff_logs(v.log_a, v.log_b); }

// ---- signature rules ---------------------------------------------------------

struct SignatureRule {
  std::string tag;
  std::function<bool(const Violation&)> matches;
};

namespace detail {

inline std::vector<std::uint64_t> differing_lines(const Violation& v, bool side_a) {
  const StateRecords sa = decode_state(v.mutrace_a), sb = decode_state(v.mutrace_b);
  const auto& x = side_a ? sa.lines : sb.lines;
  const auto& y = side_a ? sb.lines : sa.lines;
  std::vector<std::uint64_t> out;
  std::set_difference(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(out));
  return out;
}

inline bool is_store_pc(const Program& p, std::uint64_t pc) {
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    for (std::size_t i = 0; i < p.blocks[b].body.size(); ++i)
      if (pc_of(static_cast<int>(b), static_cast<int>(i)) == pc) return p.blocks[b].body[i].op == Opcode::STORE;
  return false;
}

}  // namespace detail

inline std::vector<SignatureRule> builtin_rules() {
  std::vector<SignatureRule> rules;
  rules.push_back({"SPLIT_REQ_ADJACENT_LINES", [](const Violation& v) {
                     if (v.log_a.count(LogKind::SPLIT_REQ) + v.log_b.count(LogKind::SPLIT_REQ) == 0) return false;
                     for (bool side : {true, false}) {
                       auto d = detail::differing_lines(v, side);
                       if (d.size() == 2 && d[1] - d[0] == kLineSize) return true;
                     }
                     return false;
                   }});
  rules.push_back({"MSHR_STALL", [](const Violation& v) {
                     return v.log_a.count(LogKind::MSHR_STALL) != v.log_b.count(LogKind::MSHR_STALL);
                   }});
  rules.push_back({"EXPOSE_STALL", [](const Violation& v) {
                     return v.log_a.count(LogKind::EXPOSE_STALL) != v.log_b.count(LogKind::EXPOSE_STALL);
                   }});
  rules.push_back({"SPEC_STORE_FILL", [](const Violation& v) {
                     std::vector<std::uint64_t> diff = detail::differing_lines(v, true);
                     auto other = detail::differing_lines(v, false);
                     diff.insert(diff.end(), other.begin(), other.end());
                     for (const DebugLog* log : {&v.log_a, &v.log_b})
                       for (const LogRecord& r : log->records)
                         if (r.kind == LogKind::L1_FILL && r.speculative && detail::is_store_pc(v.program, r.pc) &&
                             std::find(diff.begin(), diff.end(), r.addr) != diff.end())
                           return true;
                     return false;
                   }});
  rules.push_back({"TLB_ONLY_DIFF", [](const Violation& v) {
                     if (v.mutrace_a.format != MuTraceFormat::L1D_TLB) return false;
                     const StateRecords a = decode_state(v.mutrace_a), b = decode_state(v.mutrace_b);
                     return a.pages != b.pages && a.lines == b.lines && a.evicted_sets == b.evicted_sets;
                   }});
  return rules;
}

struct SignaturePartition {
  std::map<std::string, std::vector<std::size_t>> by_tag;  // indices into the input list
  std::vector<std::size_t> untagged;
};

// Tags every violation with each matching rule. A rule that throws is reported
// in the violation's rule_errors and the remaining rules still run.
inline SignaturePartition filter_by_signature(std::vector<Violation>& vs, const std::vector<SignatureRule>& rules) {
  SignaturePartition part;
  for (std::size_t k = 0; k < vs.size(); ++k) {
    Violation& v = vs[k];
    for (const SignatureRule& r : rules) {
      try {
        if (r.matches(v)) {
          if (std::find(v.signature_tags.begin(), v.signature_tags.end(), r.tag) == v.signature_tags.end())
            v.signature_tags.push_back(r.tag);
          part.by_tag[r.tag].push_back(k);
        }
      } catch (const std::exception& e) {
        v.rule_errors.push_back(r.tag + ": " + e.what());
      }
    }
    if (v.signature_tags.empty()) part.untagged.push_back(k);
  }
  return part;
}

}  // namespace relfuzz
