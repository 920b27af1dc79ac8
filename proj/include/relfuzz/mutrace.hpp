#pragma once

// Attacker-visible projections of a simulator run.
//
// L1D_TLB payload: sorted 9-byte records (tag, u64 little-endian)
//   'L' resident L1D line inside the sandbox
//   'P' TLB page inside the sandbox
//   'O' (set << 8 | n): n primed out-of-sandbox lines of that set were evicted
// BP_STATE: PHT counters, GHR, BTB.
// MEM_ORDER: (pc, line, is_store) per cache request, speculative ones included.
// BRANCH_PRED_ORDER: (pc, predicted target) per fetched conditional branch.

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relfuzz/input.hpp"
#include "relfuzz/simulator.hpp"

namespace relfuzz {

enum class MuTraceFormat : std::uint8_t { L1D_TLB, BP_STATE, MEM_ORDER, BRANCH_PRED_ORDER };

inline const char* format_name(MuTraceFormat f) {
  switch (f) {
    case MuTraceFormat::L1D_TLB: return "L1D_TLB";
    case MuTraceFormat::BP_STATE: return "BP_STATE";
    case MuTraceFormat::MEM_ORDER: return "MEM_ORDER";
    case MuTraceFormat::BRANCH_PRED_ORDER: return "BRANCH_PRED_ORDER";
  }
  return "?";
}

inline std::optional<MuTraceFormat> parse_format(const std::string& s) {
  for (auto f : {MuTraceFormat::L1D_TLB, MuTraceFormat::BP_STATE, MuTraceFormat::MEM_ORDER, MuTraceFormat::BRANCH_PRED_ORDER})
    if (s == format_name(f)) return f;
  return std::nullopt;
}

struct MuTrace {
  MuTraceFormat format = MuTraceFormat::L1D_TLB;
  std::vector<std::uint8_t> payload;
  friend bool operator==(const MuTrace&, const MuTrace&) = default;
};

class FormatMismatch : public std::invalid_argument {
 public:
  FormatMismatch() : std::invalid_argument("mutrace formats differ") {}
};

namespace detail {

inline void put_rec(std::vector<std::uint8_t>& out, std::uint8_t tag, std::uint64_t v) {
  out.push_back(tag);
  put_u64(out, v);
}

inline std::uint64_t get_u64(const std::vector<std::uint8_t>& b, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[pos + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

}  // namespace detail

inline MuTrace extract(const RunResult& r, MuTraceFormat fmt) {
  MuTrace t{fmt, {}};
  auto& out = t.payload;
  switch (fmt) {
    case MuTraceFormat::L1D_TLB: {
      std::vector<std::pair<std::uint8_t, std::uint64_t>> recs;
      for (std::uint64_t l : r.final_ctx.resident_lines())
        if (l < r.sandbox_size) recs.emplace_back('L', l);
      for (std::uint64_t p : r.final_ctx.tlb())
        if (p < r.sandbox_size / kPageSize) recs.emplace_back('P', p);
      for (std::size_t s = 0; s < r.outside_evictions.size(); ++s)
        if (r.outside_evictions[s] > 0) recs.emplace_back('O', (static_cast<std::uint64_t>(s) << 8) | r.outside_evictions[s]);
      std::sort(recs.begin(), recs.end());
      for (const auto& [tag, v] : recs) detail::put_rec(out, tag, v);
      break;
    }
    case MuTraceFormat::BP_STATE: {
      const Predictors& bp = r.final_ctx.predictors();
      out.insert(out.end(), bp.pht.begin(), bp.pht.end());
      detail::put_u64(out, bp.ghr);
      for (const BtbEntry& e : bp.btb) {
        out.push_back(e.valid ? 1 : 0);
        detail::put_u64(out, e.pc);
        detail::put_u64(out, e.target);
      }
      break;
    }
    case MuTraceFormat::MEM_ORDER:
      for (const MemEvent& e : r.mem_events) {
        detail::put_u64(out, e.pc);
        detail::put_u64(out, e.line);
        out.push_back(e.is_store ? 1 : 0);
      }
      break;
    case MuTraceFormat::BRANCH_PRED_ORDER:
      for (const BranchEvent& e : r.branch_events) {
        detail::put_u64(out, e.pc);
        detail::put_u64(out, e.predicted_target);
      }
      break;
  }
  return t;
}

inline bool mutrace_equal(const MuTrace& a, const MuTrace& b) {
  if (a.format != b.format) throw FormatMismatch();
  return a.payload == b.payload;
}

// Human-readable items of a payload, in payload order.
inline std::vector<std::string> mutrace_items(const MuTrace& t) {
  std::vector<std::string> items;
  const auto& b = t.payload;
  auto hex = [](std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
  };
  switch (t.format) {
    case MuTraceFormat::L1D_TLB:
      for (std::size_t i = 0; i + 9 <= b.size(); i += 9) {
        const std::uint64_t v = detail::get_u64(b, i + 1);
        switch (b[i]) {
          case 'L': items.push_back("line " + hex(v)); break;
          case 'P': items.push_back("tlb page " + hex(v << 12)); break;
          case 'O': items.push_back("set " + std::to_string(v >> 8) + " evicted " + std::to_string(v & 0xff)); break;
          default: items.push_back("? " + hex(v)); break;
        }
      }
      break;
    case MuTraceFormat::BP_STATE: {
      for (int i = 0; i < kPhtSize && static_cast<std::size_t>(i) < b.size(); ++i)
        items.push_back("pht[" + std::to_string(i) + "]=" + std::to_string(b[static_cast<std::size_t>(i)]));
      std::size_t pos = kPhtSize;
      if (pos + 8 <= b.size()) items.push_back("ghr=" + hex(detail::get_u64(b, pos)));
      pos += 8;
      for (int i = 0; pos + 17 <= b.size(); ++i, pos += 17)
        items.push_back("btb[" + std::to_string(i) + "]=" + (b[pos] ? hex(detail::get_u64(b, pos + 1)) + "->" + hex(detail::get_u64(b, pos + 9)) : std::string("-")));
      break;
    }
    case MuTraceFormat::MEM_ORDER:
      for (std::size_t i = 0; i + 17 <= b.size(); i += 17)
        items.push_back(std::string(b[i + 16] ? "store" : "load") + " pc=" + hex(detail::get_u64(b, i)) + " line=" + hex(detail::get_u64(b, i + 8)));
      break;
    case MuTraceFormat::BRANCH_PRED_ORDER:
      for (std::size_t i = 0; i + 16 <= b.size(); i += 16)
        items.push_back("pc=" + hex(detail::get_u64(b, i)) + " predicted=" + hex(detail::get_u64(b, i + 8)));
      break;
  }
  return items;
}

struct MuTraceDiff {
  std::vector<std::string> only_a;
  std::vector<std::string> only_b;
  std::optional<std::size_t> first_divergence;  // ordered formats only
  bool empty() const { return only_a.empty() && only_b.empty() && !first_divergence; }
};

inline MuTraceDiff mutrace_diff(const MuTrace& a, const MuTrace& b) {
  if (a.format != b.format) throw FormatMismatch();
  MuTraceDiff d;
  auto ia = mutrace_items(a), ib = mutrace_items(b);
  const bool ordered = a.format == MuTraceFormat::MEM_ORDER || a.format == MuTraceFormat::BRANCH_PRED_ORDER;
  if (ordered) {
    std::size_t i = 0;
    while (i < ia.size() && i < ib.size() && ia[i] == ib[i]) ++i;
    if (i < ia.size() || i < ib.size()) {
      d.first_divergence = i;
      d.only_a.assign(ia.begin() + static_cast<std::ptrdiff_t>(i), ia.end());
      d.only_b.assign(ib.begin() + static_cast<std::ptrdiff_t>(i), ib.end());
    }
    return d;
  }
  if (a.format == MuTraceFormat::BP_STATE) {
    for (std::size_t i = 0; i < std::min(ia.size(), ib.size()); ++i)
      if (ia[i] != ib[i]) {
        d.only_a.push_back(ia[i]);
        d.only_b.push_back(ib[i]);
      }
    return d;
  }
  std::sort(ia.begin(), ia.end());
  std::sort(ib.begin(), ib.end());
  std::set_difference(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(d.only_a));
  std::set_difference(ib.begin(), ib.end(), ia.begin(), ia.end(), std::back_inserter(d.only_b));
  return d;
}

// L1D_TLB helpers for analysis rules.
struct StateRecords {
  std::vector<std::uint64_t> lines, pages, evicted_sets;
};

inline StateRecords decode_state(const MuTrace& t) {
  StateRecords s;
  if (t.format != MuTraceFormat::L1D_TLB) return s;
  for (std::size_t i = 0; i + 9 <= t.payload.size(); i += 9) {
    const std::uint64_t v = detail::get_u64(t.payload, i + 1);
    if (t.payload[i] == 'L') s.lines.push_back(v);
    else if (t.payload[i] == 'P') s.pages.push_back(v);
    else if (t.payload[i] == 'O') s.evicted_sets.push_back(v);
  }
  return s;
}

}  // namespace relfuzz
