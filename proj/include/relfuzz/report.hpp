#pragma once

// Versioned JSON documents: one per confirmed violation, plus text rendering
// of the side-by-side log comparison. Layout is documented in docs/formats.md.

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relfuzz/asm.hpp"
#include "relfuzz/relational.hpp"
#include "relfuzz/setup.hpp"

namespace relfuzz {

inline constexpr int kViolationSchemaVersion = 1;
inline constexpr int kSummarySchemaVersion = 1;
inline constexpr std::size_t kLogExcerptRows = 64;

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::size_t pos = 0;
  const std::uint64_t v = std::stoull(s, &pos, 0);
  if (pos != s.size()) throw std::invalid_argument("bad integer '" + s + "'");
  return v;
}

inline nlohmann::json input_json(const TestInput& in) {
  nlohmann::json regs = nlohmann::json::array();
  for (std::uint64_t r : in.regs) regs.push_back(hex64(r));
  return nlohmann::json{{"regs", regs}, {"memory", to_hex(in.memory)}};
}

inline TestInput input_from_json(const nlohmann::json& j, const SandboxConfig& sb) {
  TestInput in(sb);
  const auto& regs = j.at("regs");
  if (regs.size() != kNumRegs) throw std::invalid_argument("input needs 8 registers");
  for (std::size_t i = 0; i < kNumRegs; ++i) in.regs[i] = parse_hex64(regs[i].get<std::string>());
  in.memory = from_hex(j.at("memory").get<std::string>());
  if (in.memory.size() != sb.size()) throw std::invalid_argument("input memory size does not match sandbox");
  return in;
}

inline nlohmann::json contract_trace_json(const ContractTrace& t) {
  nlohmann::json obs = nlohmann::json::array();
  for (const Observation& o : t.observations) obs.push_back(nlohmann::json::array({obs_name(o.kind), hex64(o.value)}));
  return nlohmann::json{{"digest", hex64(t.hash)}, {"observations", obs}};
}

inline nlohmann::json mutrace_json(const MuTrace& t) {
  return nlohmann::json{{"format", format_name(t.format)}, {"payload", to_hex(t.payload)}, {"items", mutrace_items(t)}};
}

inline MuTrace mutrace_from_json(const nlohmann::json& j) {
  auto f = parse_format(j.at("format").get<std::string>());
  if (!f) throw std::invalid_argument("unknown trace format");
  return MuTrace{*f, from_hex(j.at("payload").get<std::string>())};
}

inline nlohmann::json mutrace_diff_json(const MuTraceDiff& d) {
  nlohmann::json j{{"only_a", d.only_a}, {"only_b", d.only_b}};
  j["first_divergence"] = d.first_divergence ? nlohmann::json(*d.first_divergence) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json side_by_side_json(const SideBySideReport& rep, std::size_t max_rows) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    if (!r.highlighted) continue;
    if (rows.size() >= max_rows) break;
    rows.push_back(nlohmann::json{{"a", r.a ? log_record_json(*r.a) : nlohmann::json(nullptr)},
                                  {"b", r.b ? log_record_json(*r.b) : nlohmann::json(nullptr)},
                                  {"squashed_a", r.squashed_a},
                                  {"squashed_b", r.squashed_b}});
  }
  nlohmann::json sa = nlohmann::json::array(), sb = nlohmann::json::array();
  for (const auto& r : rep.squashes_a) sa.push_back(log_record_json(r));
  for (const auto& r : rep.squashes_b) sb.push_back(log_record_json(r));
  return nlohmann::json{{"highlighted_rows", rep.highlighted_count()},
                        {"rows", rows},
                        {"squashes_a", sa},
                        {"squashes_b", sb}};
}

// A confirmed violation plus the setup that reproduces it.
struct ViolationReport {
  std::string id;
  std::size_t program_index = 0;
  std::uint64_t program_seed = 0;
  TestSetup setup;
  Violation violation;
};

inline std::string violation_id(std::size_t program_index, std::size_t a, std::size_t b) {
  std::ostringstream os;
  os << "v" << std::setw(5) << std::setfill('0') << program_index << "_" << a << "_" << b;
  return os.str();
}

inline nlohmann::json violation_json(const ViolationReport& r) {
  const Violation& v = r.violation;
  const char* common = !v.common_ctx ? "none" : (*v.common_ctx == v.ctx_a ? "a" : "b");
  return nlohmann::json{
      {"schema", "relfuzz.violation"},
      {"version", kViolationSchemaVersion},
      {"id", r.id},
      {"program_index", r.program_index},
      {"program_seed", hex64(r.program_seed)},
      {"setup", setup_json(r.setup)},
      {"program_asm", render_asm(v.program)},
      {"index_a", v.index_a},
      {"index_b", v.index_b},
      {"input_a", input_json(v.input_a)},
      {"input_b", input_json(v.input_b)},
      {"contract_trace", contract_trace_json(v.contract_trace)},
      {"context_a", to_hex(v.ctx_a.serialize())},
      {"context_b", to_hex(v.ctx_b.serialize())},
      {"common_context", common},
      {"validated", v.validated},
      {"mutrace_a", mutrace_json(v.mutrace_a)},
      {"mutrace_b", mutrace_json(v.mutrace_b)},
      {"diff", mutrace_diff_json(v.diff)},
      {"signature_tags", v.signature_tags},
      {"rule_errors", v.rule_errors},
      {"log_excerpt", side_by_side_json(diff_logs(v), kLogExcerptRows)},
  };
}

// Rebuilds the violation inputs and contexts. Logs are not stored in the
// document; callers re-run the pair to obtain them.
inline ViolationReport violation_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "relfuzz.violation") throw std::invalid_argument("not a violation report");
  if (j.value("version", 0) != kViolationSchemaVersion) throw std::invalid_argument("unsupported violation report version");
  ViolationReport r;
  r.id = j.at("id").get<std::string>();
  r.program_index = j.at("program_index").get<std::size_t>();
  r.program_seed = parse_hex64(j.at("program_seed").get<std::string>());
  r.setup = setup_from_json(j.at("setup"));
  Violation& v = r.violation;
  v.program = parse_asm(j.at("program_asm").get<std::string>());
  v.contract = r.setup.contract;
  v.index_a = j.at("index_a").get<std::size_t>();
  v.index_b = j.at("index_b").get<std::size_t>();
  v.input_a = input_from_json(j.at("input_a"), r.setup.sandbox);
  v.input_b = input_from_json(j.at("input_b"), r.setup.sandbox);
  v.contract_trace = collect_contract_trace(v.program, v.input_a, v.contract);
  v.ctx_a = MicroArchContext::deserialize(from_hex(j.at("context_a").get<std::string>()));
  v.ctx_b = MicroArchContext::deserialize(from_hex(j.at("context_b").get<std::string>()));
  const std::string common = j.value("common_context", "none");
  if (common == "a") v.common_ctx = v.ctx_a;
  if (common == "b") v.common_ctx = v.ctx_b;
  v.validated = j.value("validated", false);
  v.mutrace_a = mutrace_from_json(j.at("mutrace_a"));
  v.mutrace_b = mutrace_from_json(j.at("mutrace_b"));
  v.diff = mutrace_diff(v.mutrace_a, v.mutrace_b);
  v.signature_tags = j.value("signature_tags", std::vector<std::string>{});
  return r;
}

namespace detail {

inline std::string render_cell(const std::optional<LogRecord>& r, bool squashed) {
  if (!r) return "";
  std::ostringstream os;
  os << std::setw(6) << r->cycle << " " << log_kind_name(r->kind) << " pc=0x" << std::hex << r->pc << " addr=0x" << r->addr
     << std::dec;
  if (r->speculative) os << " spec";
  if (squashed) os << " squashed";
  if (!r->detail.empty()) os << " (" << r->detail << ")";
  return os.str();
}

}  // namespace detail

inline std::string render_side_by_side(const SideBySideReport& rep) {
  std::ostringstream os;
  constexpr int kWidth = 64;
  os << "  " << std::left << std::setw(kWidth) << "input A" << " | input B\n";
  for (const auto& r : rep.rows) {
    os << (r.highlighted ? "* " : "  ") << std::left << std::setw(kWidth) << detail::render_cell(r.a, r.squashed_a) << " | "
       << detail::render_cell(r.b, r.squashed_b) << "\n";
  }
  os << "highlighted rows: " << rep.highlighted_count() << "\n";
  auto squashes = [&](const char* side, const std::vector<LogRecord>& v) {
    os << "squashes " << side << ":\n";
    for (const auto& r : v) os << "  " << detail::render_cell(r, false) << "\n";
  };
  squashes("A", rep.squashes_a);
  squashes("B", rep.squashes_b);
  return os.str();
}

}  // namespace relfuzz
