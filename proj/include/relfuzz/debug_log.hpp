#pragma once

// Structured simulator log. Serialized as NDJSON: a schema header line followed
// by one object per record (see docs/formats.md).

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace relfuzz {

enum class LogKind : std::uint8_t {
  FETCH, ISSUE, EXEC, SQUASH, COMMIT, L1_HIT, L1_MISS, L1_FILL, L1_EVICT, TLB_FILL,
  MSHR_ALLOC, MSHR_FREE, MSHR_STALL, EXPOSE, EXPOSE_STALL, CLEANUP, TAINT, SPLIT_REQ,
};

inline constexpr int kLogKindCount = 18;

inline const char* log_kind_name(LogKind k) {
  static const char* names[] = {"FETCH",    "ISSUE",     "EXEC",       "SQUASH",     "COMMIT",       "L1_HIT",
                                "L1_MISS",  "L1_FILL",   "L1_EVICT",   "TLB_FILL",   "MSHR_ALLOC",   "MSHR_FREE",
                                "MSHR_STALL", "EXPOSE",  "EXPOSE_STALL", "CLEANUP",  "TAINT",        "SPLIT_REQ"};
  return names[static_cast<int>(k)];
}

inline std::optional<LogKind> parse_log_kind(const std::string& s) {
  for (int i = 0; i < kLogKindCount; ++i)
    if (s == log_kind_name(static_cast<LogKind>(i))) return static_cast<LogKind>(i);
  return std::nullopt;
}

struct LogRecord {
  std::uint64_t cycle = 0;
  LogKind kind = LogKind::FETCH;
  std::uint64_t pc = 0;
  std::uint64_t addr = 0;
  bool speculative = false;
  std::string detail;
  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

inline constexpr int kDebugLogSchemaVersion = 1;

struct DebugLog {
  std::vector<LogRecord> records;

  std::size_t count(LogKind k) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.kind == k;
    return n;
  }
  friend bool operator==(const DebugLog&, const DebugLog&) = default;
};

inline nlohmann::json log_record_json(const LogRecord& r) {
  return nlohmann::json{{"cycle", r.cycle},          {"kind", log_kind_name(r.kind)}, {"pc", r.pc},
                        {"addr", r.addr},            {"speculative", r.speculative}, {"detail", r.detail}};
}

inline LogRecord log_record_from_json(const nlohmann::json& j) {
  LogRecord r;
  r.cycle = j.at("cycle").get<std::uint64_t>();
  auto k = parse_log_kind(j.at("kind").get<std::string>());
  if (!k) throw std::invalid_argument("unknown log kind");
  r.kind = *k;
  r.pc = j.at("pc").get<std::uint64_t>();
  r.addr = j.at("addr").get<std::uint64_t>();
  r.speculative = j.at("speculative").get<bool>();
  r.detail = j.value("detail", "");
  return r;
}

inline std::string to_ndjson(const DebugLog& log) {
  std::string out = nlohmann::json{{"schema", "relfuzz.debuglog"}, {"version", kDebugLogSchemaVersion}}.dump();
  out += '\n';
  for (const auto& r : log.records) {
    out += log_record_json(r).dump();
    out += '\n';
  }
  return out;
}

inline DebugLog from_ndjson(const std::string& text) {
  DebugLog log;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (header) {
      if (j.value("schema", "") != "relfuzz.debuglog") throw std::invalid_argument("missing debug log header");
      if (j.value("version", 0) != kDebugLogSchemaVersion) throw std::invalid_argument("unsupported debug log version");
      header = false;
      continue;
    }
    log.records.push_back(log_record_from_json(j));
  }
  if (header) throw std::invalid_argument("missing debug log header");
  return log;
}

}  // namespace relfuzz
