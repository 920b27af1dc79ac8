#pragma once

// Secure-speculation policies. A policy is plain data; the simulator consults
// it at its hook points (load issue, load commit/expose, squash, store issue).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "relfuzz/leakage_model.hpp"

namespace relfuzz {

enum class DefenseId : std::uint8_t { BASELINE, INVISI, CLEANUP, TAINT, LFB_DELAY };

enum BugFlag : std::uint32_t {
  EVICT_ON_SPEC_MISS = 1u << 0,
  NO_MSHR_PARTITION = 1u << 1,
  SKIP_SPEC_STORE_CLEANUP = 1u << 2,
  SKIP_SPLIT_CLEANUP = 1u << 3,
  TAINTED_STORE_TLB = 1u << 4,
  FIRST_SPEC_LOAD_SAFE = 1u << 5,
};

inline const char* defense_name(DefenseId id) {
  switch (id) {
    case DefenseId::BASELINE: return "BASELINE";
    case DefenseId::INVISI: return "INVISI";
    case DefenseId::CLEANUP: return "CLEANUP";
    case DefenseId::TAINT: return "TAINT";
    case DefenseId::LFB_DELAY: return "LFB_DELAY";
  }
  return "?";
}

inline std::optional<DefenseId> parse_defense(const std::string& s) {
  for (auto id : {DefenseId::BASELINE, DefenseId::INVISI, DefenseId::CLEANUP, DefenseId::TAINT, DefenseId::LFB_DELAY})
    if (s == defense_name(id)) return id;
  return std::nullopt;
}

inline const std::vector<std::pair<BugFlag, const char*>>& bug_flag_names() {
  static const std::vector<std::pair<BugFlag, const char*>> names = {
      {EVICT_ON_SPEC_MISS, "EVICT_ON_SPEC_MISS"},       {NO_MSHR_PARTITION, "NO_MSHR_PARTITION"},
      {SKIP_SPEC_STORE_CLEANUP, "SKIP_SPEC_STORE_CLEANUP"}, {SKIP_SPLIT_CLEANUP, "SKIP_SPLIT_CLEANUP"},
      {TAINTED_STORE_TLB, "TAINTED_STORE_TLB"},         {FIRST_SPEC_LOAD_SAFE, "FIRST_SPEC_LOAD_SAFE"}};
  return names;
}

inline std::optional<BugFlag> parse_bug_flag(const std::string& s) {
  for (const auto& [f, n] : bug_flag_names())
    if (s == n) return f;
  return std::nullopt;
}

inline std::vector<std::string> bug_flag_list(std::uint32_t flags) {
  std::vector<std::string> out;
  for (const auto& [f, n] : bug_flag_names())
    if (flags & f) out.emplace_back(n);
  return out;
}

inline std::uint32_t allowed_bugs(DefenseId id) {
  switch (id) {
    case DefenseId::BASELINE: return 0;
    case DefenseId::INVISI: return EVICT_ON_SPEC_MISS | NO_MSHR_PARTITION;
    case DefenseId::CLEANUP: return SKIP_SPEC_STORE_CLEANUP | SKIP_SPLIT_CLEANUP;
    case DefenseId::TAINT: return TAINTED_STORE_TLB;
    case DefenseId::LFB_DELAY: return FIRST_SPEC_LOAD_SAFE;
  }
  return 0;
}

struct DefensePolicy {
  DefenseId id = DefenseId::BASELINE;
  std::uint32_t bug_flags = 0;
  ContractId target_contract = ContractId::ct_seq();

  bool has(BugFlag f) const { return (bug_flags & f) != 0; }
  friend bool operator==(const DefensePolicy&, const DefensePolicy&) = default;
};

inline DefensePolicy make_policy(DefenseId id, std::uint32_t bugs) {
  if ((bugs & ~allowed_bugs(id)) != 0)
    throw std::invalid_argument(std::string("bug flags not valid for ") + defense_name(id));
  DefensePolicy p{id, bugs, id == DefenseId::TAINT ? ContractId::arch_seq() : ContractId::ct_seq()};
  // Speculative loads always share MSHRs with committed ones.
  if (id == DefenseId::INVISI) p.bug_flags |= NO_MSHR_PARTITION;
  return p;
}

inline DefensePolicy baseline_hooks() { return make_policy(DefenseId::BASELINE, 0); }
inline DefensePolicy invisi_hooks(std::uint32_t bugs = EVICT_ON_SPEC_MISS) { return make_policy(DefenseId::INVISI, bugs); }
inline DefensePolicy cleanup_hooks(std::uint32_t bugs = SKIP_SPEC_STORE_CLEANUP | SKIP_SPLIT_CLEANUP) {
  return make_policy(DefenseId::CLEANUP, bugs);
}
inline DefensePolicy taint_hooks(std::uint32_t bugs = TAINTED_STORE_TLB) { return make_policy(DefenseId::TAINT, bugs); }
inline DefensePolicy lfb_hooks(std::uint32_t bugs = FIRST_SPEC_LOAD_SAFE) { return make_policy(DefenseId::LFB_DELAY, bugs); }

// Sandbox size used by campaigns for each defense.
inline SandboxConfig default_sandbox_for(DefenseId id) {
  return SandboxConfig::pages(id == DefenseId::TAINT ? 128 : 1);
}

}  // namespace relfuzz
