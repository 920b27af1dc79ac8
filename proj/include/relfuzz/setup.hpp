#pragma once

// Everything needed to re-run one test case outside a campaign: defense,
// contract, trace format, structure sizes, sandbox and reset policy.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "relfuzz/defenses.hpp"
#include "relfuzz/leakage_model.hpp"
#include "relfuzz/mutrace.hpp"
#include "relfuzz/simulator.hpp"

namespace relfuzz {

struct TestSetup {
  DefensePolicy defense = baseline_hooks();
  ContractId contract = ContractId::ct_seq();
  MuTraceFormat format = MuTraceFormat::L1D_TLB;
  PipelineConfig pipeline{};
  CacheConfig cache{};
  SandboxConfig sandbox{};
  ResetPolicy reset = ResetPolicy::FillOutsideSandbox;

  MicroArchContext fresh_context() const { return reset_context(MicroArchContext(cache), reset, sandbox); }

  RunResult run(const Program& p, const TestInput& in, const MicroArchContext& ctx, bool with_log) const {
    return run_test(p, in, ctx, defense, pipeline, cache, SimOptions{with_log, false});
  }

  MuTrace trace(const Program& p, const TestInput& in, const MicroArchContext& ctx, DebugLog* log = nullptr) const {
    RunResult r = run(p, in, ctx, log != nullptr);
    if (log) *log = std::move(r.log);
    return extract(r, format);
  }

  friend bool operator==(const TestSetup&, const TestSetup&) = default;
};

inline std::optional<ResetPolicy> parse_reset_policy(const std::string& s) {
  for (auto p : {ResetPolicy::FillOutsideSandbox, ResetPolicy::DirectInvalidate})
    if (s == reset_policy_name(p)) return p;
  return std::nullopt;
}

inline nlohmann::json contract_json(const ContractId& c) {
  nlohmann::json j{{"kind", contract_name(c.kind)}};
  if (c.kind == ContractKind::CT_COND) {
    j["window"] = c.window;
    j["nesting_depth"] = c.nesting_depth;
  }
  return j;
}

inline ContractId contract_from_json(const nlohmann::json& j) {
  auto k = parse_contract_kind(j.at("kind").get<std::string>());
  if (!k) throw std::invalid_argument("unknown contract kind");
  if (*k == ContractKind::CT_COND) return ContractId::ct_cond(j.value("window", 64), j.value("nesting_depth", 1));
  return ContractId{*k};
}

inline nlohmann::json pipeline_json(const PipelineConfig& p) {
  return nlohmann::json{{"rob_size", p.rob_size},
                        {"fetch_width", p.fetch_width},
                        {"issue_width", p.issue_width},
                        {"commit_width", p.commit_width},
                        {"load_hit_latency", p.load_hit_latency},
                        {"l2_hit_latency", p.l2_hit_latency},
                        {"mem_latency", p.mem_latency},
                        {"branch_resolve_latency", p.branch_resolve_latency},
                        {"store_addr_resolve_latency", p.store_addr_resolve_latency},
                        {"drain_after_last_commit", p.drain_after_last_commit},
                        {"oracle_branch_prediction", p.oracle_branch_prediction},
                        {"store_bypass", p.store_bypass},
                        {"cycle_cap", p.cycle_cap}};
}

inline PipelineConfig pipeline_from_json(const nlohmann::json& j) {
  PipelineConfig p;
  p.rob_size = j.value("rob_size", p.rob_size);
  p.fetch_width = j.value("fetch_width", p.fetch_width);
  p.issue_width = j.value("issue_width", p.issue_width);
  p.commit_width = j.value("commit_width", p.commit_width);
  p.load_hit_latency = j.value("load_hit_latency", p.load_hit_latency);
  p.l2_hit_latency = j.value("l2_hit_latency", p.l2_hit_latency);
  p.mem_latency = j.value("mem_latency", p.mem_latency);
  p.branch_resolve_latency = j.value("branch_resolve_latency", p.branch_resolve_latency);
  p.store_addr_resolve_latency = j.value("store_addr_resolve_latency", p.store_addr_resolve_latency);
  p.drain_after_last_commit = j.value("drain_after_last_commit", p.drain_after_last_commit);
  p.oracle_branch_prediction = j.value("oracle_branch_prediction", p.oracle_branch_prediction);
  p.store_bypass = j.value("store_bypass", p.store_bypass);
  p.cycle_cap = j.value("cycle_cap", p.cycle_cap);
  p.check();
  return p;
}

inline nlohmann::json cache_json(const CacheConfig& c) {
  return nlohmann::json{{"line_size", c.line_size},   {"l1_sets", c.l1_sets},
                        {"l1_ways", c.l1_ways},       {"mshr_count", c.mshr_count},
                        {"tlb_entries", c.tlb_entries}, {"l2_hit_probability", c.l2_hit_probability},
                        {"l2_seed", c.l2_seed}};
}

inline CacheConfig cache_from_json(const nlohmann::json& j) {
  CacheConfig c;
  c.line_size = j.value("line_size", c.line_size);
  c.l1_sets = j.value("l1_sets", c.l1_sets);
  c.l1_ways = j.value("l1_ways", c.l1_ways);
  c.mshr_count = j.value("mshr_count", c.mshr_count);
  c.tlb_entries = j.value("tlb_entries", c.tlb_entries);
  c.l2_hit_probability = j.value("l2_hit_probability", c.l2_hit_probability);
  c.l2_seed = j.value("l2_seed", c.l2_seed);
  c.check();
  return c;
}

inline nlohmann::json setup_json(const TestSetup& s) {
  return nlohmann::json{{"defense", defense_name(s.defense.id)},
                        {"bug_flags", bug_flag_list(s.defense.bug_flags)},
                        {"contract", contract_json(s.contract)},
                        {"trace_format", format_name(s.format)},
                        {"pipeline", pipeline_json(s.pipeline)},
                        {"cache", cache_json(s.cache)},
                        {"sandbox_pages", s.sandbox.page_count},
                        {"reset_policy", reset_policy_name(s.reset)}};
}

inline TestSetup setup_from_json(const nlohmann::json& j) {
  TestSetup s;
  auto id = parse_defense(j.at("defense").get<std::string>());
  if (!id) throw std::invalid_argument("unknown defense");
  std::uint32_t flags = 0;
  for (const auto& f : j.value("bug_flags", nlohmann::json::array())) {
    auto b = parse_bug_flag(f.get<std::string>());
    if (!b) throw std::invalid_argument("unknown bug flag " + f.get<std::string>());
    flags |= *b;
  }
  s.defense = make_policy(*id, flags);
  s.contract = contract_from_json(j.at("contract"));
  auto fmt = parse_format(j.at("trace_format").get<std::string>());
  if (!fmt) throw std::invalid_argument("unknown trace format");
  s.format = *fmt;
  s.pipeline = pipeline_from_json(j.value("pipeline", nlohmann::json::object()));
  s.cache = cache_from_json(j.value("cache", nlohmann::json::object()));
  s.sandbox = SandboxConfig::pages(j.value("sandbox_pages", 1));
  auto rp = parse_reset_policy(j.value("reset_policy", std::string("FILL_OUTSIDE_SANDBOX")));
  if (!rp) throw std::invalid_argument("unknown reset policy");
  s.reset = *rp;
  return s;
}

}  // namespace relfuzz
