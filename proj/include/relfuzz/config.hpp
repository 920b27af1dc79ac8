#pragma once

// Campaign configuration files: nested YAML sections. Unknown keys are errors.
// Key reference: docs/formats.md.

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <yaml-cpp/yaml.h>

#include "relfuzz/campaign.hpp"

namespace relfuzz {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!n.IsMap()) throw ConfigError(where + " must be a mapping");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : n) {
    const std::string k = kv.first.as<std::string>();
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const YAML::Node& n, const char* key, T& out, const std::string& where) {
  if (!n[key]) return;
  try {
    out = n[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

inline std::string read_enum(const YAML::Node& n, const char* key, const std::string& fallback, const std::string& where) {
  std::string s = fallback;
  read(n, key, s, where);
  return s;
}

}  // namespace detail

inline CampaignConfig parse_campaign_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  using detail::read;
  detail::check_keys(root, "config",
                     {"seed", "programs", "inputs_per_program", "mutated_fraction", "mode", "workers",
                      "naive_startup_tests", "validate", "signature_rules", "output_dir", "budget", "contract",
                      "defense", "trace_format", "preset", "sandbox_pages", "reset_policy", "generator", "pipeline",
                      "cache"});

  // Defense first: it decides the default sandbox.
  DefenseId id = DefenseId::BASELINE;
  std::uint32_t bugs = 0;
  if (const YAML::Node d = root["defense"]) {
    detail::check_keys(d, "defense", {"id", "bug_flags"});
    const std::string name = detail::read_enum(d, "id", "BASELINE", "defense");
    auto parsed = parse_defense(name);
    if (!parsed) throw ConfigError("unknown defense '" + name + "'");
    id = *parsed;
    if (const YAML::Node flags = d["bug_flags"]) {
      if (!flags.IsSequence()) throw ConfigError("defense.bug_flags must be a list");
      for (const auto& f : flags) {
        auto b = parse_bug_flag(f.as<std::string>());
        if (!b) throw ConfigError("unknown bug flag '" + f.as<std::string>() + "'");
        bugs |= *b;
      }
    }
  }
  CampaignConfig c;
  try {
    c = default_campaign(id, bugs);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  read(root, "seed", c.seed, "config");
  read(root, "programs", c.program_count, "config");
  read(root, "inputs_per_program", c.inputs_per_program, "config");
  read(root, "mutated_fraction", c.mutated_fraction, "config");
  read(root, "workers", c.workers, "config");
  read(root, "naive_startup_tests", c.naive_startup_tests, "config");
  read(root, "validate", c.validate, "config");
  read(root, "signature_rules", c.signature_rules, "config");
  read(root, "output_dir", c.output_dir, "config");
  {
    const std::string m = detail::read_enum(root, "mode", "OPT", "config");
    auto mode = parse_mode(m);
    if (!mode) throw ConfigError("unknown mode '" + m + "'");
    c.mode = *mode;
  }
  if (const YAML::Node b = root["budget"]) {
    detail::check_keys(b, "budget", {"max_test_cases", "max_violations"});
    if (b["max_test_cases"] && !b["max_test_cases"].IsNull()) c.max_test_cases = b["max_test_cases"].as<std::uint64_t>();
    if (b["max_violations"] && !b["max_violations"].IsNull()) c.max_violations = b["max_violations"].as<std::uint64_t>();
  }
  if (const YAML::Node k = root["contract"]) {
    detail::check_keys(k, "contract", {"kind", "window", "nesting_depth"});
    const std::string name = detail::read_enum(k, "kind", "CT_SEQ", "contract");
    auto kind = parse_contract_kind(name);
    if (!kind) throw ConfigError("unknown contract '" + name + "'");
    int window = 64, depth = 1;
    read(k, "window", window, "contract");
    read(k, "nesting_depth", depth, "contract");
    try {
      c.setup.contract = *kind == ContractKind::CT_COND ? ContractId::ct_cond(window, depth) : ContractId{*kind};
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  {
    const std::string f = detail::read_enum(root, "trace_format", "L1D_TLB", "config");
    auto fmt = parse_format(f);
    if (!fmt) throw ConfigError("unknown trace format '" + f + "'");
    c.setup.format = *fmt;
  }
  {
    const std::string r = detail::read_enum(root, "reset_policy", "FILL_OUTSIDE_SANDBOX", "config");
    auto rp = parse_reset_policy(r);
    if (!rp) throw ConfigError("unknown reset policy '" + r + "'");
    c.setup.reset = *rp;
  }
  if (root["sandbox_pages"]) {
    int pages = 1;
    read(root, "sandbox_pages", pages, "config");
    try {
      set_sandbox(c, SandboxConfig::pages(pages));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    set_preset(c, detail::read_enum(root, "preset", "DEFAULT", "config"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (const YAML::Node g = root["generator"]) {
    detail::check_keys(g, "generator", {"max_blocks", "max_body_len", "mem_op_fraction", "store_fraction", "opcode_weights"});
    read(g, "max_blocks", c.generator.max_blocks, "generator");
    read(g, "max_body_len", c.generator.max_body_len, "generator");
    read(g, "mem_op_fraction", c.generator.mem_op_fraction, "generator");
    read(g, "store_fraction", c.generator.store_fraction, "generator");
    if (const YAML::Node w = g["opcode_weights"]) {
      if (!w.IsMap()) throw ConfigError("generator.opcode_weights must be a mapping");
      for (const auto& kv : w) {
        const std::string name = kv.first.as<std::string>();
        bool found = false;
        for (int op = 0; op <= static_cast<int>(Opcode::JMP); ++op)
          if (name == opcode_name(static_cast<Opcode>(op))) {
            c.generator.opcode_weights[static_cast<Opcode>(op)] = kv.second.as<double>();
            found = true;
          }
        if (!found) throw ConfigError("unknown opcode '" + name + "' in generator.opcode_weights");
      }
    }
  }
  if (const YAML::Node p = root["pipeline"]) {
    detail::check_keys(p, "pipeline",
                       {"rob_size", "fetch_width", "issue_width", "commit_width", "load_hit_latency", "l2_hit_latency",
                        "mem_latency", "branch_resolve_latency", "store_addr_resolve_latency", "drain_after_last_commit",
                        "oracle_branch_prediction", "store_bypass", "cycle_cap"});
    auto& q = c.setup.pipeline;
    read(p, "rob_size", q.rob_size, "pipeline");
    read(p, "fetch_width", q.fetch_width, "pipeline");
    read(p, "issue_width", q.issue_width, "pipeline");
    read(p, "commit_width", q.commit_width, "pipeline");
    read(p, "load_hit_latency", q.load_hit_latency, "pipeline");
    read(p, "l2_hit_latency", q.l2_hit_latency, "pipeline");
    read(p, "mem_latency", q.mem_latency, "pipeline");
    read(p, "branch_resolve_latency", q.branch_resolve_latency, "pipeline");
    read(p, "store_addr_resolve_latency", q.store_addr_resolve_latency, "pipeline");
    read(p, "drain_after_last_commit", q.drain_after_last_commit, "pipeline");
    read(p, "oracle_branch_prediction", q.oracle_branch_prediction, "pipeline");
    read(p, "store_bypass", q.store_bypass, "pipeline");
    read(p, "cycle_cap", q.cycle_cap, "pipeline");
  }
  // Explicit cache keys override the preset.
  if (const YAML::Node k = root["cache"]) {
    detail::check_keys(k, "cache", {"l1_sets", "l1_ways", "mshr_count", "tlb_entries", "l2_hit_probability"});
    auto& q = c.setup.cache;
    read(k, "l1_sets", q.l1_sets, "cache");
    read(k, "l1_ways", q.l1_ways, "cache");
    read(k, "mshr_count", q.mshr_count, "cache");
    read(k, "tlb_entries", q.tlb_entries, "cache");
    read(k, "l2_hit_probability", q.l2_hit_probability, "cache");
  }
  try {
    c.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline CampaignConfig load_campaign_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_campaign_config(ss.str());
}

}  // namespace relfuzz
