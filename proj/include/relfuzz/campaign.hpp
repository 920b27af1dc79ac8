#pragma once

// Campaign driver: generate programs, run each program's input batch on one
// simulator instance (OPT) or on fresh instances (NAIVE), then detect,
// validate, tag and report.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "relfuzz/generator.hpp"
#include "relfuzz/report.hpp"
#include "relfuzz/setup.hpp"

namespace relfuzz {

// ---- amplification presets ------------------------------------------------

struct PresetOverlay {
  std::string name;
  std::optional<int> l1_ways;
  std::optional<int> mshr_count;

  CacheConfig apply(CacheConfig c) const {
    if (l1_ways) c.l1_ways = *l1_ways;
    if (mshr_count) c.mshr_count = *mshr_count;
    return c;
  }
};

inline const std::vector<PresetOverlay>& presets() {
  static const std::vector<PresetOverlay> all = {
      {"DEFAULT", 8, 256},
      {"SMALL_CACHE", 2, std::nullopt},
      {"TINY_MSHR", 2, 2},
  };
  return all;
}

inline PresetOverlay amplification_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown amplification preset '" + name + "'");
}

// ---- configuration ------------------------------------------------------------

enum class CampaignMode : std::uint8_t { OPT, NAIVE };

inline const char* mode_name(CampaignMode m) { return m == CampaignMode::OPT ? "OPT" : "NAIVE"; }

inline std::optional<CampaignMode> parse_mode(const std::string& s) {
  if (s == "OPT") return CampaignMode::OPT;
  if (s == "NAIVE") return CampaignMode::NAIVE;
  return std::nullopt;
}

struct CampaignConfig {
  std::uint64_t seed = 1;
  int program_count = 200;
  int inputs_per_program = 140;
  double mutated_fraction = 0.5;  // share of each batch produced by contract-preserving mutation
  CampaignMode mode = CampaignMode::OPT;
  int workers = 1;
  int naive_startup_tests = 200;  // NAIVE startup penalty, in empty-test equivalents
  bool validate = true;
  bool signature_rules = true;
  std::string preset = "DEFAULT";
  std::optional<std::uint64_t> max_test_cases;
  std::optional<std::uint64_t> max_violations;
  std::string output_dir;  // empty: keep reports in memory only
  GenConfig generator{};
  TestSetup setup{};  // cache already has the preset applied

  void check() const {
    if (program_count < 1) throw std::invalid_argument("program_count must be >= 1");
    if (inputs_per_program < 2) throw std::invalid_argument("inputs_per_program must be >= 2");
    if (mutated_fraction < 0 || mutated_fraction >= 1) throw std::invalid_argument("mutated_fraction must be in [0,1)");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (naive_startup_tests < 0) throw std::invalid_argument("naive_startup_tests must be >= 0");
    if (max_violations && *max_violations == 0) throw std::invalid_argument("max_violations must be >= 1");
    generator.check();
    setup.pipeline.check();
    setup.cache.check();
    if (generator.sandbox != setup.sandbox) throw std::invalid_argument("generator and setup sandbox differ");
    amplification_preset(preset);
  }
};

// Defaults for a defense: its sandbox size and its bug flags.
inline CampaignConfig default_campaign(DefenseId id = DefenseId::BASELINE, std::uint32_t bugs = 0) {
  CampaignConfig c;
  c.setup.defense = make_policy(id, bugs);
  c.setup.sandbox = default_sandbox_for(id);
  c.generator.sandbox = c.setup.sandbox;
  return c;
}

inline void set_preset(CampaignConfig& c, const std::string& name) {
  c.setup.cache = amplification_preset(name).apply(c.setup.cache);
  c.preset = name;
}

inline void set_sandbox(CampaignConfig& c, SandboxConfig sb) {
  c.setup.sandbox = sb;
  c.generator.sandbox = sb;
}

inline nlohmann::json campaign_config_json(const CampaignConfig& c) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [op, w] : c.generator.opcode_weights) weights[opcode_name(op)] = w;
  nlohmann::json budget = nlohmann::json::object();
  budget["max_test_cases"] = c.max_test_cases ? nlohmann::json(*c.max_test_cases) : nlohmann::json(nullptr);
  budget["max_violations"] = c.max_violations ? nlohmann::json(*c.max_violations) : nlohmann::json(nullptr);
  return nlohmann::json{{"seed", c.seed},
                        {"programs", c.program_count},
                        {"inputs_per_program", c.inputs_per_program},
                        {"mutated_fraction", c.mutated_fraction},
                        {"mode", mode_name(c.mode)},
                        {"workers", c.workers},
                        {"naive_startup_tests", c.naive_startup_tests},
                        {"validate", c.validate},
                        {"signature_rules", c.signature_rules},
                        {"preset", c.preset},
                        {"budget", budget},
                        {"generator",
                         {{"max_blocks", c.generator.max_blocks},
                          {"max_body_len", c.generator.max_body_len},
                          {"mem_op_fraction", c.generator.mem_op_fraction},
                          {"store_fraction", c.generator.store_fraction},
                          {"opcode_weights", weights}}},
                        {"setup", setup_json(c.setup)}};
}

// ---- stats ------------------------------------------------------------------------

struct CampaignStats {
  std::uint64_t programs_run = 0;
  std::uint64_t test_cases_run = 0;
  std::uint64_t candidates = 0;
  std::uint64_t confirmed_violations = 0;
  std::uint64_t invalidated_candidates = 0;
  std::uint64_t mutation_fallbacks = 0;
  std::uint64_t program_errors = 0;
  std::vector<std::size_t> violating_programs;
  std::map<std::string, std::uint64_t> signature_counts;
  std::optional<std::uint64_t> test_cases_to_first_violation;
  double wall_time_s = 0;
  double throughput = 0;  // test cases per second
  std::optional<double> time_to_first_violation_s;
};

struct CampaignResult {
  CampaignStats stats;
  std::vector<ViolationReport> reports;  // ordered by program index, then pair
};

// ---- per-program work ---------------------------------------------------------

namespace detail {

inline std::uint64_t program_seed(std::uint64_t campaign_seed, std::size_t k) {
  return splitmix64(campaign_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(k) + 1));
}

inline const Program& empty_program() {
  static const Program p = [] {
    Program q;
    q.blocks.push_back(BasicBlock{0, {}, Terminator{}});
    return q;
  }();
  return p;
}

struct ProgramResult {
  std::size_t index = 0;
  std::uint64_t test_cases = 0;
  std::uint64_t candidates = 0;
  std::uint64_t invalidated = 0;
  std::uint64_t mutation_fallbacks = 0;
  bool error = false;
  std::vector<ViolationReport> reports;
};

inline std::vector<TestInput> batch_inputs(const CampaignConfig& cfg, const Program& p, std::uint64_t seed,
                                           std::uint64_t& fallbacks) {
  const int n = cfg.inputs_per_program;
  const int mutants = static_cast<int>(static_cast<double>(n) * cfg.mutated_fraction);
  GenConfig g = cfg.generator;
  g.rng_seed = seed;
  std::vector<TestInput> ins = generate_inputs(g, n - mutants);
  const std::size_t base = ins.size();
  Rng mr(splitmix64(seed ^ 0x6d7574616e7473ULL));
  for (int k = 0; k < mutants; ++k) {
    MutationResult m = mutate_preserving_contract(p, ins[static_cast<std::size_t>(k) % base], cfg.setup.contract, mr);
    fallbacks += m.fallback ? 1 : 0;
    ins.push_back(std::move(m.input));
  }
  return ins;
}

inline ProgramResult run_program(const CampaignConfig& cfg, std::size_t k, std::uint64_t n_inputs) {
  ProgramResult res;
  res.index = k;
  const std::uint64_t seed = program_seed(cfg.seed, k);
  GenConfig g = cfg.generator;
  g.rng_seed = seed;
  const Program p = generate_program(g);
  std::vector<TestInput> inputs = batch_inputs(cfg, p, seed, res.mutation_fallbacks);
  inputs.resize(static_cast<std::size_t>(n_inputs), TestInput(cfg.setup.sandbox));

  TestSetup setup = cfg.setup;
  setup.cache.l2_seed = splitmix64(seed ^ 0x6c32ULL);

  std::vector<ContractTrace> ct;
  std::vector<MuTrace> mu;
  std::vector<MicroArchContext> ctxs;
  ct.reserve(inputs.size());
  mu.reserve(inputs.size());
  ctxs.reserve(inputs.size());
  try {
    Simulator sim(setup.defense, setup.pipeline, setup.cache);
    const TestInput empty_input(setup.sandbox);
    for (const TestInput& in : inputs) {
      if (cfg.mode == CampaignMode::NAIVE) {
        for (int s = 0; s < cfg.naive_startup_tests; ++s) {
          Simulator boot(setup.defense, setup.pipeline, setup.cache);
          boot.context() = reset_context(boot.context(), setup.reset, setup.sandbox);
          boot.run(empty_program(), empty_input, SimOptions{false, false});
        }
        sim = Simulator(setup.defense, setup.pipeline, setup.cache);
      }
      sim.context() = reset_context(sim.context(), setup.reset, setup.sandbox);
      ctxs.push_back(sim.context());
      RunResult r = sim.run(p, in, SimOptions{false, false});
      mu.push_back(extract(r, setup.format));
      ct.push_back(collect_contract_trace(p, in, setup.contract));
      ++res.test_cases;
    }
  } catch (const SimError&) {
    res.error = true;
    return res;
  } catch (const ModelError&) {
    res.error = true;
    return res;
  }

  std::vector<Violation> vs = detect(p, inputs, ct, mu, ctxs, setup.contract);
  res.candidates = vs.size();
  std::vector<Violation> confirmed;
  const RunFn run = [&](const TestInput& in, const MicroArchContext& ctx, DebugLog* log) {
    return setup.trace(p, in, ctx, log);
  };
  for (Violation& v : vs) {
    if (cfg.validate) {
      validate(v, run);
      if (!v.validated) {
        ++res.invalidated;
        continue;
      }
    } else {
      // Unvalidated mode still needs logs for triage.
      v.mutrace_a = setup.trace(p, v.input_a, v.ctx_a, &v.log_a);
      v.mutrace_b = setup.trace(p, v.input_b, v.ctx_b, &v.log_b);
    }
    confirmed.push_back(std::move(v));
  }
  if (cfg.signature_rules) filter_by_signature(confirmed, builtin_rules());
  for (Violation& v : confirmed) {
    ViolationReport r;
    r.id = violation_id(k, v.index_a, v.index_b);
    r.program_index = k;
    r.program_seed = seed;
    r.setup = setup;
    r.violation = std::move(v);
    res.reports.push_back(std::move(r));
  }
  return res;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace detail

// Writes <dir>/violations/<id>.json plus both debug logs as NDJSON.
inline void write_violation_files(const std::filesystem::path& dir, const ViolationReport& r) {
  const auto vdir = dir / "violations";
  std::filesystem::create_directories(vdir);
  detail::write_text(vdir / (r.id + ".json"), violation_json(r).dump(2) + "\n");
  detail::write_text(vdir / (r.id + ".a.ndjson"), to_ndjson(r.violation.log_a));
  detail::write_text(vdir / (r.id + ".b.ndjson"), to_ndjson(r.violation.log_b));
}

inline nlohmann::json summary_json(const CampaignConfig& cfg, const CampaignResult& res) {
  const CampaignStats& s = res.stats;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& r : res.reports)
    ids.push_back(nlohmann::json{{"id", r.id}, {"program_index", r.program_index}, {"signature_tags", r.violation.signature_tags}});
  nlohmann::json timing{{"wall_time_s", s.wall_time_s}, {"throughput_tests_per_s", s.throughput}};
  timing["time_to_first_violation_s"] = s.time_to_first_violation_s ? nlohmann::json(*s.time_to_first_violation_s) : nlohmann::json(nullptr);
  nlohmann::json stats{{"programs_run", s.programs_run},
                       {"test_cases_run", s.test_cases_run},
                       {"candidates", s.candidates},
                       {"confirmed_violations", s.confirmed_violations},
                       {"invalidated_candidates", s.invalidated_candidates},
                       {"mutation_fallbacks", s.mutation_fallbacks},
                       {"program_errors", s.program_errors},
                       {"violating_programs", s.violating_programs},
                       {"signature_counts", s.signature_counts}};
  stats["test_cases_to_first_violation"] =
      s.test_cases_to_first_violation ? nlohmann::json(*s.test_cases_to_first_violation) : nlohmann::json(nullptr);
  return nlohmann::json{{"schema", "relfuzz.summary"},
                        {"version", kSummarySchemaVersion},
                        {"config", campaign_config_json(cfg)},
                        {"stats", stats},
                        {"violations", ids},
                        {"timing", timing}};
}

// Programs are the unit of parallelism. Results are folded in program order,
// so reports and stats (timing aside) do not depend on the worker count.
inline CampaignResult run_campaign(const CampaignConfig& cfg) {
  cfg.check();
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  CampaignResult out;
  CampaignStats& st = out.stats;

  // Inputs per program after the test-case budget is applied.
  std::vector<std::uint64_t> plan;
  std::uint64_t left = cfg.max_test_cases.value_or(~std::uint64_t{0});
  for (int k = 0; k < cfg.program_count && left > 0; ++k) {
    const std::uint64_t n = std::min<std::uint64_t>(left, static_cast<std::uint64_t>(cfg.inputs_per_program));
    plan.push_back(n);
    left -= n;
  }

  std::vector<std::optional<detail::ProgramResult>> slots(plan.size());
  std::mutex mu;
  std::size_t next_fold = 0;
  std::atomic<std::size_t> next_claim{0};
  std::atomic<std::size_t> stop_at{plan.size()};

  auto fold = [&](detail::ProgramResult& r) {
    ++st.programs_run;
    st.candidates += r.candidates;
    st.invalidated_candidates += r.invalidated;
    st.mutation_fallbacks += r.mutation_fallbacks;
    st.program_errors += r.error ? 1 : 0;
    if (!r.reports.empty()) {
      if (!st.test_cases_to_first_violation) {
        st.test_cases_to_first_violation = st.test_cases_run + r.test_cases;
        st.time_to_first_violation_s = std::chrono::duration<double>(clock::now() - t0).count();
      }
      st.violating_programs.push_back(r.index);
    }
    st.test_cases_run += r.test_cases;
    for (auto& rep : r.reports) {
      for (const auto& tag : rep.violation.signature_tags) ++st.signature_counts[tag];
      ++st.confirmed_violations;
      if (!cfg.output_dir.empty()) write_violation_files(cfg.output_dir, rep);
      out.reports.push_back(std::move(rep));
    }
    if (cfg.max_violations && st.confirmed_violations >= *cfg.max_violations) stop_at = r.index + 1;
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next_claim++;
      if (k >= stop_at.load()) return;
      detail::ProgramResult r = detail::run_program(cfg, k, plan[k]);
      std::lock_guard<std::mutex> lock(mu);
      slots[k] = std::move(r);
      while (next_fold < stop_at.load() && slots[next_fold]) {
        fold(*slots[next_fold]);
        slots[next_fold].reset();
        ++next_fold;
      }
    }
  };

  const int nw = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(plan.size(), 1)));
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  st.wall_time_s = std::chrono::duration<double>(clock::now() - t0).count();
  st.throughput = st.wall_time_s > 0 ? static_cast<double>(st.test_cases_run) / st.wall_time_s : 0.0;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    detail::write_text(std::filesystem::path(cfg.output_dir) / "summary.json", summary_json(cfg, out).dump(2) + "\n");
  }
  return out;
}

}  // namespace relfuzz
