// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "relfuzz/campaign.hpp"
#include "relfuzz/gadgets.hpp"

namespace {

using namespace relfuzz;
using clock_type = std::chrono::steady_clock;

// Pinned campaign seeds.
constexpr std::uint64_t kBaselineSeed = 7;
constexpr std::uint64_t kV4Seed = 2;
constexpr std::uint64_t kInvisiSeed = 1;
constexpr std::uint64_t kFormatSeed = 3;
constexpr std::uint64_t kDeterminismSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt_s(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", s);
  return buf;
}

RunFn runner(const TestSetup& s, const Program& p) {
  return [&s, p](const TestInput& in, const MicroArchContext& c, DebugLog* log) { return s.trace(p, in, c, log); };
}

bool has_squash(const DebugLog& log, const std::string& detail) {
  for (const LogRecord& r : log.records)
    if (r.kind == LogKind::SQUASH && r.detail == detail) return true;
  return false;
}

std::set<std::pair<std::uint64_t, std::uint64_t>> victim_loads(const DebugLog& log, const std::string& cause) {
  std::set<std::pair<std::uint64_t, std::uint64_t>> out;
  for (const LogRecord& r : log.records)
    if (r.kind == LogKind::SQUASH && r.detail == cause + " victim load") out.insert({r.pc, r.addr});
  return out;
}

// ---- 1: detect agrees with a brute-force pairwise oracle ------------------

Outcome c1_detect_oracle() {
  const auto t0 = clock_type::now();
  CampaignConfig cfg = default_campaign();
  cfg.seed = 101;
  std::size_t batches = 0, flagged = 0, mismatches = 0;
  for (std::size_t k = 0; k < 1000; ++k) {
    const std::uint64_t seed = detail::program_seed(cfg.seed, k);
    GenConfig g = cfg.generator;
    g.rng_seed = seed;
    const Program p = generate_program(g);
    std::uint64_t fallbacks = 0;
    const std::vector<TestInput> ins = detail::batch_inputs(cfg, p, seed, fallbacks);
    TestSetup s = cfg.setup;
    s.cache.l2_seed = splitmix64(seed ^ 0x6c32ULL);
    Simulator sim(s.defense, s.pipeline, s.cache);
    std::vector<ContractTrace> ct;
    std::vector<MuTrace> mu;
    for (const TestInput& in : ins) {
      sim.context() = reset_context(sim.context(), s.reset, s.sandbox);
      mu.push_back(extract(sim.run(p, in, SimOptions{false, false}), s.format));
      ct.push_back(collect_contract_trace(p, in, s.contract));
    }
    std::set<std::pair<std::size_t, std::size_t>> got, want;
    for (const CandidatePair& c : detect_pairs(ct, mu)) got.insert({c.a, c.b});
    // Oracle: an input is a representative when no earlier input matches it
    // on both traces; report every same-class pair of representatives.
    std::vector<bool> rep(ins.size(), true);
    for (std::size_t i = 0; i < ins.size(); ++i)
      for (std::size_t j = 0; j < i && rep[i]; ++j)
        if (ct[j].observations == ct[i].observations && mu[j].payload == mu[i].payload) rep[i] = false;
    for (std::size_t i = 0; i < ins.size(); ++i)
      for (std::size_t j = i + 1; j < ins.size(); ++j)
        if (rep[i] && rep[j] && ct[i].observations == ct[j].observations) want.insert({i, j});
    mismatches += got != want;
    flagged += want.size();
    ++batches;
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && batches == 1000 && t < 120,
          std::to_string(batches) + "x140 batches, " + std::to_string(flagged) + " flagged pairs, " +
              std::to_string(mismatches) + " mismatching batches, " + fmt_s(t)};
}

// ---- 2: committed state equals the sequential interpreter -----------------

Outcome c2_arch_equivalence() {
  const auto t0 = clock_type::now();
  const std::vector<DefensePolicy> policies = {baseline_hooks(), invisi_hooks(0), invisi_hooks(),
                                               cleanup_hooks(0), cleanup_hooks(),  taint_hooks(0),
                                               taint_hooks(),    lfb_hooks(0),     lfb_hooks()};
  std::size_t cases = 0, bad = 0;
  for (std::uint64_t k = 0; k < 2000; ++k) {
    GenConfig g;
    g.rng_seed = splitmix64(0xa11ce + k);
    const Program p = generate_program(g);
    for (const TestInput& in : generate_inputs(g, 5)) {
      const DefensePolicy& d = policies[cases % policies.size()];
      CacheConfig cc;
      cc.l2_seed = k;
      const MicroArchContext ctx = reset_context(MicroArchContext(cc), ResetPolicy::FillOutsideSandbox, g.sandbox);
      const RunResult r = run_test(p, in, ctx, d, PipelineConfig{}, cc, SimOptions{false, true});
      bad += !(r.committed == execute_sequential(p, in));
      ++cases;
    }
  }
  const double t = seconds_since(t0);
  return {bad == 0 && cases >= 10000 && t < 300,
          std::to_string(cases) + " cases over 9 defense configs, " + std::to_string(bad) + " mismatches, " + fmt_s(t)};
}

// ---- 3: baseline campaign finds a Spectre-v1 style violation --------------

Outcome c3_baseline_campaign() {
  const auto t0 = clock_type::now();
  CampaignConfig cfg = default_campaign();
  cfg.seed = kBaselineSeed;
  cfg.max_test_cases = 2000;
  const CampaignResult r = run_campaign(cfg);
  const ViolationReport* hit = nullptr;
  for (const ViolationReport& rep : r.reports)
    if (rep.violation.validated && diff_logs(rep.violation).has_squashed_spec_load_address_diff()) {
      hit = &rep;
      break;
    }
  const double t = seconds_since(t0);
  std::string d = "seed " + std::to_string(kBaselineSeed) + ", " + std::to_string(r.stats.confirmed_violations) +
                  " confirmed in " + std::to_string(r.stats.test_cases_run) + " tests";
  if (r.stats.test_cases_to_first_violation) d += ", first after " + std::to_string(*r.stats.test_cases_to_first_violation);
  if (hit) d += ", " + hit->id + " shows a squashed speculative load with differing address";
  d += ", " + fmt_s(t);
  return {hit != nullptr && r.stats.test_cases_run <= 2000 && t < 60, d};
}

// ---- 4: store bypass under CT_COND ----------------------------------------

Outcome c4_v4() {
  const auto t0 = clock_type::now();
  const auto gs = corpus();
  const Gadget& g = find_gadget(gs, "V4_BYPASS");
  GadgetExpectation e;
  e.defense = baseline_hooks();
  e.contract = ContractId::ct_cond();
  const GadgetOutcome first = run_gadget(g, e);
  const GadgetOutcome again = run_gadget(g, e);
  bool gadget_ok = first.violates && again.violates;
  if (gadget_ok) {
    const Violation& a = first.violations.front();
    const Violation& b = again.violations.front();
    gadget_ok = a.mutrace_a == b.mutrace_a && a.mutrace_b == b.mutrace_b && a.log_a == b.log_a &&
                has_squash(a.log_a, "memory-order");
  }

  CampaignConfig cfg = default_campaign();
  cfg.seed = kV4Seed;
  cfg.program_count = 1000;
  cfg.max_test_cases = 50000;
  cfg.setup.contract = ContractId::ct_cond();
  const CampaignResult r = run_campaign(cfg);
  const ViolationReport* hit = nullptr;
  for (const ViolationReport& rep : r.reports) {
    const Violation& v = rep.violation;
    if (victim_loads(v.log_a, "memory-order") != victim_loads(v.log_b, "memory-order")) {
      hit = &rep;
      break;
    }
  }
  const double t = seconds_since(t0);
  std::string d = std::string("gadget ") + (gadget_ok ? "violates deterministically with a memory-order squash" : "FAILED") +
                  "; random seed " + std::to_string(kV4Seed) + ": ";
  d += hit ? hit->id + " has input-dependent memory-order victim loads" : std::string("none found");
  d += " in " + std::to_string(r.stats.test_cases_run) + " tests, " + fmt_s(t);
  return {gadget_ok && hit != nullptr && t < 600, d};
}

// ---- 5: gadget matrix -------------------------------------------------------

Outcome c5_gadget_matrix() {
  const auto t0 = clock_type::now();
  const auto gs = corpus();
  std::size_t held = 0, total = 0;
  std::string failures;
  bool shape = true;
  for (const char* name : {"UV1_EVICT", "UV3_SPEC_STORE", "UV4_SPLIT", "UV5_REORDER", "UV6_FIRST_LOAD", "KV3_TLB_STORE"}) {
    const Gadget& g = find_gadget(gs, name);
    bool violates_bug_on = false, clean_patched = false;
    for (const GadgetExpectation& e : g.expected) {
      const bool ok = expectation_holds(g, e);
      ++total;
      held += ok;
      if (!ok) failures += std::string(" ") + name + "[" + e.describe() + "]";
      if (ok && e.expected == Expected::VIOLATES && e.defense.bug_flags & ~NO_MSHR_PARTITION) violates_bug_on = true;
      if (ok && e.expected == Expected::CLEAN) clean_patched = true;
    }
    if (!violates_bug_on || !clean_patched) {
      shape = false;
      failures += std::string(" ") + name + "[matrix incomplete]";
    }
  }
  return {held == total && shape,
          std::to_string(held) + "/" + std::to_string(total) + " expectations hold" + failures + ", " + fmt_s(seconds_since(t0))};
}

// ---- 6: patched invisible speculation and MSHR amplification -------------

Outcome c6_invisi() {
  const auto t0 = clock_type::now();
  CampaignConfig cfg = default_campaign(DefenseId::INVISI, 0);
  cfg.seed = kInvisiSeed;
  cfg.program_count = 1000;
  cfg.max_test_cases = 100000;
  const CampaignResult def = run_campaign(cfg);
  set_preset(cfg, "TINY_MSHR");
  const CampaignResult tiny = run_campaign(cfg);
  std::optional<std::uint64_t> stall_at;
  std::uint64_t tests_before = 0;
  std::size_t program = 0;
  for (const ViolationReport& rep : tiny.reports) {
    const auto& tags = rep.violation.signature_tags;
    if (std::find(tags.begin(), tags.end(), "EXPOSE_STALL") != tags.end()) {
      stall_at = rep.program_index;
      break;
    }
  }
  if (stall_at) {
    program = *stall_at;
    tests_before = (program + 1) * static_cast<std::uint64_t>(cfg.inputs_per_program);
  }
  const double t = seconds_since(t0);
  std::string d = "DEFAULT: " + std::to_string(def.stats.confirmed_violations) + " confirmed in " +
                  std::to_string(def.stats.test_cases_run) + " tests; TINY_MSHR: " +
                  std::to_string(tiny.stats.confirmed_violations) + " confirmed";
  d += stall_at ? ", first EXPOSE_STALL within " + std::to_string(tests_before) + " tests" : ", no EXPOSE_STALL violation";
  d += ", " + fmt_s(t);
  return {def.stats.confirmed_violations == 0 && def.stats.test_cases_run == 100000 && stall_at.has_value() &&
              tests_before <= 100000 && t < 1200,
          d};
}

// ---- 7: trace format relations ----------------------------------------------

Outcome c7_formats() {
  const auto t0 = clock_type::now();
  std::map<MuTraceFormat, std::set<std::size_t>> progs;
  for (MuTraceFormat f : {MuTraceFormat::L1D_TLB, MuTraceFormat::MEM_ORDER, MuTraceFormat::BRANCH_PRED_ORDER}) {
    CampaignConfig cfg = default_campaign();
    cfg.seed = kFormatSeed;
    cfg.program_count = 200;
    cfg.setup.format = f;
    const CampaignResult r = run_campaign(cfg);
    progs[f] = {r.stats.violating_programs.begin(), r.stats.violating_programs.end()};
  }
  const auto& l1 = progs[MuTraceFormat::L1D_TLB];
  const auto& mo = progs[MuTraceFormat::MEM_ORDER];
  const auto& bpo = progs[MuTraceFormat::BRANCH_PRED_ORDER];
  const bool subset = std::includes(mo.begin(), mo.end(), l1.begin(), l1.end());
  std::vector<std::size_t> shared;
  std::set_intersection(l1.begin(), l1.end(), bpo.begin(), bpo.end(), std::back_inserter(shared));
  return {subset && !shared.empty() && !l1.empty(),
          "violating programs L1D_TLB " + std::to_string(l1.size()) + ", MEM_ORDER " + std::to_string(mo.size()) +
              ", BRANCH_PRED_ORDER " + std::to_string(bpo.size()) + "; L1D_TLB subset of MEM_ORDER: " +
              (subset ? "yes" : "no") + "; shared with BRANCH_PRED_ORDER: " + std::to_string(shared.size()) + ", " +
              fmt_s(seconds_since(t0))};
}

// ---- 8: OPT vs NAIVE throughput ---------------------------------------------

Outcome c8_throughput() {
  CampaignConfig cfg = default_campaign();
  cfg.seed = 1;
  cfg.program_count = 100;
  const CampaignResult opt = run_campaign(cfg);
  cfg.mode = CampaignMode::NAIVE;
  const CampaignResult naive = run_campaign(cfg);
  const double ratio = naive.stats.throughput > 0 ? opt.stats.throughput / naive.stats.throughput : 0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "OPT %.0f tests/s, NAIVE %.0f tests/s, ratio %.1fx", opt.stats.throughput,
                naive.stats.throughput, ratio);
  return {ratio >= 5.0 && opt.stats.test_cases_run == 14000 && naive.stats.test_cases_run == 14000, buf};
}

// ---- 9: byte-identical reports on re-run ----------------------------------

std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "summary.json") continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    out[std::filesystem::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

nlohmann::json summary_without_timing(const std::filesystem::path& dir) {
  std::ifstream is(dir / "summary.json");
  nlohmann::json j = nlohmann::json::parse(is);
  j.erase("timing");
  return j;
}

Outcome c9_determinism() {
  const auto base = std::filesystem::temp_directory_path() / "relfuzz_acceptance_c9";
  std::filesystem::remove_all(base);
  CampaignConfig cfg = default_campaign();
  cfg.seed = kDeterminismSeed;
  cfg.program_count = 40;
  cfg.workers = 1;
  cfg.output_dir = (base / "a").string();
  run_campaign(cfg);
  cfg.output_dir = (base / "b").string();
  run_campaign(cfg);
  const auto a = read_tree(base / "a"), b = read_tree(base / "b");
  const bool same = a == b && summary_without_timing(base / "a") == summary_without_timing(base / "b");
  std::filesystem::remove_all(base);
  return {same && !a.empty(), std::to_string(a.size()) + " report files compared, " + (same ? "identical" : "DIFFERENT")};
}

// ---- 10: validation drops context artifacts and keeps real leaks ---------

Outcome c10_validation() {
  const auto gs = corpus();
  const Gadget& v1 = find_gadget(gs, "V1_CACHE");
  const TestSetup s = gadget_setup(v1, v1.expected.front());
  const Program& p = v1.program;
  const TestInput& in = v1.input_pairs.front().first;

  // Same input after two different predecessor histories.
  Simulator sim(s.defense, s.pipeline, s.cache);
  for (int i = 0; i < 16; ++i) {
    sim.context() = reset_context(sim.context(), s.reset, s.sandbox);
    sim.run(p, in, SimOptions{false, false});
  }
  TestInput twin = in;
  twin.memory[0x900] ^= 0x5a;  // never read
  Violation art;
  art.program = p;
  art.contract = s.contract;
  art.input_a = in;
  art.input_b = twin;
  art.ctx_a = s.fresh_context();
  art.ctx_b = reset_context(sim.context(), s.reset, s.sandbox);
  art.mutrace_a = s.trace(p, in, art.ctx_a);
  art.mutrace_b = s.trace(p, twin, art.ctx_b);
  const bool was_candidate = !mutrace_equal(art.mutrace_a, art.mutrace_b) &&
                             collect_contract_trace(p, in, s.contract) == collect_contract_trace(p, twin, s.contract);
  validate(art, runner(s, p));

  const Gadget& uv1 = find_gadget(gs, "UV1_EVICT");
  const GadgetOutcome o = run_gadget(uv1, uv1.expected.front());
  const bool uv1_ok = o.violates && !o.violations.empty() && o.violations.front().validated;
  return {was_candidate && !art.validated && uv1_ok,
          std::string("context artifact ") + (was_candidate ? "flagged then " : "NOT flagged, ") +
              (art.validated ? "VALIDATED" : "invalidated") + "; UV1 candidate " + (uv1_ok ? "validated" : "DROPPED")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"detect matches brute-force oracle", c1_detect_oracle},
      {"simulator commits match interpreter", c2_arch_equivalence},
      {"baseline CT_SEQ campaign finds validated leak", c3_baseline_campaign},
      {"store bypass violates under CT_COND", c4_v4},
      {"gadget matrix", c5_gadget_matrix},
      {"patched INVISI clean at DEFAULT, leaks at TINY_MSHR", c6_invisi},
      {"trace format relations", c7_formats},
      {"OPT throughput >= 5x NAIVE", c8_throughput},
      {"re-run reports byte-identical", c9_determinism},
      {"validation filters context artifacts", c10_validation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << (i + 1) << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << " ("
              << o.detail << ")" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
