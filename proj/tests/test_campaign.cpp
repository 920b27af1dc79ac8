#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "relfuzz/config.hpp"
#include "relfuzz/gadgets.hpp"

namespace relfuzz {
namespace {

CampaignConfig small(std::uint64_t seed, int programs) {
  CampaignConfig c = default_campaign();
  c.seed = seed;
  c.program_count = programs;
  return c;
}

TEST(Presets, Values) {
  const CacheConfig base;
  const CacheConfig tiny = amplification_preset("TINY_MSHR").apply(base);
  EXPECT_EQ(tiny.l1_ways, 2);
  EXPECT_EQ(tiny.mshr_count, 2);
  const CacheConfig def = amplification_preset("DEFAULT").apply(tiny);
  EXPECT_EQ(def.l1_ways, 8);
  EXPECT_EQ(def.mshr_count, 256);
  CacheConfig odd = base;
  odd.mshr_count = 7;
  const CacheConfig sc = amplification_preset("SMALL_CACHE").apply(odd);
  EXPECT_EQ(sc.l1_ways, 2);
  EXPECT_EQ(sc.mshr_count, 7);
  EXPECT_THROW(amplification_preset("HUGE"), std::invalid_argument);
}

TEST(Campaign, ZeroBudgetIsEmpty) {
  CampaignConfig c = small(1, 10);
  c.max_test_cases = 0;
  const CampaignResult r = run_campaign(c);
  EXPECT_EQ(r.stats.programs_run, 0u);
  EXPECT_EQ(r.stats.test_cases_run, 0u);
  EXPECT_TRUE(r.reports.empty());
}

TEST(Campaign, TestCaseBudgetTruncates) {
  CampaignConfig c = small(1, 10);
  c.max_test_cases = 300;
  const CampaignResult r = run_campaign(c);
  EXPECT_EQ(r.stats.programs_run, 3u);
  EXPECT_EQ(r.stats.test_cases_run, 300u);
}

TEST(Campaign, StatsAccounting) {
  const CampaignResult r = run_campaign(small(2, 8));
  EXPECT_EQ(r.stats.test_cases_run, r.stats.programs_run * 140u);
  EXPECT_EQ(r.stats.candidates, r.stats.confirmed_violations + r.stats.invalidated_candidates);
  EXPECT_EQ(r.stats.confirmed_violations, r.reports.size());
}

TEST(Campaign, BaselineFindsValidatedViolations) {
  const CampaignResult r = run_campaign(small(7, 10));
  ASSERT_GT(r.stats.confirmed_violations, 0u);
  for (const ViolationReport& rep : r.reports) {
    EXPECT_TRUE(rep.violation.validated);
    EXPECT_EQ(collect_contract_trace(rep.violation.program, rep.violation.input_a, rep.setup.contract),
              collect_contract_trace(rep.violation.program, rep.violation.input_b, rep.setup.contract));
  }
}

TEST(Campaign, SingleWorkerDeterministic) {
  const CampaignConfig c = small(7, 6);
  const CampaignResult a = run_campaign(c), b = run_campaign(c);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i)
    EXPECT_EQ(violation_json(a.reports[i]).dump(), violation_json(b.reports[i]).dump());
}

TEST(Campaign, WorkerCountDoesNotChangeReports) {
  CampaignConfig c = small(7, 6);
  const CampaignResult a = run_campaign(c);
  c.workers = 3;
  const CampaignResult b = run_campaign(c);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) EXPECT_EQ(a.reports[i].id, b.reports[i].id);
}

TEST(Campaign, ViolationBudgetStopsEarly) {
  CampaignConfig c = small(7, 50);
  c.max_violations = 1;
  const CampaignResult r = run_campaign(c);
  EXPECT_GE(r.stats.confirmed_violations, 1u);
  EXPECT_LT(r.stats.programs_run, 50u);
}

TEST(Campaign, WritesReportsAndSummary) {
  const auto dir = std::filesystem::temp_directory_path() / "relfuzz_campaign_test";
  std::filesystem::remove_all(dir);
  CampaignConfig c = small(7, 6);
  c.output_dir = dir.string();
  const CampaignResult r = run_campaign(c);
  ASSERT_TRUE(std::filesystem::exists(dir / "summary.json"));
  std::ifstream is(dir / "summary.json");
  const nlohmann::json s = nlohmann::json::parse(is);
  EXPECT_EQ(s["schema"], "relfuzz.summary");
  EXPECT_EQ(s["stats"]["confirmed_violations"], r.stats.confirmed_violations);
  for (const auto& rep : r.reports) {
    EXPECT_TRUE(std::filesystem::exists(dir / "violations" / (rep.id + ".json")));
    EXPECT_TRUE(std::filesystem::exists(dir / "violations" / (rep.id + ".a.ndjson")));
  }
  std::filesystem::remove_all(dir);
}

// Runs a gadget pair as OPT (one simulator, context carried over) or NAIVE
// (fresh simulator per input) and returns the confirmed violation count.
std::size_t confirmed_on_gadget(const Gadget& g, const GadgetExpectation& e, CampaignMode mode) {
  const TestSetup s = gadget_setup(g, e);
  const auto& [a, b] = g.input_pairs.front();
  const std::vector<TestInput> ins = {a, b};
  std::vector<ContractTrace> ct;
  std::vector<MuTrace> mu;
  std::vector<MicroArchContext> ctxs;
  Simulator sim(s.defense, s.pipeline, s.cache);
  for (const TestInput& in : ins) {
    if (mode == CampaignMode::NAIVE) sim = Simulator(s.defense, s.pipeline, s.cache);
    sim.context() = reset_context(sim.context(), s.reset, s.sandbox);
    ctxs.push_back(sim.context());
    mu.push_back(extract(sim.run(g.program, in, SimOptions{false, false}), s.format));
    ct.push_back(collect_contract_trace(g.program, in, s.contract));
  }
  std::size_t n = 0;
  for (Violation& v : detect(g.program, ins, ct, mu, ctxs, s.contract)) {
    validate(v, [&](const TestInput& in, const MicroArchContext& c, DebugLog* log) { return s.trace(g.program, in, c, log); });
    n += v.validated;
  }
  return n;
}

TEST(Campaign, OptAndNaiveBothConfirmUv1) {
  const auto gs = corpus();
  const Gadget& g = find_gadget(gs, "UV1_EVICT");
  const GadgetExpectation& bug_on = g.expected.front();
  ASSERT_EQ(bug_on.expected, Expected::VIOLATES);
  EXPECT_EQ(confirmed_on_gadget(g, bug_on, CampaignMode::OPT), 1u);
  EXPECT_EQ(confirmed_on_gadget(g, bug_on, CampaignMode::NAIVE), 1u);
}

TEST(Campaign, NaiveRunsSameTests) {
  CampaignConfig c = small(3, 3);
  c.inputs_per_program = 20;
  c.naive_startup_tests = 1;
  const CampaignResult opt = run_campaign(c);
  c.mode = CampaignMode::NAIVE;
  const CampaignResult naive = run_campaign(c);
  EXPECT_EQ(opt.stats.test_cases_run, naive.stats.test_cases_run);
}

TEST(Config, ParsesNestedSections) {
  const CampaignConfig c = parse_campaign_config(
      "seed: 9\nprograms: 12\ninputs_per_program: 40\nmode: NAIVE\n"
      "contract:\n  kind: CT_COND\n  window: 32\n"
      "defense:\n  id: CLEANUP\n  bug_flags: [SKIP_SPLIT_CLEANUP]\n"
      "preset: TINY_MSHR\ncache:\n  mshr_count: 4\n"
      "budget:\n  max_test_cases: 100\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.program_count, 12);
  EXPECT_EQ(c.mode, CampaignMode::NAIVE);
  EXPECT_EQ(c.setup.contract, ContractId::ct_cond(32));
  EXPECT_EQ(c.setup.defense, cleanup_hooks(SKIP_SPLIT_CLEANUP));
  EXPECT_EQ(c.setup.cache.l1_ways, 2);
  EXPECT_EQ(c.setup.cache.mshr_count, 4);
  EXPECT_EQ(c.max_test_cases, std::optional<std::uint64_t>(100));
}

TEST(Config, TaintDefaultsToLargeSandbox) {
  const CampaignConfig c = parse_campaign_config("defense:\n  id: TAINT\n");
  EXPECT_EQ(c.setup.sandbox.page_count, 128);
  EXPECT_EQ(c.generator.sandbox, c.setup.sandbox);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_campaign_config("sed: 1\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("defense:\n  id: MAGIC\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("defense:\n  id: BASELINE\n  bug_flags: [EVICT_ON_SPEC_MISS]\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("preset: HUGE\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("programs: many\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("programs: 0\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("contract:\n  kind: CT_COND\n  window: 0\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("generator:\n  opcode_weights:\n    NOP: 1\n"), ConfigError);
  EXPECT_THROW(parse_campaign_config("a: [\n"), ConfigError);
  EXPECT_THROW(load_campaign_config("/nonexistent/cfg.yaml"), ConfigError);
}

TEST(Config, SampleConfigsParse) {
  for (const auto& e : std::filesystem::directory_iterator(std::filesystem::path(RELFUZZ_GADGET_DIR).parent_path() / "configs"))
    EXPECT_NO_THROW(load_campaign_config(e.path().string())) << e.path();
}

}  // namespace
}  // namespace relfuzz
