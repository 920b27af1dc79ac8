#include <gtest/gtest.h>

#include "helpers.hpp"
#include "relfuzz/relational.hpp"
#include "relfuzz/report.hpp"

namespace relfuzz {
namespace {

using testing::v1_input;
using testing::v1_program;

ContractTrace ct(std::uint64_t v) { return ContractTrace({{ObsKind::PC, v}}); }
MuTrace mu(std::uint8_t v) { return MuTrace{MuTraceFormat::L1D_TLB, {v}}; }

RunFn runner(const TestSetup& s, const Program& p) {
  return [&s, p](const TestInput& in, const MicroArchContext& c, DebugLog* log) { return s.trace(p, in, c, log); };
}

TEST(Detect, AllEqualGivesNothing) {
  EXPECT_TRUE(detect_pairs({ct(1), ct(1), ct(2)}, {mu(0), mu(0), mu(0)}).empty());
}

TEST(Detect, OneCandidate) {
  const auto pairs = detect_pairs({ct(1), ct(1)}, {mu(0), mu(1)});
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].a, 0u);
  EXPECT_EQ(pairs[0].b, 1u);
}

TEST(Detect, DifferentClassesNeverPair) {
  EXPECT_TRUE(detect_pairs({ct(1), ct(2)}, {mu(0), mu(1)}).empty());
}

TEST(Detect, RepresentativesOnly) {
  // Class {0,1,2,3}: mutraces x,x,y,z -> representatives 0,2,3.
  const auto pairs = detect_pairs({ct(1), ct(1), ct(1), ct(1)}, {mu(5), mu(5), mu(6), mu(7)});
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].a, 0u);
  EXPECT_EQ(pairs[0].b, 2u);
  EXPECT_EQ(pairs[2].a, 2u);
  EXPECT_EQ(pairs[2].b, 3u);
}

TEST(Detect, MisalignedListsRejected) {
  EXPECT_THROW(detect(v1_program(), {TestInput{}}, {ct(1), ct(1)}, {mu(0), mu(1)}, {MicroArchContext{}, MicroArchContext{}}),
               std::invalid_argument);
}

TEST(Detect, DigestCollisionDoesNotMerge) {
  ContractTrace a = ct(1), b = ct(2);
  b.hash = a.hash;
  EXPECT_EQ(group_by_contract({a, b}).size(), 2u);
  EXPECT_TRUE(detect_pairs({a, b}, {mu(0), mu(1)}).empty());
}

TEST(Validate, IdenticalContextReproduces) {
  const TestSetup s;
  const Program p = v1_program();
  const MicroArchContext ctx = s.fresh_context();
  const std::vector<TestInput> ins = {v1_input(0x100), v1_input(0x400)};
  const auto cts = std::vector<ContractTrace>{collect_contract_trace(p, ins[0], s.contract), collect_contract_trace(p, ins[1], s.contract)};
  const auto mus = std::vector<MuTrace>{s.trace(p, ins[0], ctx), s.trace(p, ins[1], ctx)};
  auto vs = detect(p, ins, cts, mus, {ctx, ctx}, s.contract);
  ASSERT_EQ(vs.size(), 1u);
  validate(vs[0], runner(s, p));
  EXPECT_TRUE(vs[0].validated);
  EXPECT_EQ(vs[0].common_ctx, ctx);
  EXPECT_EQ(vs[0].mutrace_a, mus[0]);
  EXPECT_FALSE(vs[0].log_a.records.empty());
}

TEST(Validate, ContextArtifactIsDropped) {
  // Same input after two different predecessors: the predictor state alone
  // decides whether the transient load runs.
  const TestSetup s;
  const Program p = v1_program();
  const TestInput trained = v1_input(0x100);  // branch taken architecturally
  Simulator sim(s.defense, s.pipeline, s.cache);
  sim.context() = s.fresh_context();
  for (int i = 0; i < 16; ++i) {
    sim.context() = reset_context(sim.context(), s.reset, s.sandbox);
    sim.run(p, trained, SimOptions{false, false});
  }
  const MicroArchContext ctx_a = s.fresh_context();
  const MicroArchContext ctx_b = reset_context(sim.context(), s.reset, s.sandbox);
  TestInput a = v1_input(0x100), b = v1_input(0x100);
  b.memory[0x900] = 7;  // never read
  Violation v;
  v.program = p;
  v.input_a = a;
  v.input_b = b;
  v.ctx_a = ctx_a;
  v.ctx_b = ctx_b;
  v.mutrace_a = s.trace(p, a, ctx_a);
  v.mutrace_b = s.trace(p, b, ctx_b);
  ASSERT_FALSE(mutrace_equal(v.mutrace_a, v.mutrace_b));
  validate(v, runner(s, p));
  EXPECT_FALSE(v.validated);
}

TEST(DiffLogs, IdenticalLogsNothingHighlighted) {
  const TestSetup s;
  DebugLog log;
  s.trace(v1_program(), v1_input(0x100), s.fresh_context(), &log);
  const SideBySideReport rep = diff_logs(log, log);
  EXPECT_EQ(rep.highlighted_count(), 0u);
  EXPECT_FALSE(rep.rows.empty());
}

TEST(DiffLogs, V1PairSpeculativeLoadDiffers) {
  const TestSetup s;
  const MicroArchContext ctx = s.fresh_context();
  DebugLog la, lb;
  s.trace(v1_program(), v1_input(0x100), ctx, &la);
  s.trace(v1_program(), v1_input(0x400), ctx, &lb);
  const SideBySideReport rep = diff_logs(la, lb);
  EXPECT_TRUE(rep.has_squashed_spec_load_address_diff());
  for (const SideBySideRow& r : rep.rows) {
    if (!r.highlighted) continue;
    const LogRecord& rec = r.a ? *r.a : *r.b;
    EXPECT_EQ(rec.pc, pc_of(1, 1));
  }
  EXPECT_FALSE(rep.squashes_a.empty());
  EXPECT_NE(render_side_by_side(rep).find("squashed"), std::string::npos);
}

TEST(Signatures, EmptyRuleListLeavesViolationsUntouched) {
  std::vector<Violation> vs(3);
  const SignaturePartition part = filter_by_signature(vs, {});
  EXPECT_EQ(part.untagged.size(), 3u);
  EXPECT_TRUE(part.by_tag.empty());
  for (const auto& v : vs) EXPECT_TRUE(v.signature_tags.empty());
}

TEST(Signatures, FailingRuleIsIsolated) {
  std::vector<Violation> vs(1);
  const std::vector<SignatureRule> rules = {
      {"BROKEN", [](const Violation&) -> bool { throw std::runtime_error("boom"); }},
      {"ALWAYS", [](const Violation&) { return true; }},
  };
  const SignaturePartition part = filter_by_signature(vs, rules);
  EXPECT_EQ(vs[0].signature_tags, std::vector<std::string>{"ALWAYS"});
  ASSERT_EQ(vs[0].rule_errors.size(), 1u);
  EXPECT_NE(vs[0].rule_errors[0].find("BROKEN"), std::string::npos);
  EXPECT_EQ(part.by_tag.at("ALWAYS").size(), 1u);
}

TEST(Report, JsonRoundTrip) {
  const TestSetup s;
  const Program p = v1_program();
  const MicroArchContext ctx = s.fresh_context();
  Violation v;
  v.program = p;
  v.contract = s.contract;
  v.input_a = v1_input(0x100);
  v.input_b = v1_input(0x400);
  v.contract_trace = collect_contract_trace(p, v.input_a, s.contract);
  v.ctx_a = v.ctx_b = ctx;
  validate(v, runner(s, p));
  ASSERT_TRUE(v.validated);
  ViolationReport r{violation_id(3, 0, 70), 3, 0xabc, s, v};
  const nlohmann::json j = violation_json(r);
  EXPECT_EQ(j["schema"], "relfuzz.violation");
  EXPECT_EQ(j["id"], "v00003_0_70");
  const ViolationReport back = violation_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.setup, s);
  EXPECT_EQ(back.violation.program, p);
  EXPECT_EQ(back.violation.input_b, v.input_b);
  EXPECT_EQ(back.violation.ctx_a, ctx);
  EXPECT_EQ(back.violation.mutrace_a, v.mutrace_a);
  EXPECT_EQ(violation_json(back)["context_a"], j["context_a"]);
}

TEST(Report, RejectsOtherSchemas) {
  EXPECT_THROW(violation_from_json(nlohmann::json{{"schema", "x"}}), std::invalid_argument);
  EXPECT_THROW(violation_from_json(nlohmann::json{{"schema", "relfuzz.violation"}, {"version", 99}}), std::invalid_argument);
}

TEST(DebugLogFormat, NdjsonRoundTrip) {
  const TestSetup s;
  DebugLog log;
  s.trace(v1_program(), v1_input(0x100), s.fresh_context(), &log);
  const std::string text = to_ndjson(log);
  EXPECT_EQ(from_ndjson(text), log);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(log.records.size()) + 1);
}

}  // namespace
}  // namespace relfuzz
