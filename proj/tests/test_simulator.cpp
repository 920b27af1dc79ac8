#include <gtest/gtest.h>

#include <map>
#include <set>

#include "helpers.hpp"
#include "relfuzz/mutrace.hpp"

namespace relfuzz {
namespace {

using testing::gen;
using testing::resident_count;

TEST(Simulator, Deterministic) {
  const TestSetup s;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    GenConfig g = gen(seed);
    const Program p = generate_program(g);
    const TestInput in = generate_inputs(g, 1)[0];
    const MicroArchContext ctx = s.fresh_context();
    const RunResult a = s.run(p, in, ctx, true);
    const RunResult b = s.run(p, in, ctx, true);
    ASSERT_EQ(a.final_ctx, b.final_ctx);
    ASSERT_EQ(a.log, b.log);
    ASSERT_EQ(a.mem_events, b.mem_events);
    ASSERT_EQ(a.cycles, b.cycles);
  }
}

TEST(Simulator, CommittedStateMatchesInterpreter) {
  Simulator sim(baseline_hooks(), PipelineConfig{}, CacheConfig{});
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    GenConfig g = gen(seed);
    const Program p = generate_program(g);
    for (const TestInput& in : generate_inputs(g, 5)) {
      sim.context() = reset_context(sim.context(), ResetPolicy::FillOutsideSandbox, g.sandbox);
      const RunResult r = sim.run(p, in, SimOptions{false, true});
      ASSERT_EQ(r.committed, execute_sequential(p, in)) << render_asm(p);
    }
  }
}

TEST(Simulator, AluOnlyRunTouchesNothing) {
  const Program p = parse_asm(".bb0:\nMOVI R0, 1\nADD R0, R1\nXOR R2, R0\nCMP R2, 5\nEXIT\n");
  const MicroArchContext empty = reset_context(MicroArchContext{}, ResetPolicy::DirectInvalidate, SandboxConfig{});
  const RunResult r = run_test(p, TestInput{}, empty, baseline_hooks());
  EXPECT_EQ(resident_count(r.final_ctx), 0u);
  EXPECT_TRUE(r.final_ctx.tlb().empty());
  EXPECT_LE(r.cycles, 100u);
  EXPECT_TRUE(extract(r, MuTraceFormat::L1D_TLB).payload.empty());
}

TEST(Simulator, SpeculativeLoadFillsUnderBaseline) {
  const TestSetup s;
  const RunResult r = s.run(testing::v1_program(), testing::v1_input(0x100), s.fresh_context(), true);
  EXPECT_TRUE(r.final_ctx.contains(0x100));
  EXPECT_EQ(r.branch_squashes, 1u);
  EXPECT_EQ(r.committed.regs[3], 0u);
}

TEST(Simulator, OracleBranchPredictionNeverSquashes) {
  TestSetup s;
  s.pipeline.oracle_branch_prediction = true;
  const RunResult r = s.run(testing::v1_program(), testing::v1_input(0x100), s.fresh_context(), false);
  EXPECT_EQ(r.branch_squashes, 0u);
  EXPECT_FALSE(r.final_ctx.contains(0x100));
}

TEST(Simulator, CacheSanity) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    TestSetup s;
    s.cache.l1_ways = 2;
    s.cache.l2_seed = seed;
    GenConfig g = gen(seed);
    const Program p = generate_program(g);
    const RunResult r = s.run(p, generate_inputs(g, 1)[0], s.fresh_context(), true);
    for (int set = 0; set < r.final_ctx.sets(); ++set) ASSERT_LE(r.final_ctx.set_lines(set).size(), 2u);
    // Each fill is preceded by a miss of the same line.
    std::map<std::uint64_t, int> outstanding;
    for (const LogRecord& rec : r.log.records) {
      if (rec.kind == LogKind::L1_MISS) ++outstanding[rec.addr];
      if (rec.kind == LogKind::L1_FILL) {
        ASSERT_GT(outstanding[rec.addr], 0) << rec.addr;
      }
    }
  }
}

TEST(Simulator, ReferenceLruReplay) {
  // Replaying fills and evictions over the starting context reproduces the final residency.
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    TestSetup s;
    GenConfig g = gen(seed);
    const Program p = generate_program(g);
    const MicroArchContext start = s.fresh_context();
    const RunResult r = s.run(p, generate_inputs(g, 1)[0], start, true);
    std::set<std::uint64_t> lines;
    for (std::uint64_t l : start.resident_lines()) lines.insert(l);
    for (const LogRecord& rec : r.log.records) {
      if (rec.kind == LogKind::L1_FILL) lines.insert(rec.addr);
      if (rec.kind == LogKind::L1_EVICT) lines.erase(rec.addr);
      if (rec.kind == LogKind::CLEANUP && rec.detail == "remove") lines.erase(rec.addr);
      if (rec.kind == LogKind::CLEANUP && rec.detail == "restore") lines.insert(rec.addr);
    }
    const auto fin = r.final_ctx.resident_lines();
    ASSERT_EQ(std::set<std::uint64_t>(fin.begin(), fin.end()), lines) << render_asm(p);
  }
}

TEST(Simulator, StoreBypassSquashesOnMemoryOrder) {
  TestSetup s;
  const Program p = parse_asm(
      ".bb0:\nAND R0, 4095\nLOAD.8 R1, [SB + R0]\nADD R1, R2\nAND R1, 4095\nSTORE.8 [SB + R1], R3\n"
      "AND R2, 4095\nLOAD.8 R4, [SB + R2]\nEXIT\n");
  TestInput in;
  in.regs[2] = 0x800;
  in.regs[3] = 9;
  const RunResult r = s.run(p, in, s.fresh_context(), true);
  EXPECT_EQ(r.memory_order_squashes, 1u);
  EXPECT_EQ(r.committed.regs[4], 9u);
  s.pipeline.store_bypass = false;
  EXPECT_EQ(s.run(p, in, s.fresh_context(), false).memory_order_squashes, 0u);
}

TEST(Simulator, SpeculationStaysInsideRob) {
  TestSetup s;
  s.pipeline.rob_size = 8;
  const RunResult r = s.run(testing::v1_program(), testing::v1_input(0x100), s.fresh_context(), true);
  std::uint64_t max_in_flight = 0, in_flight = 0;
  for (const LogRecord& rec : r.log.records) {
    if (rec.kind == LogKind::FETCH) ++in_flight;
    if (rec.kind == LogKind::COMMIT && in_flight) --in_flight;
    if (rec.kind == LogKind::SQUASH && rec.detail.find("victim") == std::string::npos) in_flight = 0;
    max_in_flight = std::max(max_in_flight, in_flight);
  }
  EXPECT_LE(max_in_flight, 8u);
}

}  // namespace
}  // namespace relfuzz
