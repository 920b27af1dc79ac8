#include <gtest/gtest.h>

#include "helpers.hpp"
#include "relfuzz/mutrace.hpp"

namespace relfuzz {
namespace {

using testing::v1_input;
using testing::v1_program;

const std::vector<MuTraceFormat> kFormats = {MuTraceFormat::L1D_TLB, MuTraceFormat::BP_STATE, MuTraceFormat::MEM_ORDER,
                                             MuTraceFormat::BRANCH_PRED_ORDER};

TEST(Extract, AluOnlyL1dTlbIsEmpty) {
  const TestSetup s;
  const RunResult r = s.run(testing::minimal_program(), TestInput{}, s.fresh_context(), false);
  EXPECT_TRUE(extract(r, MuTraceFormat::L1D_TLB).payload.empty());
  EXPECT_TRUE(extract(r, MuTraceFormat::MEM_ORDER).payload.empty());
}

TEST(Extract, Deterministic) {
  const TestSetup s;
  const RunResult r = s.run(v1_program(), v1_input(0x100), s.fresh_context(), false);
  for (MuTraceFormat f : kFormats) EXPECT_EQ(extract(r, f), extract(r, f));
}

TEST(Extract, MemOrderDiffersWithL1dOnV1) {
  TestSetup s;
  const MicroArchContext ctx = s.fresh_context();
  s.format = MuTraceFormat::L1D_TLB;
  ASSERT_NE(s.trace(v1_program(), v1_input(0x100), ctx), s.trace(v1_program(), v1_input(0x400), ctx));
  s.format = MuTraceFormat::MEM_ORDER;
  EXPECT_NE(s.trace(v1_program(), v1_input(0x100), ctx), s.trace(v1_program(), v1_input(0x400), ctx));
}

TEST(Extract, NoPrimedLinesInPayload) {
  const TestSetup s;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    GenConfig g = testing::gen(seed);
    const Program p = generate_program(g);
    const MuTrace t = s.trace(p, generate_inputs(g, 1)[0], s.fresh_context());
    for (std::uint64_t l : decode_state(t).lines) EXPECT_LT(l, g.sandbox.size());
  }
}

TEST(MutraceEqual, Reflexive) {
  const TestSetup s;
  const MuTrace t = s.trace(v1_program(), v1_input(0x100), s.fresh_context());
  EXPECT_TRUE(mutrace_equal(t, t));
}

TEST(MutraceEqual, FormatMismatchThrows) {
  EXPECT_THROW(mutrace_equal(MuTrace{MuTraceFormat::L1D_TLB, {}}, MuTrace{MuTraceFormat::MEM_ORDER, {}}), FormatMismatch);
  EXPECT_THROW(mutrace_diff(MuTrace{MuTraceFormat::L1D_TLB, {}}, MuTrace{MuTraceFormat::BP_STATE, {}}), FormatMismatch);
}

TEST(MutraceEqual, V1PairDiffNamesLines) {
  const TestSetup s;
  const MicroArchContext ctx = s.fresh_context();
  const MuTrace a = s.trace(v1_program(), v1_input(0x100), ctx);
  const MuTrace b = s.trace(v1_program(), v1_input(0x400), ctx);
  EXPECT_FALSE(mutrace_equal(a, b));
  const MuTraceDiff d = mutrace_diff(a, b);
  EXPECT_NE(std::find(d.only_a.begin(), d.only_a.end(), "line 0x100"), d.only_a.end());
  EXPECT_NE(std::find(d.only_b.begin(), d.only_b.end(), "line 0x400"), d.only_b.end());
}

TEST(MutraceDiff, OrderedFormatsReportFirstDivergence) {
  TestSetup s;
  s.format = MuTraceFormat::MEM_ORDER;
  const MicroArchContext ctx = s.fresh_context();
  const MuTraceDiff d = mutrace_diff(s.trace(v1_program(), v1_input(0x100), ctx), s.trace(v1_program(), v1_input(0x400), ctx));
  ASSERT_TRUE(d.first_divergence);
  EXPECT_EQ(*d.first_divergence, 1u);
  EXPECT_TRUE(mutrace_diff(MuTrace{MuTraceFormat::MEM_ORDER, {}}, MuTrace{MuTraceFormat::MEM_ORDER, {}}).empty());
}

TEST(Formats, NamesRoundTrip) {
  for (MuTraceFormat f : kFormats) EXPECT_EQ(parse_format(format_name(f)), f);
  EXPECT_FALSE(parse_format("L2"));
}

}  // namespace
}  // namespace relfuzz
