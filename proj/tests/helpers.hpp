#pragma once

#include <string>

#include "relfuzz/asm.hpp"
#include "relfuzz/generator.hpp"
#include "relfuzz/setup.hpp"

namespace relfuzz::testing {

// Slow load feeds a branch that is architecturally taken but predicted
// not-taken; .bb1 loads from R2 transiently.
inline const char* kV1Asm =
    ".bb0:\n"
    "AND R0, 4095\n"
    "LOAD.8 R1, [SB + R0]\n"
    "CMP R1, 0\n"
    "JZ .bb2\n"
    "JMP .bb1\n"
    ".bb1:\n"
    "AND R2, 4095\n"
    "LOAD.8 R3, [SB + R2]\n"
    "JMP .bb2\n"
    ".bb2:\n"
    "EXIT\n";

inline Program v1_program() { return parse_asm(kV1Asm); }

inline TestInput v1_input(std::uint64_t secret) {
  TestInput in;
  in.regs[2] = secret;
  return in;
}

inline Program minimal_program() { return parse_asm(".bb0:\nMOVI R0, 1\nEXIT\n"); }

inline GenConfig gen(std::uint64_t seed) {
  GenConfig g;
  g.rng_seed = seed;
  return g;
}

inline std::size_t resident_count(const MicroArchContext& c) {
  std::size_t n = 0;
  for (int s = 0; s < c.sets(); ++s) n += c.set_lines(s).size();
  return n;
}

}  // namespace relfuzz::testing
