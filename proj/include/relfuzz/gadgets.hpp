#pragma once

// Hand-written regression gadgets. Each gadget is an asm file whose "#@"
// comment lines carry metadata (parse_asm ignores them):
//
//   #@ gadget NAME
//   #@ contract CT_SEQ|CT_COND|ARCH_SEQ      contract the input pairs agree under
//   #@ sandbox_pages N                       default 1
//   #@ l2_seed N                             default 0
//   #@ input NAME [Rk=V]... [M<w>@OFF=V]...  unlisted registers and bytes are 0
//   #@ pair A B
//   #@ expect VIOLATES|CLEAN DEFENSE[+FLAG]... [contract=C] [preset=P] [format=F] [tag=T]
//
// See docs/formats.md.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relfuzz/asm.hpp"
#include "relfuzz/campaign.hpp"

namespace relfuzz {

enum class Expected : std::uint8_t { VIOLATES, CLEAN };

inline const char* expected_name(Expected e) { return e == Expected::VIOLATES ? "VIOLATES" : "CLEAN"; }

struct GadgetExpectation {
  Expected expected = Expected::VIOLATES;
  DefensePolicy defense = baseline_hooks();
  ContractId contract = ContractId::ct_seq();
  std::string preset = "DEFAULT";
  MuTraceFormat format = MuTraceFormat::L1D_TLB;
  std::string required_tag;  // VIOLATES also needs this signature tag

  std::string describe() const {
    std::string s = std::string(expected_name(expected)) + " " + defense_name(defense.id);
    for (const auto& f : bug_flag_list(defense.bug_flags)) s += "+" + f;
    s += " " + contract_name(contract.kind) + " " + preset + " " + format_name(format);
    if (!required_tag.empty()) s += " tag=" + required_tag;
    return s;
  }
};

struct Gadget {
  std::string name;
  std::string source;
  Program program;
  ContractId contract = ContractId::ct_seq();
  SandboxConfig sandbox{};
  std::uint64_t l2_seed = 0;
  std::vector<std::pair<TestInput, TestInput>> input_pairs;
  std::vector<GadgetExpectation> expected;
};

class GadgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

inline TestInput parse_gadget_input(const std::vector<std::string>& t, const SandboxConfig& sb, const std::string& where) {
  TestInput in(sb);
  for (std::size_t i = 2; i < t.size(); ++i) {
    const std::string& a = t[i];
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw GadgetError(where + ": bad input item '" + a + "'");
    const std::string lhs = a.substr(0, eq);
    const std::uint64_t v = parse_hex64(a.substr(eq + 1));
    if (lhs.size() >= 2 && lhs[0] == 'R') {
      const int r = std::stoi(lhs.substr(1));
      if (r < 0 || r >= kNumRegs) throw GadgetError(where + ": bad register " + lhs);
      in.regs[static_cast<std::size_t>(r)] = v;
    } else if (lhs.size() >= 3 && lhs[0] == 'M' && lhs.find('@') != std::string::npos) {
      const auto at = lhs.find('@');
      const int w = std::stoi(lhs.substr(1, at - 1));
      if (w != 1 && w != 2 && w != 4 && w != 8) throw GadgetError(where + ": bad memory width in " + lhs);
      const std::uint64_t off = parse_hex64(lhs.substr(at + 1));
      for (int k = 0; k < w; ++k) in.memory[byte_addr(off, k, sb.mask())] = static_cast<std::uint8_t>(v >> (8 * k));
    } else {
      throw GadgetError(where + ": bad input item '" + a + "'");
    }
  }
  return in;
}

inline GadgetExpectation parse_expectation(const std::vector<std::string>& t, const Gadget& g, const std::string& where) {
  if (t.size() < 3) throw GadgetError(where + ": expect needs an outcome and a defense");
  GadgetExpectation e;
  if (t[1] == "VIOLATES") e.expected = Expected::VIOLATES;
  else if (t[1] == "CLEAN") e.expected = Expected::CLEAN;
  else throw GadgetError(where + ": unknown outcome " + t[1]);
  std::vector<std::string> parts;
  {
    std::string cur;
    for (char ch : t[2] + "+") {
      if (ch == '+') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
  }
  auto id = parse_defense(parts[0]);
  if (!id) throw GadgetError(where + ": unknown defense " + parts[0]);
  std::uint32_t flags = 0;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    auto f = parse_bug_flag(parts[i]);
    if (!f) throw GadgetError(where + ": unknown bug flag " + parts[i]);
    flags |= *f;
  }
  e.defense = make_policy(*id, flags);
  e.contract = g.contract;
  for (std::size_t i = 3; i < t.size(); ++i) {
    const auto eq = t[i].find('=');
    if (eq == std::string::npos) throw GadgetError(where + ": bad option " + t[i]);
    const std::string k = t[i].substr(0, eq), v = t[i].substr(eq + 1);
    if (k == "contract") {
      auto c = parse_contract_kind(v);
      if (!c) throw GadgetError(where + ": unknown contract " + v);
      e.contract = *c == ContractKind::CT_COND ? ContractId::ct_cond() : ContractId{*c};
    } else if (k == "preset") {
      amplification_preset(v);
      e.preset = v;
    } else if (k == "format") {
      auto f = parse_format(v);
      if (!f) throw GadgetError(where + ": unknown format " + v);
      e.format = *f;
    } else if (k == "tag") {
      e.required_tag = v;
    } else {
      throw GadgetError(where + ": unknown option " + k);
    }
  }
  return e;
}

}  // namespace detail

inline Gadget parse_gadget(const std::string& text, const std::string& origin = "<gadget>") {
  Gadget g;
  g.source = text;
  try {
    g.program = parse_asm(text);
  } catch (const AsmError& e) {
    throw GadgetError(origin + ": " + e.what());
  }
  std::map<std::string, TestInput> inputs;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::vector<std::string>> expects;
  std::istringstream is(text);
  int no = 0;
  for (std::string line; std::getline(is, line);) {
    ++no;
    const auto pos = line.find("#@");
    if (pos == std::string::npos) continue;
    const auto t = detail::split_ws(line.substr(pos + 2));
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(no);
    if (t[0] == "gadget" && t.size() == 2) {
      g.name = t[1];
    } else if (t[0] == "contract" && t.size() == 2) {
      auto c = parse_contract_kind(t[1]);
      if (!c) throw GadgetError(where + ": unknown contract " + t[1]);
      g.contract = *c == ContractKind::CT_COND ? ContractId::ct_cond() : ContractId{*c};
    } else if (t[0] == "sandbox_pages" && t.size() == 2) {
      g.sandbox = SandboxConfig::pages(std::stoi(t[1]));
    } else if (t[0] == "l2_seed" && t.size() == 2) {
      g.l2_seed = parse_hex64(t[1]);
    } else if (t[0] == "input" && t.size() >= 2) {
      inputs.insert_or_assign(t[1], detail::parse_gadget_input(t, g.sandbox, where));
    } else if (t[0] == "pair" && t.size() == 3) {
      pairs.emplace_back(t[1], t[2]);
    } else if (t[0] == "expect") {
      expects.push_back(t);
      expects.back().push_back("@" + where);
    } else {
      throw GadgetError(where + ": unknown directive " + t[0]);
    }
  }
  if (g.name.empty()) throw GadgetError(origin + ": missing gadget name");
  if (!validate_program(g.program, g.sandbox).ok()) throw GadgetError(origin + ": program fails validation");
  for (const auto& [a, b] : pairs) {
    if (!inputs.count(a) || !inputs.count(b)) throw GadgetError(origin + ": pair names an unknown input");
    const TestInput& ia = inputs.at(a);
    const TestInput& ib = inputs.at(b);
    if (collect_contract_trace(g.program, ia, g.contract) != collect_contract_trace(g.program, ib, g.contract))
      throw GadgetError(origin + ": pair " + a + "/" + b + " has different contract traces");
    g.input_pairs.emplace_back(ia, ib);
  }
  if (g.input_pairs.empty()) throw GadgetError(origin + ": no input pairs");
  for (auto t : expects) {
    const std::string where = t.back().substr(1);
    t.pop_back();
    g.expected.push_back(detail::parse_expectation(t, g, where));
  }
  return g;
}

inline Gadget load_gadget(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw GadgetError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_gadget(ss.str(), path.filename().string());
}

inline std::string default_gadget_dir() {
#ifdef RELFUZZ_GADGET_DIR
  return RELFUZZ_GADGET_DIR;
#else
  return "gadgets";
#endif
}

// All gadgets of a directory, sorted by name.
inline std::vector<Gadget> corpus(const std::string& dir = default_gadget_dir()) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".asm") files.push_back(e.path());
  std::vector<Gadget> out;
  for (const auto& f : files) out.push_back(load_gadget(f));
  std::sort(out.begin(), out.end(), [](const Gadget& a, const Gadget& b) { return a.name < b.name; });
  return out;
}

inline const Gadget& find_gadget(const std::vector<Gadget>& gs, const std::string& name) {
  for (const auto& g : gs)
    if (g.name == name) return g;
  throw GadgetError("no gadget named " + name);
}

inline TestSetup gadget_setup(const Gadget& g, const GadgetExpectation& e) {
  TestSetup s;
  s.defense = e.defense;
  s.contract = e.contract;
  s.format = e.format;
  s.cache = amplification_preset(e.preset).apply(CacheConfig{});
  s.cache.l2_seed = g.l2_seed;
  s.sandbox = g.sandbox;
  return s;
}

struct GadgetOutcome {
  bool violates = false;
  std::vector<Violation> violations;  // validated ones
  std::vector<std::string> tags;      // union over validated violations
};

// Runs every input pair from one pinned fresh context, then detect, validate
// and tag exactly as a campaign does.
inline GadgetOutcome run_gadget(const Gadget& g, const GadgetExpectation& e) {
  const TestSetup s = gadget_setup(g, e);
  const MicroArchContext ctx = s.fresh_context();
  GadgetOutcome out;
  const RunFn run = [&](const TestInput& in, const MicroArchContext& c, DebugLog* log) {
    return s.trace(g.program, in, c, log);
  };
  for (const auto& [a, b] : g.input_pairs) {
    const std::vector<TestInput> ins = {a, b};
    const std::vector<ContractTrace> ct = {collect_contract_trace(g.program, a, s.contract),
                                           collect_contract_trace(g.program, b, s.contract)};
    const std::vector<MuTrace> mu = {s.trace(g.program, a, ctx), s.trace(g.program, b, ctx)};
    std::vector<Violation> vs = detect(g.program, ins, ct, mu, {ctx, ctx}, s.contract);
    for (Violation& v : vs) {
      validate(v, run);
      if (v.validated) out.violations.push_back(std::move(v));
    }
  }
  filter_by_signature(out.violations, builtin_rules());
  for (const auto& v : out.violations)
    for (const auto& t : v.signature_tags)
      if (std::find(out.tags.begin(), out.tags.end(), t) == out.tags.end()) out.tags.push_back(t);
  std::sort(out.tags.begin(), out.tags.end());
  out.violates = !out.violations.empty() &&
                 (e.required_tag.empty() || std::find(out.tags.begin(), out.tags.end(), e.required_tag) != out.tags.end());
  return out;
}

inline bool expectation_holds(const Gadget& g, const GadgetExpectation& e) {
  return run_gadget(g, e).violates == (e.expected == Expected::VIOLATES);
}

}  // namespace relfuzz
