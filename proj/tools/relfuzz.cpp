// relfuzz command-line driver.
//
// Exit codes: 0 completed without violations, 2 violations found (or a
// replayed violation reproduced), 1 error.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "relfuzz/config.hpp"
#include "relfuzz/gadgets.hpp"

namespace {

using namespace relfuzz;

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kViolations = 2;

ViolationReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return violation_from_json(nlohmann::json::parse(is));
}

// Recomputes contract traces, then validates the pair from the recorded
// starting contexts. A pair whose contract traces now differ never validates.
Violation rerun(const ViolationReport& r) {
  Violation v = r.violation;
  const TestSetup& s = r.setup;
  v.validated = false;
  v.common_ctx.reset();
  const ContractTrace ca = collect_contract_trace(v.program, v.input_a, s.contract);
  const ContractTrace cb = collect_contract_trace(v.program, v.input_b, s.contract);
  if (ca != cb) return v;
  v.contract_trace = ca;
  const RunFn run = [&](const TestInput& in, const MicroArchContext& c, DebugLog* log) {
    return s.trace(v.program, in, c, log);
  };
  return validate(v, run);
}

int cmd_fuzz(const std::string& config, const std::string& output, int workers, bool quiet) {
  CampaignConfig cfg = load_campaign_config(config);
  if (!output.empty()) cfg.output_dir = output;
  if (workers > 0) cfg.workers = workers;
  cfg.check();
  const CampaignResult res = run_campaign(cfg);
  const CampaignStats& s = res.stats;
  if (!quiet) {
    std::cout << "programs " << s.programs_run << ", test cases " << s.test_cases_run << ", candidates " << s.candidates
              << ", confirmed " << s.confirmed_violations << ", invalidated " << s.invalidated_candidates << "\n";
    std::cout << "wall " << s.wall_time_s << " s, " << s.throughput << " tests/s\n";
    for (const auto& [tag, n] : s.signature_counts) std::cout << "  " << tag << ": " << n << "\n";
    if (!cfg.output_dir.empty()) std::cout << "reports in " << cfg.output_dir << "\n";
  }
  return s.confirmed_violations > 0 ? kViolations : kOk;
}

int cmd_replay(const std::string& path) {
  const ViolationReport r = read_report(path);
  const Violation v = rerun(r);
  if (!v.validated) {
    std::cerr << r.id << ": did not reproduce\n";
    return kError;
  }
  std::cout << r.id << ": reproduced (" << v.diff.only_a.size() << " / " << v.diff.only_b.size() << " differing items)\n";
  for (const auto& x : v.diff.only_a) std::cout << "  a: " << x << "\n";
  for (const auto& x : v.diff.only_b) std::cout << "  b: " << x << "\n";
  return kViolations;
}

int cmd_diff(const std::string& path, bool json) {
  const ViolationReport r = read_report(path);
  const Violation v = rerun(r);
  if (!v.validated) {
    std::cerr << r.id << ": pair no longer differs, showing logs from context a\n";
  }
  Violation shown = v;
  if (!v.validated) {
    shown.mutrace_a = r.setup.trace(v.program, v.input_a, v.ctx_a, &shown.log_a);
    shown.mutrace_b = r.setup.trace(v.program, v.input_b, v.ctx_a, &shown.log_b);
  }
  const SideBySideReport rep = diff_logs(shown);
  if (json) {
    std::cout << side_by_side_json(rep, rep.rows.size()).dump(2) << "\n";
  } else {
    std::cout << render_asm(v.program) << "\n" << render_side_by_side(rep);
  }
  return kOk;
}

int cmd_presets() {
  for (const auto& p : presets()) {
    const CacheConfig c = p.apply(CacheConfig{});
    std::cout << p.name << ": l1 " << c.l1_sets << "x" << c.l1_ways << ", mshr_count " << c.mshr_count << "\n";
  }
  return kOk;
}

int cmd_gadgets(const std::string& dir, bool check) {
  const auto gs = corpus(dir);
  bool all = true;
  for (const auto& g : gs) {
    if (!check) {
      std::cout << g.name << " (" << g.input_pairs.size() << " pairs, " << g.expected.size() << " expectations)\n";
      continue;
    }
    for (const auto& e : g.expected) {
      const bool ok = expectation_holds(g, e);
      all &= ok;
      std::cout << (ok ? "ok   " : "FAIL ") << g.name << " " << e.describe() << "\n";
    }
  }
  return all ? kOk : kError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relational speculative-leak fuzzer"};
  app.require_subcommand(1);

  std::string config, output, violation, gadget_dir = relfuzz::default_gadget_dir();
  int workers = 0;
  bool quiet = false, json = false;

  auto* fuzz = app.add_subcommand("fuzz", "run a campaign");
  fuzz->add_option("--config", config, "campaign config (YAML)")->required()->check(CLI::ExistingFile);
  fuzz->add_option("--output", output, "report directory (overrides output_dir)");
  fuzz->add_option("--workers", workers, "worker threads (overrides workers)");
  fuzz->add_flag("--quiet", quiet, "no summary on stdout");

  auto* replay = app.add_subcommand("replay", "re-run a violation report and check it still validates");
  replay->add_option("--violation", violation, "violation report (JSON)")->required()->check(CLI::ExistingFile);

  auto* diff = app.add_subcommand("diff", "side-by-side log comparison of a violation");
  diff->add_option("--violation", violation, "violation report (JSON)")->required()->check(CLI::ExistingFile);
  diff->add_flag("--json", json, "emit JSON instead of text");

  auto* presets_cmd = app.add_subcommand("presets", "amplification presets");
  presets_cmd->require_subcommand(1);
  presets_cmd->add_subcommand("list", "list presets");

  auto* gadgets_cmd = app.add_subcommand("gadgets", "gadget corpus");
  gadgets_cmd->add_option("--dir", gadget_dir, "gadget directory");
  gadgets_cmd->require_subcommand(1);
  auto* gadgets_list = gadgets_cmd->add_subcommand("list", "list gadgets");
  auto* gadgets_check = gadgets_cmd->add_subcommand("check", "evaluate every expectation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kError;
  }

  try {
    if (*fuzz) return cmd_fuzz(config, output, workers, quiet);
    if (*replay) return cmd_replay(violation);
    if (*diff) return cmd_diff(violation, json);
    if (*presets_cmd) return cmd_presets();
    if (*gadgets_cmd) {
      if (*gadgets_list) return cmd_gadgets(gadget_dir, false);
      if (*gadgets_check) return cmd_gadgets(gadget_dir, true);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
