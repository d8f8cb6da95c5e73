// Acceptance checks: one PASS/FAIL line per criterion. Tolerances and
// budgets are fixed here on purpose; a failure is reported, never relaxed.
//
// Usage: acceptance [criterion numbers...]   (default: all)

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ropeformer/bench.hpp"
#include "ropeformer/config.hpp"
#include "ropeformer/experiment.hpp"
#include "ropeformer/verify.hpp"

namespace rf = ropeformer;

namespace {

#ifndef ROPEFORMER_CLI
#define ROPEFORMER_CLI "ropeformer"
#endif

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command, capturing stdout; stderr is discarded.
CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string cli() { return std::string("'") + ROPEFORMER_CLI + "'"; }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

Outcome property(const rf::PropertyResult& r, double budget_s) {
  const bool fast = r.seconds < budget_s;
  return {r.passed && fast, "worst=" + sci(r.worst) + " tol=" + sci(r.tolerance) + " cases=" +
                                std::to_string(r.cases) + " time=" + rf::format_fixed(r.seconds, 2) + "s (budget " +
                                rf::format_fixed(budget_s, 0) + "s)" + (r.detail.empty() ? "" : " " + r.detail)};
}

Outcome criterion1() {
  rf::VerifyOptions opt;
  opt.cases = 1000;
  return property(rf::check_shift_invariance(opt), 5.0);
}

Outcome criterion2() {
  rf::VerifyOptions opt;
  opt.cases = 1000;
  return property(rf::check_oracle_triangle(opt), 5.0);
}

Outcome criterion3() { return property(rf::check_rotation_algebra(), 60.0); }

Outcome criterion4() {
  const auto a = rf::check_absolute_decomposition();
  const auto r = rf::check_relative_oracle();
  return {a.passed && r.passed, "absolute worst=" + sci(a.worst) + ", relative worst=" + sci(r.worst) +
                                    " (tol 1e-12, T=4, d=8)" + (a.detail + r.detail).substr(0, 200)};
}

Outcome criterion5() {
  constexpr double kTol = 1e-5;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_at;
  struct Case {
    rf::PEKind mode;
    rf::RelativeVariant variant;
  };
  const Case cases[] = {{rf::PEKind::none, rf::RelativeVariant::literal},
                        {rf::PEKind::sinusoidal, rf::RelativeVariant::literal},
                        {rf::PEKind::learned, rf::RelativeVariant::literal},
                        {rf::PEKind::relative, rf::RelativeVariant::literal},
                        {rf::PEKind::relative, rf::RelativeVariant::transformer_xl},
                        {rf::PEKind::rotary, rf::RelativeVariant::literal}};
  std::size_t checked = 0;
  for (const auto& c : cases) {
    for (const char* module : {"mhsa", "block"}) {
      rf::GradCheckSetup setup;
      setup.mode = c.mode;
      setup.variant = c.variant;
      setup.check.step = 1e-5;
      const auto rep = rf::gradcheck_module(module, setup);
      for (const auto& e : rep.entries) {
        checked += e.checked;
        if (e.max_rel_err > worst || worst_at.empty()) {
          worst = std::max(worst, e.max_rel_err);
          worst_at = std::string(module) + "[" + rf::to_string(c.mode) + "]." + e.name;
        }
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= kTol && secs < 60.0, "max_rel_err=" + sci(worst) + " at " + worst_at + " tol=1e-5 h=1e-5 coords=" +
                                            std::to_string(checked) + " time=" + rf::format_fixed(secs, 1) +
                                            "s (budget 60s)"};
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  rf::ExperimentConfig cfg = rf::ExperimentConfig::desk_defaults();
  cfg.modes = {rf::PEKind::rotary, rf::PEKind::relative, rf::PEKind::sinusoidal};
  cfg.seeds = {0, 1, 2, 3, 4};
  const rf::ExperimentReport rep = rf::run_experiment(cfg, rf::config_hash(cfg));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rope = *rep.summaries[0].acc_extrap;
  const double rel = *rep.summaries[1].acc_extrap;
  const double sin = *rep.summaries[2].acc_extrap;
  const bool ordered = rope >= rel && rel >= sin;
  const bool ok = ordered && rope >= 0.90 && rope - sin >= 0.05 && secs < 900.0;
  std::cout << rf::emit_table(rep) << rf::emit_runs(rep);
  return {ok, "median extrapolation acc at T=" + std::to_string(cfg.task.t_eval) + ": rotary=" +
                  rf::format_fixed(rope, 4) + " relative=" + rf::format_fixed(rel, 4) + " sinusoidal=" +
                  rf::format_fixed(sin, 4) + " (need rotary>=relative>=sinusoidal, rotary>=0.90, gap>=0.05); time=" +
                  rf::format_fixed(secs, 0) + "s (budget 900s)"};
}

Outcome criterion7() {
  const std::string common = " --set steps=5 --set eval_count=20";
  const auto learned = run_command(cli() + " train --pe-mode learned" + common);
  const auto rotary = run_command(cli() + " train --pe-mode rotary" + common);
  const auto relative = run_command(cli() + " train --pe-mode relative" + common);
  const bool ok = learned.exit_code == 2 && rotary.exit_code == 0 && relative.exit_code == 0;
  return {ok, "exit codes: learned=" + std::to_string(learned.exit_code) + " (want 2), rotary=" +
                  std::to_string(rotary.exit_code) + ", relative=" + std::to_string(relative.exit_code) +
                  " (want 0); T_train=32, T_eval=64"};
}

Outcome criterion8() {
  const auto dir = std::filesystem::temp_directory_path() / "ropeformer_acceptance_c8";
  std::filesystem::remove_all(dir);
  const std::string args =
      " compare --modes rotary,relative,sinusoidal --seeds 0,1 --set steps=15 --set eval_count=50 --out ";
  const auto a = run_command(cli() + args + "'" + (dir / "a").string() + "'");
  const auto b = run_command(cli() + args + "'" + (dir / "b").string() + "'");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string fa = slurp(dir / "a" / "report.txt"), fb = slurp(dir / "b" / "report.txt");
  const bool ok = a.exit_code == 0 && b.exit_code == 0 && !a.out.empty() && a.out == b.out && !fa.empty() && fa == fb;
  std::filesystem::remove_all(dir);
  return {ok, "stdout " + std::string(a.out == b.out ? "identical" : "differs") + " (" + std::to_string(a.out.size()) +
                  " bytes), report files " + (fa == fb && !fa.empty() ? "identical" : "differ") + ", exit codes " +
                  std::to_string(a.exit_code) + "/" + std::to_string(b.exit_code)};
}

Outcome criterion9() {
  const auto r = run_command(cli() + " bench --modes rotary,relative --t-grid 512,1024 --d-grid 16 --repeats 5 --format csv");
  if (r.exit_code != 0) return {false, "bench exited with " + std::to_string(r.exit_code)};
  std::vector<rf::BenchRow> rows;
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) continue;
    rf::BenchRow row;
    row.mode = cells[0];
    row.t = std::stoul(cells[1]);
    row.d = std::stoul(cells[2]);
    row.median_s = std::stod(cells[4]) * 1e-6;
    rows.push_back(row);
  }
  const double rope = rf::bench_time(rows, "rotary", 1024, 16) / rf::bench_time(rows, "rotary", 512, 16);
  const double rel = rf::bench_time(rows, "relative", 1024, 16) / rf::bench_time(rows, "relative", 512, 16);
  const bool ok = rope >= 2.0 * 0.7 && rope <= 2.0 * 1.3 && rel >= 4.0 * 0.6 && rel <= 4.0 * 1.4;
  return {ok, "T 512->1024 at d=16: rotary x" + rf::format_fixed(rope, 2) + " (want 2 +-30%), relative x" +
                  rf::format_fixed(rel, 2) + " (want 4 +-40%)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"rope shift invariance", criterion1},
      {"rotation oracle triangle", criterion2},
      {"orthogonality and angle addition", criterion3},
      {"logit term fidelity", criterion4},
      {"gradient checks", criterion5},
      {"qualitative ordering on relative-offset task", criterion6},
      {"learned-table extrapolation error", criterion7},
      {"compare determinism", criterion8},
      {"bench scaling", criterion9},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));
  bool all = true;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    const std::string line =
        std::string(o.passed ? "PASS" : "FAIL") + "  C" + std::to_string(i + 1) + " " + criteria[i].first + ": " + o.detail;
    std::cout << line << std::endl;
    lines.push_back(line);
  }
  std::cout << "\n== acceptance summary ==\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL") << std::endl;
  return all ? 0 : 1;
}
