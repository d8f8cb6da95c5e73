#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ropeformer/bench.hpp"
#include "ropeformer/checkpoint.hpp"
#include "ropeformer/config.hpp"
#include "ropeformer/experiment.hpp"
#include "ropeformer/verify.hpp"

namespace rf = ropeformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitConfig = 2;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out_dir;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value configuration file");
  cmd->add_option("--set", args.overrides, "override one configuration key (key=value); repeatable");
}

rf::ExperimentConfig load_config(const CommonArgs& args) {
  rf::ExperimentConfig cfg = rf::ExperimentConfig::desk_defaults();
  if (!args.config_path.empty()) cfg = rf::load_config_file(args.config_path, cfg);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw rf::ConfigError("--set expects key=value, got '" + kv + "'");
    rf::apply_config_value(cfg, rf::detail::trim(kv.substr(0, eq)), rf::detail::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw rf::ConfigError("cannot write '" + path.string() + "'");
}

int cmd_verify(std::uint64_t seed, std::size_t cases) {
  rf::VerifyOptions opt;
  opt.seed = seed;
  opt.cases = cases;
  bool ok = true;
  for (const auto& r : rf::run_property_suite(opt)) {
    std::cout << rf::format_property(r) << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all properties hold\n" : "property violation\n");
  return ok ? kExitOk : kExitViolation;
}

int cmd_train(const CommonArgs& args, const std::string& task, const std::string& mode, std::uint64_t seed) {
  rf::ExperimentConfig cfg = load_config(args);
  if (!task.empty()) cfg.task.kind = rf::parse_task_kind(task);
  const rf::PEKind kind = rf::parse_pe_kind(mode);
  cfg.modes = {kind};
  cfg.seeds = {seed};
  cfg.validate();
  rf::SyntheticTask t = cfg.task;
  t.seed = seed;
  const rf::TrainedModel tm = rf::train_classifier(cfg, kind, seed);
  const double acc_in = rf::accuracy(rf::gen_task(t, cfg.eval_count, t.t_train, rf::kEvalInStream), tm.params,
                                     cfg.pooling);
  const double acc_ex = rf::accuracy(rf::gen_task(t, cfg.eval_count, t.t_eval, rf::kEvalExtrapStream), tm.params,
                                     cfg.pooling);
  std::cout << "mode: " << rf::to_string(kind) << "\n"
            << "task: " << rf::to_string(cfg.task.kind) << "\n"
            << "seed: " << seed << "\n"
            << "config_hash: " << rf::hash_hex(rf::config_hash(cfg)) << "\n"
            << "first_loss: " << rf::format_fixed(tm.losses.front(), 6) << "\n"
            << "final_loss: " << rf::format_fixed(tm.losses.back(), 6) << "\n"
            << "acc_t" << t.t_train << ": " << rf::format_fixed(acc_in, 4) << "\n"
            << "acc_t" << t.t_eval << ": " << rf::format_fixed(acc_ex, 4) << "\n";
  if (!args.out_dir.empty()) {
    rf::save_checkpoint(args.out_dir, {cfg, kind, seed, tm.params});
    std::string curve;
    for (std::size_t i = 0; i < tm.losses.size(); ++i) {
      curve += std::to_string(i + 1) + "," + rf::format_roundtrip(tm.losses[i]) + "\n";
    }
    write_file(std::filesystem::path(args.out_dir) / "loss.csv", "step,loss\n" + curve);
    std::cout << "checkpoint: " << args.out_dir << "\n";
  }
  return kExitOk;
}

int cmd_compare(const CommonArgs& args, const std::string& modes, const std::string& seeds, const std::string& format,
                bool with_time, std::size_t threads) {
  rf::ExperimentConfig cfg = load_config(args);
  if (!modes.empty()) cfg.modes = rf::parse_mode_list(modes);
  if (!seeds.empty()) cfg.seeds = rf::parse_seed_list(seeds);
  if (threads > 0) cfg.threads = threads;
  const rf::ExperimentReport report = rf::run_experiment(cfg, rf::config_hash(cfg));
  rf::TableOptions topt;
  topt.format = rf::parse_table_format(format);
  topt.include_time = with_time;
  const std::string text = rf::format_report(report, topt);
  std::cout << text;
  if (!args.out_dir.empty()) {
    const std::filesystem::path dir(args.out_dir);
    write_file(dir / "report.txt", text);
    write_file(dir / "summary.csv", rf::emit_table(report, {rf::TableFormat::csv, with_time}));
    write_file(dir / "runs.csv", rf::emit_runs(report, {rf::TableFormat::csv, with_time}));
    write_file(dir / "config.txt", rf::canonical_config(cfg));
  }
  std::size_t failed = 0;
  for (const auto& r : report.runs) failed += r.failed ? 1 : 0;
  if (failed > 0) std::cerr << failed << " run(s) diverged and were recorded as failed\n";
  return kExitOk;
}

int cmd_bench(const std::string& modes, const std::string& t_grid, const std::string& d_grid, std::size_t repeats,
              const std::string& format, const std::string& out_dir) {
  rf::BenchOptions opt;
  if (!modes.empty()) opt.modes = rf::parse_mode_list(modes);
  if (!t_grid.empty()) opt.t_grid = rf::parse_size_list("t-grid", t_grid);
  if (!d_grid.empty()) opt.d_grid = rf::parse_size_list("d-grid", d_grid);
  opt.repeats = repeats;
  const auto rows = rf::bench_pe(opt);
  const std::string text = rf::emit_bench_table(rows, rf::parse_table_format(format));
  std::cout << text;
  if (!out_dir.empty()) write_file(std::filesystem::path(out_dir) / "bench.csv", rf::emit_bench_table(rows, rf::TableFormat::csv));
  return kExitOk;
}

int cmd_gradcheck(const std::string& module, const std::string& mode, const std::string& variant,
                  const std::string& conv_norm, std::uint64_t seed, double tol) {
  std::vector<std::string> modules;
  if (module == "all") {
    modules = rf::gradcheck_modules();
  } else {
    modules = {module};
  }
  std::vector<rf::PEKind> kinds;
  if (mode == "all") {
    kinds = {rf::PEKind::none, rf::PEKind::sinusoidal, rf::PEKind::learned, rf::PEKind::relative, rf::PEKind::rotary};
  } else {
    kinds = {rf::parse_pe_kind(mode)};
  }
  bool ok = true;
  for (rf::PEKind kind : kinds) {
    for (const auto& m : modules) {
      rf::GradCheckSetup setup;
      setup.mode = kind;
      setup.variant = rf::parse_relative_variant(variant);
      setup.conv_norm = rf::parse_conv_norm(conv_norm);
      setup.seed = seed;
      const rf::GradCheckReport rep = rf::gradcheck_module(m, setup);
      const bool pass = rep.passed(tol);
      ok = ok && pass;
      std::printf("== %s [%s] max_rel_err=%.3e tol=%.0e %s\n", m.c_str(), rf::to_string(kind).c_str(),
                  rep.max_rel_err(), tol, pass ? "PASS" : "FAIL");
      std::cout << rep.to_text();
    }
  }
  return ok ? kExitOk : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Position-embedding attention kernels, conformer blocks and comparison harness"};
  app.require_subcommand(1);

  std::uint64_t verify_seed = 0;
  std::size_t verify_cases = 1000;
  auto* verify = app.add_subcommand("verify", "run the position-embedding property suite");
  verify->add_option("--seed", verify_seed, "random seed");
  verify->add_option("--cases", verify_cases, "random cases per property");

  CommonArgs train_args;
  std::string train_task, train_mode = "rotary";
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "train one classifier on a synthetic task");
  train->add_option("--task", train_task, "relative-offset | shifted-copy");
  train->add_option("--pe-mode", train_mode, "none | sinusoidal | learned | relative | rotary");
  train->add_option("--seed", train_seed, "run seed");
  train->add_option("--out", train_args.out_dir, "checkpoint directory");
  add_config_options(train, train_args);

  CommonArgs cmp_args;
  std::string cmp_modes, cmp_seeds, cmp_format = "markdown";
  bool cmp_time = false;
  std::size_t cmp_threads = 0;
  auto* compare = app.add_subcommand("compare", "train every mode for every seed and tabulate");
  compare->add_option("--modes", cmp_modes, "comma-separated modes");
  compare->add_option("--seeds", cmp_seeds, "comma-separated seeds or ranges such as 0-4");
  compare->add_option("--format", cmp_format, "plain | csv | markdown");
  compare->add_flag("--with-time", cmp_time, "add a wall-clock column (not reproducible)");
  compare->add_option("--threads", cmp_threads, "parallel runs");
  compare->add_option("--out", cmp_args.out_dir, "directory for report files");
  add_config_options(compare, cmp_args);

  std::string bench_modes, bench_t, bench_d, bench_format = "plain", bench_out;
  std::size_t bench_repeats = 5;
  auto* bench = app.add_subcommand("bench", "time the position-embedding kernels");
  bench->add_option("--modes", bench_modes, "comma-separated modes");
  bench->add_option("--t-grid", bench_t, "comma-separated sequence lengths");
  bench->add_option("--d-grid", bench_d, "comma-separated widths");
  bench->add_option("--repeats", bench_repeats, "timed repeats per shape (>= 3)");
  bench->add_option("--format", bench_format, "plain | csv | markdown");
  bench->add_option("--out", bench_out, "directory for bench.csv");

  std::string gc_module = "block", gc_mode = "all", gc_variant = "literal", gc_norm = "layer";
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of backward passes");
  gradcheck->add_option("--module", gc_module, "mhsa | ffn | conv | block | frontend | encoder | classifier | all");
  gradcheck->add_option("--pe-mode", gc_mode, "a mode or 'all'");
  gradcheck->add_option("--relative-variant", gc_variant, "literal | transformer-xl");
  gradcheck->add_option("--conv-norm", gc_norm, "layer | batch");
  gradcheck->add_option("--seed", gc_seed, "random seed");
  gradcheck->add_option("--tol", gc_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*verify) return cmd_verify(verify_seed, verify_cases);
    if (*train) return cmd_train(train_args, train_task, train_mode, train_seed);
    if (*compare) return cmd_compare(cmp_args, cmp_modes, cmp_seeds, cmp_format, cmp_time, cmp_threads);
    if (*bench) return cmd_bench(bench_modes, bench_t, bench_d, bench_repeats, bench_format, bench_out);
    if (*gradcheck) return cmd_gradcheck(gc_module, gc_mode, gc_variant, gc_norm, gc_seed, gc_tol);
  } catch (const rf::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rf::PositionRangeError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rf::DimensionError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rf::InputTooShortError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rf::MissingFieldError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitViolation;
  }
  return kExitOk;
}
