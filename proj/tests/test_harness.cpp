#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ropeformer/bench.hpp"
#include "ropeformer/checkpoint.hpp"
#include "ropeformer/config.hpp"
#include "ropeformer/experiment.hpp"
#include "ropeformer/tasks.hpp"

namespace rf = ropeformer;
namespace fs = std::filesystem;

namespace {

rf::SyntheticTask offset_task() {
  rf::SyntheticTask t;
  t.kind = rf::TaskKind::relative_offset;
  t.t_train = 32;
  t.t_eval = 64;
  t.vocab = 8;
  t.classes = 4;
  t.min_offset = 1;
  t.max_offset = 8;
  return t;
}

rf::SyntheticTask copy_task() {
  rf::SyntheticTask t;
  t.kind = rf::TaskKind::shifted_copy;
  t.t_train = 32;
  t.t_eval = 64;
  t.vocab = 8;
  t.shift = 3;
  return t;
}

/// Small enough that a few training steps take milliseconds.
rf::ExperimentConfig tiny_config() {
  rf::ExperimentConfig c = rf::ExperimentConfig::desk_defaults();
  c.task.t_train = 12;
  c.task.t_eval = 16;
  c.task.min_offset = 2;
  c.task.max_offset = 5;
  c.model.d_model = 8;
  c.model.heads = 2;
  c.model.ffn_hidden = 8;
  c.model.blocks = 1;
  c.model.conv_kernel = 3;
  c.steps = 3;
  c.batch = 2;
  c.eval_count = 8;
  c.seeds = {0};
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ropeformer_test_" + name);
  fs::remove_all(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string out;
};

/// Runs the CLI with stderr discarded and returns its exit code and stdout.
CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(ROPEFORMER_CLI) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

void expect_params_equal(const rf::ClassifierParams& a, const rf::ClassifierParams& b) {
  const rf::ParamSet sa = rf::detail::checkpoint_tensors(a);
  const rf::ParamSet sb = rf::detail::checkpoint_tensors(b);
  const auto& ea = sa.entries();
  const auto& eb = sb.entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].first, eb[i].first);
    EXPECT_TRUE(ea[i].second == eb[i].second) << ea[i].first;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

TEST(TaskTest, MarkersAtTwoAndFiveGiveClassOfPlusThree) {
  const rf::SyntheticTask task = offset_task();
  std::vector<std::size_t> tokens(12, 0);
  tokens[2] = task.vocab;
  tokens[5] = task.vocab + 1;
  EXPECT_EQ(rf::label_of(tokens, task), rf::offset_class(3, task));
}

TEST(TaskTest, OffsetClassesAreOrderedAndCoverEveryClass) {
  const rf::SyntheticTask task = offset_task();
  std::vector<std::size_t> seen(task.classes, 0);
  std::size_t prev = 0;
  for (std::ptrdiff_t o = -8; o <= 8; ++o) {
    if (o > -1 && o < 1) continue;
    const std::size_t c = rf::offset_class(o, task);
    EXPECT_GE(c, prev);
    prev = c;
    ++seen[c];
  }
  // 16 offsets over 4 classes: four each.
  for (std::size_t n : seen) EXPECT_EQ(n, 4u);
  // The sign of the offset matters: +3 and -3 fall in different classes.
  EXPECT_NE(rf::offset_class(3, task), rf::offset_class(-3, task));
  EXPECT_THROW(rf::offset_class(9, task), rf::ConfigError);
}

TEST(TaskTest, LabelIsInvariantToTranslatingTheMarkers) {
  const rf::SyntheticTask task = offset_task();
  const rf::Dataset data = rf::gen_task(task, 200, 32, 0);
  for (const auto& ex : data) {
    for (std::size_t s : {1u, 5u, 17u}) {
      std::vector<std::size_t> shifted(ex.tokens.size() + s, 0);
      std::copy(ex.tokens.begin(), ex.tokens.end(), shifted.begin() + static_cast<std::ptrdiff_t>(s));
      EXPECT_EQ(rf::label_of(shifted, task), ex.label);
    }
  }
}

TEST(TaskTest, ShiftedCopyLabelIsInvariantToRotatingBothHalves) {
  const rf::SyntheticTask task = copy_task();
  const rf::Dataset data = rf::gen_task(task, 200, 32, 0);
  for (const auto& ex : data) {
    const std::size_t h = ex.tokens.size() / 2;
    for (std::size_t s : {1u, 4u, 9u}) {
      std::vector<std::size_t> rotated(ex.tokens.size());
      for (std::size_t i = 0; i < h; ++i) {
        rotated[(i + s) % h] = ex.tokens[i];
        rotated[h + (i + s) % h] = ex.tokens[h + i];
      }
      EXPECT_EQ(rf::label_of(rotated, task), ex.label);
    }
  }
}

TEST(TaskTest, LabelsMatchTheGeneratorDefinition) {
  for (const rf::SyntheticTask& task : {offset_task(), copy_task()}) {
    for (const auto& ex : rf::gen_task(task, 300, 32, 7)) {
      ASSERT_EQ(ex.tokens.size(), 32u);
      EXPECT_EQ(ex.label, rf::label_of(ex.tokens, task));
      EXPECT_LT(ex.label, task.num_classes());
    }
  }
}

TEST(TaskTest, RelativeOffsetHasExactlyOneOfEachMarker) {
  const rf::SyntheticTask task = offset_task();
  for (const auto& ex : rf::gen_task(task, 300, 64, 1)) {
    EXPECT_EQ(std::count(ex.tokens.begin(), ex.tokens.end(), task.vocab), 1);
    EXPECT_EQ(std::count(ex.tokens.begin(), ex.tokens.end(), task.vocab + 1), 1);
  }
}

TEST(TaskTest, ClassBalanceWithinFivePercentOverTenThousandSamples) {
  rf::SyntheticTask desk = rf::ExperimentConfig::desk_defaults().task;
  for (const rf::SyntheticTask& task : {offset_task(), desk, copy_task()}) {
    const std::size_t n = 10000;
    const rf::Dataset data = rf::gen_task(task, n, task.t_train, 0);
    std::vector<std::size_t> counts(task.num_classes(), 0);
    for (const auto& ex : data) ++counts[ex.label];
    const double expected = static_cast<double>(n) / static_cast<double>(task.num_classes());
    for (std::size_t c = 0; c < counts.size(); ++c) {
      EXPECT_LE(std::abs(static_cast<double>(counts[c]) / expected - 1.0), 0.05)
          << rf::to_string(task.kind) << " class " << c << " count " << counts[c];
    }
  }
}

TEST(TaskTest, GenerationIsDeterministicPerSeedAndStream) {
  const rf::SyntheticTask task = offset_task();
  const rf::Dataset a = rf::gen_task(task, 50, 32, 2);
  const rf::Dataset b = rf::gen_task(task, 50, 32, 2);
  const rf::Dataset c = rf::gen_task(task, 50, 32, 3);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].label, b[i].label);
    differs = differs || a[i].tokens != c[i].tokens;
  }
  EXPECT_TRUE(differs);
}

TEST(TaskTest, InfeasibleSpecsAreConfigErrors) {
  rf::SyntheticTask t = offset_task();
  t.classes = 17;  // only 16 signed offsets
  EXPECT_THROW(t.validate(), rf::ConfigError);
  EXPECT_THROW(rf::gen_task(t, 1, 32), rf::ConfigError);
  t = offset_task();
  t.t_train = 3;
  EXPECT_THROW(t.validate(), rf::ConfigError);
  t = offset_task();
  EXPECT_THROW(rf::gen_task(t, 1, 8), rf::ConfigError);  // offset 8 does not fit
  rf::SyntheticTask c = copy_task();
  c.shift = 16;
  EXPECT_THROW(c.validate(), rf::ConfigError);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(ConfigTest, ParsesListsAndRanges) {
  const rf::ExperimentConfig c = rf::parse_config_text("steps = 7\nmodes = rotary, relative\nseeds = 0-2,9\n");
  EXPECT_EQ(c.steps, 7u);
  ASSERT_EQ(c.modes.size(), 2u);
  EXPECT_EQ(c.modes[0], rf::PEKind::rotary);
  EXPECT_EQ(c.modes[1], rf::PEKind::relative);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 9}));
}

TEST(ConfigTest, CommentsAndBlankLinesAreIgnored) {
  const rf::ExperimentConfig c = rf::parse_config_text("# header\n\n  steps = 11  # trailing\npeak_lr=0.5\n");
  EXPECT_EQ(c.steps, 11u);
  EXPECT_EQ(c.adam.peak_lr, 0.5);
}

TEST(ConfigTest, UnknownKeyAndMalformedLinesAreConfigErrors) {
  EXPECT_THROW(rf::parse_config_text("no_such_key = 1\n"), rf::ConfigError);
  EXPECT_THROW(rf::parse_config_text("steps\n"), rf::ConfigError);
  EXPECT_THROW(rf::parse_config_text("steps = many\n"), rf::ConfigError);
  EXPECT_THROW(rf::parse_config_text("modes = rotary,bogus\n"), rf::ConfigError);
  EXPECT_THROW(rf::load_config_file("/nonexistent/ropeformer.cfg"), rf::ConfigError);
}

TEST(ConfigTest, CanonicalTextRoundTrips) {
  rf::ExperimentConfig c = rf::ExperimentConfig::desk_defaults();
  c.adam.peak_lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.model.conv_norm = rf::ConvNorm::batch;
  const std::string text = rf::canonical_config(c);
  EXPECT_EQ(rf::canonical_config(rf::parse_config_text(text)), text);
  EXPECT_EQ(rf::parse_config_text(text).adam.peak_lr, c.adam.peak_lr);
}

TEST(ConfigTest, Fnv1aKnownVectors) {
  EXPECT_EQ(rf::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(rf::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(rf::hash_hex(0xabcULL), "0000000000000abc");
}

TEST(ConfigTest, HashIsStableAndTracksResultAffectingKeys) {
  const rf::ExperimentConfig base = rf::ExperimentConfig::desk_defaults();
  EXPECT_EQ(rf::config_hash(base), rf::config_hash(rf::ExperimentConfig::desk_defaults()));
  rf::ExperimentConfig changed = base;
  changed.steps += 1;
  EXPECT_NE(rf::config_hash(changed), rf::config_hash(base));
  changed = base;
  changed.model.relative_variant = rf::RelativeVariant::literal == base.model.relative_variant
                                       ? rf::RelativeVariant::transformer_xl
                                       : rf::RelativeVariant::literal;
  EXPECT_NE(rf::config_hash(changed), rf::config_hash(base));
  // Threads never change numbers, so they do not enter the hash.
  changed = base;
  changed.threads = 8;
  EXPECT_EQ(rf::config_hash(changed), rf::config_hash(base));
}

// ---------------------------------------------------------------------------
// Experiment validation and summaries
// ---------------------------------------------------------------------------

TEST(ExperimentTest, LearnedTableCannotBeAskedToExtrapolate) {
  rf::ExperimentConfig c = tiny_config();
  c.modes = {rf::PEKind::learned};
  EXPECT_THROW(c.validate(), rf::ConfigError);
  EXPECT_THROW(rf::run_experiment(c), rf::ConfigError);
  c.task.t_eval = c.task.t_train;
  EXPECT_NO_THROW(c.validate());
  c.modes = {rf::PEKind::rotary, rf::PEKind::relative, rf::PEKind::sinusoidal};
  c.task.t_eval = 16;
  EXPECT_NO_THROW(c.validate());
}

TEST(ExperimentTest, ReportIsInConfigOrder) {
  rf::ExperimentConfig c = tiny_config();
  c.modes = {rf::PEKind::relative, rf::PEKind::rotary};
  c.seeds = {3, 1};
  const rf::ExperimentReport rep = rf::run_experiment(c, 42);
  ASSERT_EQ(rep.runs.size(), 4u);
  EXPECT_EQ(rep.runs[0].mode, rf::PEKind::relative);
  EXPECT_EQ(rep.runs[0].seed, 3u);
  EXPECT_EQ(rep.runs[1].seed, 1u);
  EXPECT_EQ(rep.runs[2].mode, rf::PEKind::rotary);
  ASSERT_EQ(rep.summaries.size(), 2u);
  EXPECT_EQ(rep.summaries[0].mode, "relative");
  EXPECT_EQ(rep.config_hash, 42u);
  EXPECT_EQ(rep.t_eval, 16u);
}

TEST(ExperimentTest, ThreadCountDoesNotChangeTheReport) {
  rf::ExperimentConfig c = tiny_config();
  c.modes = {rf::PEKind::rotary, rf::PEKind::sinusoidal};
  c.seeds = {0, 1};
  const std::string serial = rf::format_report(rf::run_experiment(c));
  c.threads = 4;
  EXPECT_EQ(rf::format_report(rf::run_experiment(c)), serial);
}

TEST(ExperimentTest, FailedRunsCountAsZeroAccuracy) {
  std::vector<rf::RunResult> runs(3);
  for (auto& r : runs) r.mode = rf::PEKind::rotary;
  runs[0].acc_in = runs[0].acc_extrap = 0.9;
  runs[1].acc_in = runs[1].acc_extrap = 0.8;
  runs[2].acc_in = runs[2].acc_extrap = 1.0;
  runs[2].failed = true;
  const auto s = rf::summarize(runs, {rf::PEKind::rotary});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(*s[0].acc_in, 0.8);  // median of {0.9, 0.8, 0}
  EXPECT_EQ(s[0].failed, 1u);
}

TEST(ExperimentTest, MedianOfEvenCountAveragesTheMiddle) {
  EXPECT_EQ(rf::median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_EQ(rf::median({5.0}), 5.0);
  EXPECT_TRUE(std::isnan(rf::median({})));
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

TEST(TableTest, EmptyModeListGivesHeaderOnly) {
  rf::TableOptions md;
  EXPECT_EQ(rf::emit_table(std::vector<rf::ModeSummary>{}, md),
            "| mode | in_length | extrapolation |\n"
            "|------|-----------|---------------|\n");
  rf::TableOptions csv{rf::TableFormat::csv, false};
  EXPECT_EQ(rf::emit_table(std::vector<rf::ModeSummary>{}, csv), "mode,in_length,extrapolation\n");
  rf::TableOptions plain{rf::TableFormat::plain, true};
  EXPECT_EQ(rf::emit_table(std::vector<rf::ModeSummary>{}, plain), "mode  in_length  extrapolation  time_s\n");
}

TEST(TableTest, ColumnOrderIsModeInLengthExtrapolationTime) {
  rf::ModeSummary s;
  s.mode = "rotary";
  s.acc_in = 1.0;
  s.acc_extrap = 0.5;
  s.seconds = 2.0;
  const std::string text = rf::emit_table({s}, {rf::TableFormat::csv, true});
  EXPECT_EQ(text, "mode,in_length,extrapolation,time_s\nrotary,1,0.5,2\n");
  EXPECT_EQ(rf::emit_table({s}, {rf::TableFormat::markdown, false}),
            "| mode   | in_length | extrapolation |\n"
            "|--------|-----------|---------------|\n"
            "| rotary | 1.0000    | 0.5000        |\n");
}

TEST(TableTest, CsvRoundTripsTabularFields) {
  rf::Rng rng(11);
  std::vector<rf::ModeSummary> rows;
  for (const char* m : {"rotary", "relative", "absolute-sinusoidal", "none"}) {
    rf::ModeSummary s;
    s.mode = m;
    s.acc_in = rng.uniform();
    s.acc_extrap = rng.uniform() / 3.0;
    s.seconds = 1e3 * rng.uniform();
    rows.push_back(s);
  }
  for (bool with_time : {false, true}) {
    const auto parsed = rf::parse_csv(rf::emit_table(rows, {rf::TableFormat::csv, with_time}));
    ASSERT_EQ(parsed.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(parsed[i].mode, rows[i].mode);
      EXPECT_EQ(*parsed[i].acc_in, *rows[i].acc_in);
      EXPECT_EQ(*parsed[i].acc_extrap, *rows[i].acc_extrap);
      if (with_time) {
        EXPECT_EQ(*parsed[i].seconds, *rows[i].seconds);
      } else {
        EXPECT_FALSE(parsed[i].seconds.has_value());
      }
    }
  }
}

TEST(TableTest, ParseCsvRejectsMalformedInput) {
  EXPECT_THROW(rf::parse_csv(""), rf::ConfigError);
  EXPECT_THROW(rf::parse_csv("a,b,c\n"), rf::ConfigError);
  EXPECT_THROW(rf::parse_csv("mode,in_length,extrapolation\nrotary,1\n"), rf::ConfigError);
  EXPECT_THROW(rf::parse_csv("mode,in_length,extrapolation\nrotary,x,1\n"), rf::ConfigError);
}

TEST(TableTest, IncompleteReportListsMissingFields) {
  rf::ModeSummary s;
  s.mode = "rotary";
  s.acc_in = 1.0;
  try {
    rf::emit_table({s}, {rf::TableFormat::markdown, true});
    FAIL() << "expected MissingFieldError";
  } catch (const rf::MissingFieldError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("rotary.extrapolation"), std::string::npos) << msg;
    EXPECT_NE(msg.find("rotary.time_s"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("rotary.in_length"), std::string::npos) << msg;
  }
}

TEST(TableTest, EmissionIsStableForIdenticalReports) {
  rf::ExperimentConfig c = tiny_config();
  c.modes = {rf::PEKind::rotary};
  const rf::ExperimentReport rep = rf::run_experiment(c, rf::config_hash(c));
  for (auto f : {rf::TableFormat::plain, rf::TableFormat::csv, rf::TableFormat::markdown}) {
    EXPECT_EQ(rf::format_report(rep, {f, false}), rf::format_report(rep, {f, false}));
  }
  EXPECT_THROW(rf::parse_table_format("html"), rf::ConfigError);
  EXPECT_EQ(rf::parse_table_format("md"), rf::TableFormat::markdown);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(CheckpointTest, RoundTripsParametersAndConfig) {
  for (rf::ConvNorm norm : {rf::ConvNorm::layer, rf::ConvNorm::batch}) {
    rf::ExperimentConfig c = tiny_config();
    c.model.conv_norm = norm;
    rf::Rng rng(3);
    rf::Checkpoint ck{c, rf::PEKind::relative, 5,
                      rf::make_classifier_params(c.model_for(rf::PEKind::relative), c.task.token_count(),
                                                 c.task.num_classes(), rng)};
    if (norm == rf::ConvNorm::batch) {
      ck.params.blocks[0].conv.running_mean = rf::randn(ck.params.blocks[0].conv.running_mean.shape(), rng, 1.0);
    }
    const fs::path dir = scratch_dir(std::string("ckpt_") + rf::to_string(norm));
    rf::save_checkpoint(dir, ck);
    const rf::Checkpoint back = rf::load_checkpoint(dir);
    EXPECT_EQ(back.mode, ck.mode);
    EXPECT_EQ(back.seed, ck.seed);
    EXPECT_EQ(rf::canonical_config(back.config), rf::canonical_config(c));
    expect_params_equal(back.params, ck.params);
    fs::remove_all(dir);
  }
}

TEST(CheckpointTest, ModifiedConfigIsDetected) {
  const rf::ExperimentConfig c = tiny_config();
  rf::Rng rng(4);
  const rf::Checkpoint ck{c, rf::PEKind::rotary, 0,
                          rf::make_classifier_params(c.model_for(rf::PEKind::rotary), c.task.token_count(),
                                                     c.task.num_classes(), rng)};
  const fs::path dir = scratch_dir("ckpt_tamper");
  rf::save_checkpoint(dir, ck);
  {
    std::ofstream out(dir / "config.txt", std::ios::app);
    out << "steps = 999\n";
  }
  EXPECT_THROW(rf::load_checkpoint(dir), rf::ConfigError);
  fs::remove_all(dir);
  EXPECT_THROW(rf::load_checkpoint(dir), rf::ConfigError);
}

// ---------------------------------------------------------------------------
// Bench
// ---------------------------------------------------------------------------

TEST(BenchTest, RowsAreTheCartesianProductInOrder) {
  rf::BenchOptions opt;
  opt.modes = {rf::PEKind::rotary, rf::PEKind::relative};
  opt.t_grid = {8, 16, 32};
  opt.d_grid = {4, 8};
  opt.repeats = 3;
  opt.target_seconds = 1e-4;
  const auto rows = rf::bench_pe(opt);
  ASSERT_EQ(rows.size(), 2u * 3u * 2u);
  std::size_t i = 0;
  for (const char* m : {"rotary", "relative"}) {
    for (std::size_t t : opt.t_grid) {
      for (std::size_t d : opt.d_grid) {
        EXPECT_EQ(rows[i].mode, m);
        EXPECT_EQ(rows[i].t, t);
        EXPECT_EQ(rows[i].d, d);
        EXPECT_GE(rows[i].iterations, 1u);
        EXPECT_LE(rows[i].min_s, rows[i].median_s);
        EXPECT_LE(rows[i].median_s, rows[i].max_s);
        ++i;
      }
    }
  }
  const std::string csv = rf::emit_bench_table(rows, rf::TableFormat::csv);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), rows.size() + 1);
}

TEST(BenchTest, InvalidOptionsAreConfigErrors) {
  rf::BenchOptions opt;
  opt.target_seconds = 1e-4;
  opt.repeats = 2;
  EXPECT_THROW(rf::bench_pe(opt), rf::ConfigError);
  opt.repeats = 3;
  opt.d_grid = {7};
  EXPECT_THROW(rf::bench_pe(opt), rf::ConfigError);
  opt.d_grid = {};
  EXPECT_THROW(rf::bench_pe(opt), rf::ConfigError);
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

TEST(CliTest, VerifySucceeds) {
  const CliResult r = run_cli("verify --cases 50");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST(CliTest, LearnedBeyondTableIsConfigurationError) {
  EXPECT_EQ(run_cli("train --pe-mode learned --set steps=1").code, 2);
  EXPECT_EQ(run_cli("compare --modes learned,rotary --seeds 0 --set steps=1").code, 2);
}

TEST(CliTest, BadArgumentsAreConfigurationErrors) {
  EXPECT_EQ(run_cli("--no-such-flag").code, 2);
  EXPECT_EQ(run_cli("train --pe-mode bogus").code, 2);
  EXPECT_EQ(run_cli("train --set no_such_key=1").code, 2);
  EXPECT_EQ(run_cli("bench --repeats 2").code, 2);
  EXPECT_EQ(run_cli("gradcheck --module nothing").code, 2);
}

TEST(CliTest, CompareIsDeterministicAndWritesReports) {
  const std::string sets =
      " --set t_train=12 --set t_eval=16 --set min_offset=2 --set max_offset=5 --set d_model=8 --set heads=2"
      " --set ffn_hidden=8 --set blocks=1 --set conv_kernel=3 --set steps=3 --set batch=2 --set eval_count=8";
  const fs::path dir = scratch_dir("cli_compare");
  const CliResult a = run_cli("compare --modes rotary,relative --seeds 0-1" + sets + " --out " + dir.string());
  const CliResult b = run_cli("compare --modes rotary,relative --seeds 0-1" + sets);
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("| rotary"), std::string::npos) << a.out;
  EXPECT_FALSE(fs::is_empty(dir));
  fs::remove_all(dir);
}

TEST(CliTest, TrainWritesLoadableCheckpoint) {
  const fs::path dir = scratch_dir("cli_train");
  const CliResult r = run_cli(
      "train --pe-mode rotary --seed 2 --set t_train=12 --set t_eval=16 --set min_offset=2 --set max_offset=5"
      " --set d_model=8 --set heads=2 --set ffn_hidden=8 --set blocks=1 --set conv_kernel=3 --set steps=2"
      " --set batch=2 --set eval_count=8 --out " +
      dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const rf::Checkpoint ck = rf::load_checkpoint(dir);
  EXPECT_EQ(ck.mode, rf::PEKind::rotary);
  EXPECT_EQ(ck.seed, 2u);
  EXPECT_EQ(ck.config.steps, 2u);
  EXPECT_TRUE(fs::exists(dir / "loss.csv"));
  fs::remove_all(dir);
}
