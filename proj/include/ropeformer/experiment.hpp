#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ropeformer/grad.hpp"
#include "ropeformer/model.hpp"
#include "ropeformer/params.hpp"
#include "ropeformer/tasks.hpp"

namespace ropeformer {

/// A report or table lacks values it needs; the message lists them.
class MissingFieldError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything that determines a comparison run. Every mode shares the same
/// non-position hyperparameters and seeds.
struct ExperimentConfig {
  SyntheticTask task;
  EncoderConfig model;
  std::vector<PEKind> modes{PEKind::rotary, PEKind::relative, PEKind::sinusoidal};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t steps = 500;
  std::size_t batch = 32;
  std::size_t eval_count = 400;
  Pooling pooling = Pooling::max;
  AdamOptions adam;
  /// Position-table length; 0 selects it automatically (see resolved_t_max).
  std::size_t t_max = 0;
  /// Worker threads across (mode, seed) runs; does not affect results.
  std::size_t threads = 1;

  /// Defaults sized to finish a five-seed, three-mode comparison in minutes
  /// on one CPU core.
  static ExperimentConfig desk_defaults() {
    ExperimentConfig c;
    c.task.kind = TaskKind::relative_offset;
    c.task.t_train = 32;
    c.task.t_eval = 64;
    c.task.vocab = 8;
    c.task.classes = 4;
    c.task.min_offset = 13;
    c.task.max_offset = 20;
    c.model.d_model = 32;
    c.model.heads = 4;
    c.model.ffn_hidden = 64;
    c.model.blocks = 2;
    c.model.conv_kernel = 7;
    c.adam.peak_lr = 3e-3;
    c.adam.warmup = 100;
    return c;
  }

  /// Learned tables only cover the training length, so evaluating them on
  /// longer sequences is a configuration error. Every other mode gets a table
  /// long enough for both splits.
  std::size_t resolved_t_max(PEKind mode) const {
    if (t_max != 0) return t_max;
    if (mode == PEKind::learned) return task.t_train;
    return std::max(task.t_train, task.t_eval);
  }

  EncoderConfig model_for(PEKind mode) const {
    EncoderConfig m = model;
    m.pe_mode = mode;
    m.t_max = resolved_t_max(mode);
    return m;
  }

  void validate() const {
    task.validate();
    if (modes.empty()) throw ConfigError("experiment: no modes given");
    if (seeds.empty()) throw ConfigError("experiment: no seeds given");
    if (steps == 0 || batch == 0 || eval_count == 0) {
      throw ConfigError("experiment: steps, batch and eval_count must be positive");
    }
    if (threads == 0) throw ConfigError("experiment: threads must be positive");
    if (!(adam.peak_lr > 0.0)) throw ConfigError("experiment: peak_lr must be positive");
    for (PEKind mode : modes) {
      model_for(mode).validate();
      const std::size_t tm = resolved_t_max(mode);
      const std::size_t longest = std::max(task.t_train, task.t_eval);
      if (longest > tm) {
        throw ConfigError("experiment: mode " + to_string(mode) + " has t_max " + std::to_string(tm) +
                          " but evaluation needs length " + std::to_string(longest) +
                          (mode == PEKind::learned ? " (learned tables cannot extrapolate)" : ""));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct RunResult {
  PEKind mode = PEKind::none;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double acc_in = 0.0;      // at T_eval = T_train
  double acc_extrap = 0.0;  // at T_eval > T_train
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

/// Per-mode medians over seeds. Fields left empty make the summary
/// incomplete for emission.
struct ModeSummary {
  std::string mode;
  std::optional<double> acc_in;
  std::optional<double> acc_extrap;
  std::optional<double> seconds;
  std::optional<double> final_loss;
  std::size_t failed = 0;
};

struct ExperimentReport {
  std::uint64_t config_hash = 0;
  std::vector<std::uint64_t> seeds;
  std::size_t t_train = 0;
  std::size_t t_eval = 0;
  std::vector<RunResult> runs;  // mode-major, then seed, in config order
  std::vector<ModeSummary> summaries;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Medians per mode. A failed run counts as accuracy 0 so failures cannot
/// improve a mode's standing; its loss is left out of the loss median.
inline std::vector<ModeSummary> summarize(const std::vector<RunResult>& runs, const std::vector<PEKind>& modes) {
  std::vector<ModeSummary> out;
  for (PEKind mode : modes) {
    ModeSummary s;
    s.mode = to_string(mode);
    std::vector<double> in, ex, sec, loss;
    for (const auto& r : runs) {
      if (r.mode != mode) continue;
      in.push_back(r.failed ? 0.0 : r.acc_in);
      ex.push_back(r.failed ? 0.0 : r.acc_extrap);
      sec.push_back(r.seconds);
      if (!r.failed) loss.push_back(r.final_loss);
      s.failed += r.failed ? 1 : 0;
    }
    if (!in.empty()) {
      s.acc_in = median(in);
      s.acc_extrap = median(ex);
      s.seconds = median(sec);
      s.final_loss = median(loss);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Random-stream indices; each split and the initialization draw from their
/// own stream of the run seed.
inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kEvalInStream = 2;
inline constexpr std::uint64_t kEvalExtrapStream = 3;
inline constexpr std::uint64_t kInitStream = 4;
inline constexpr std::uint64_t kDropoutStream = 5;

struct TrainedModel {
  ClassifierParams params;
  EncoderConfig model;
  std::vector<double> losses;  // mean batch loss per step
};

/// Trains one classifier for (mode, seed). Throws EvaluationError when the
/// loss stops being finite.
inline TrainedModel train_classifier(const ExperimentConfig& cfg, PEKind mode, std::uint64_t seed,
                                     std::size_t steps_override = 0) {
  SyntheticTask task = cfg.task;
  task.seed = seed;
  TrainedModel tm;
  tm.model = cfg.model_for(mode);
  Rng init = Rng::derive(seed, kInitStream);
  tm.params = make_classifier_params(tm.model, task.token_count(), task.num_classes(), init);
  AdamState<ClassifierParams> state = make_adam_state(tm.params, cfg.adam);
  Rng drop = Rng::derive(seed, kDropoutStream);
  ForwardOptions opt;
  opt.training = true;
  opt.dropout = tm.model.dropout;
  opt.rng = &drop;
  const std::size_t steps = steps_override ? steps_override : cfg.steps;
  const Dataset train = gen_task(task, steps * cfg.batch, task.t_train, kTrainStream);
  const bool batch_norm = tm.model.conv_norm == ConvNorm::batch;
  for (std::size_t s = 0; s < steps; ++s) {
    ClassifierParams g = zeros_like_params(tm.params);
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Example& ex = train[s * cfg.batch + b];
      if (batch_norm) {
        ClassifierTape tape;
        const Tensor logits = classifier_forward(ex.tokens, tm.params, cfg.pooling, opt, &tape);
        Tensor dl;
        total += softmax_cross_entropy(logits, ex.label, &dl);
        classifier_backward(scale(dl, 1.0 / static_cast<double>(cfg.batch)), tm.params, cfg.pooling, tape, g);
        for (std::size_t k = 0; k < tm.params.blocks.size(); ++k) {
          update_running_stats(tm.params.blocks[k].conv, tape.blocks[k].conv);
        }
      } else {
        total += classifier_loss(ex, tm.params, cfg.pooling, opt, &g, 1.0 / static_cast<double>(cfg.batch));
      }
    }
    const double mean_loss = total / static_cast<double>(cfg.batch);
    tm.losses.push_back(mean_loss);
    if (!std::isfinite(mean_loss)) {
      throw EvaluationError("training diverged at step " + std::to_string(s + 1));
    }
    adam_step(tm.params, g, state);
  }
  return tm;
}

/// Trains and evaluates one (mode, seed) pair. Divergence is recorded in
/// the result rather than thrown.
inline RunResult run_single(const ExperimentConfig& cfg, PEKind mode, std::uint64_t seed) {
  RunResult r;
  r.mode = mode;
  r.seed = seed;
  SyntheticTask task = cfg.task;
  task.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const TrainedModel tm = train_classifier(cfg, mode, seed);
    r.final_loss = tm.losses.back();
    r.acc_in = accuracy(gen_task(task, cfg.eval_count, task.t_train, kEvalInStream), tm.params, cfg.pooling);
    r.acc_extrap = accuracy(gen_task(task, cfg.eval_count, task.t_eval, kEvalExtrapStream), tm.params, cfg.pooling);
  } catch (const EvaluationError& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs every (mode, seed) pair and assembles a report in config order.
/// Configuration problems (including a learned table asked to extrapolate)
/// are raised before any training starts.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::uint64_t config_hash = 0) {
  cfg.validate();
  struct Job {
    PEKind mode;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (PEKind m : cfg.modes)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({m, s});
  std::vector<RunResult> results(jobs.size());
  const std::size_t workers = std::min(cfg.threads, jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = run_single(cfg, jobs[i].mode, jobs[i].seed);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next == jobs.size()) return;
            i = next++;
          }
          results[i] = run_single(cfg, jobs[i].mode, jobs[i].seed);
        }
      });
    }
  }
  ExperimentReport rep;
  rep.config_hash = config_hash;
  rep.seeds = cfg.seeds;
  rep.t_train = cfg.task.t_train;
  rep.t_eval = cfg.task.t_eval;
  rep.runs = std::move(results);
  rep.summaries = summarize(rep.runs, cfg.modes);
  return rep;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

enum class TableFormat { plain, csv, markdown };

inline TableFormat parse_table_format(const std::string& s) {
  if (s == "plain") return TableFormat::plain;
  if (s == "csv") return TableFormat::csv;
  if (s == "markdown" || s == "md") return TableFormat::markdown;
  throw ConfigError("unknown table format '" + s + "'");
}

/// Shortest decimal text that parses back to exactly the same double.
inline std::string format_roundtrip(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct TableOptions {
  TableFormat format = TableFormat::markdown;
  /// Wall-clock differs between runs, so it is off by default to keep
  /// repeated reports byte-identical.
  bool include_time = false;
};

namespace detail {

inline void require_complete(const std::vector<ModeSummary>& rows, bool need_time) {
  std::vector<std::string> missing;
  for (const auto& r : rows) {
    if (r.mode.empty()) missing.push_back("mode");
    if (!r.acc_in) missing.push_back(r.mode + ".in_length");
    if (!r.acc_extrap) missing.push_back(r.mode + ".extrapolation");
    if (need_time && !r.seconds) missing.push_back(r.mode + ".time_s");
  }
  if (missing.empty()) return;
  std::string msg = "incomplete report, missing:";
  for (const auto& m : missing) msg += " " + m;
  throw MissingFieldError(msg);
}

inline std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

/// Renders a header plus string rows in the given format.
inline std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                          TableFormat format) {
  std::string out;
  if (format == TableFormat::csv) {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
      out += "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  if (format == TableFormat::markdown) {
    auto line = [&](const std::vector<std::string>& cells) {
      out += "|";
      for (std::size_t i = 0; i < cells.size(); ++i) out += " " + pad(cells[i], width[i]) + " |";
      out += "\n";
    };
    line(header);
    out += "|";
    for (std::size_t w : width) out += std::string(w + 2, '-') + "|";
    out += "\n";
    for (const auto& r : rows) line(r);
    return out;
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t i = 0; i < cells.size(); ++i) l += (i ? "  " : "") + pad(cells[i], width[i]);
    while (!l.empty() && l.back() == ' ') l.pop_back();
    out += l + "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

}  // namespace detail

/// Table with columns mode, in-length accuracy, extrapolation accuracy and
/// optionally time. CSV numbers round-trip exactly; the other formats use
/// four decimals.
inline std::string emit_table(const std::vector<ModeSummary>& rows, const TableOptions& opt = {}) {
  detail::require_complete(rows, opt.include_time);
  std::vector<std::string> header{"mode", "in_length", "extrapolation"};
  if (opt.include_time) header.push_back("time_s");
  const bool exact = opt.format == TableFormat::csv;
  auto num = [&](double v) { return exact ? format_roundtrip(v) : format_fixed(v, 4); };
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    std::vector<std::string> c{r.mode, num(*r.acc_in), num(*r.acc_extrap)};
    if (opt.include_time) c.push_back(exact ? format_roundtrip(*r.seconds) : format_fixed(*r.seconds, 2));
    cells.push_back(std::move(c));
  }
  return detail::render(header, cells, opt.format);
}

inline std::string emit_table(const ExperimentReport& report, const TableOptions& opt = {}) {
  return emit_table(report.summaries, opt);
}

/// Per-run detail: mode, seed, in-length, extrapolation, final loss, status.
inline std::string emit_runs(const ExperimentReport& report, const TableOptions& opt = {}) {
  std::vector<std::string> header{"mode", "seed", "in_length", "extrapolation", "final_loss", "status"};
  if (opt.include_time) header.push_back("time_s");
  const bool exact = opt.format == TableFormat::csv;
  auto num = [&](double v, int digits) { return exact ? format_roundtrip(v) : format_fixed(v, digits); };
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : report.runs) {
    std::vector<std::string> c{to_string(r.mode), std::to_string(r.seed), num(r.acc_in, 4), num(r.acc_extrap, 4),
                               num(r.final_loss, 6), r.failed ? "failed" : "ok"};
    if (opt.include_time) c.push_back(num(r.seconds, 2));
    cells.push_back(std::move(c));
  }
  return detail::render(header, cells, opt.format);
}

/// Full text report: a short preamble, the summary table and per-run rows.
inline std::string format_report(const ExperimentReport& report, const TableOptions& opt = {}) {
  std::ostringstream os;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(report.config_hash));
  std::string seeds;
  for (std::size_t i = 0; i < report.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(report.seeds[i]);
  if (opt.format == TableFormat::csv) {
    os << emit_table(report, opt);
    return os.str();
  }
  os << "config_hash: " << hash << "\n";
  os << "seeds: " << seeds << "\n";
  os << "t_train: " << report.t_train << "  t_eval: " << report.t_eval << "\n\n";
  os << emit_table(report, opt) << "\n" << emit_runs(report, opt);
  return os.str();
}

/// Parses the CSV produced by emit_table back into summary rows.
inline std::vector<ModeSummary> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("csv: empty input");
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : l) {
      if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    out.push_back(cur);
    return out;
  };
  const auto header = split(line);
  const bool has_time = header.size() == 4 && header[3] == "time_s";
  if (header.size() < 3 || header[0] != "mode" || header[1] != "in_length" || header[2] != "extrapolation" ||
      (header.size() == 4 && !has_time) || header.size() > 4) {
    throw ConfigError("csv: unexpected header '" + line + "'");
  }
  auto number = [](const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ConfigError("csv: bad number '" + s + "'");
    return v;
  };
  std::vector<ModeSummary> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ConfigError("csv: row has wrong width: '" + line + "'");
    ModeSummary r;
    r.mode = cells[0];
    r.acc_in = number(cells[1]);
    r.acc_extrap = number(cells[2]);
    if (has_time) r.seconds = number(cells[3]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ropeformer
