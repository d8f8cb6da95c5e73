#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ropeformer/attention.hpp"
#include "ropeformer/experiment.hpp"
#include "ropeformer/posemb.hpp"

namespace ropeformer {

// Micro-benchmarks of the position-embedding kernels on a [T x d] input:
//   rotary      rope_rotate_rows           O(T d)
//   relative    relative_logits, one head  O(T^2 d + T d^2)
//   sinusoidal  adding table rows          O(T d)
//   learned     table lookup and add       O(T d)
//   none        plain q k^T logits         O(T^2 d)
// Inner iterations are calibrated once per mode on the first shape and then
// reused for every shape, so per-call times compare like for like.

struct BenchOptions {
  std::vector<PEKind> modes{PEKind::rotary, PEKind::relative};
  std::vector<std::size_t> t_grid{512, 1024};
  std::vector<std::size_t> d_grid{16};
  std::size_t repeats = 5;
  /// Target duration of one repeat on the calibration shape.
  double target_seconds = 0.02;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string mode;
  std::size_t t = 0;
  std::size_t d = 0;
  std::size_t iterations = 0;
  double median_s = 0.0;  // per call
  double min_s = 0.0;
  double max_s = 0.0;
};

namespace detail {

/// Keeps results observable so the optimizer cannot drop the work.
inline volatile double bench_sink = 0.0;

inline std::function<void()> bench_kernel(PEKind mode, std::size_t t, std::size_t d, Rng& rng) {
  auto x = std::make_shared<Tensor>(randn({t, d}, rng));
  switch (mode) {
    case PEKind::rotary: {
      auto cache = std::make_shared<RotaryCache>(make_rotary_cache(t, d));
      return [x, cache] { bench_sink = bench_sink + rope_rotate_rows(*x, 0, *cache)[0]; };
    }
    case PEKind::relative: {
      auto params = std::make_shared<AttentionParams>(make_attention_params(d, d, 1, rng, 1.0));
      auto rel = std::make_shared<RelativeParams>(make_relative_params(t, d, d, rng));
      return [x, params, rel] { bench_sink = bench_sink + relative_logits(*x, *params, *rel)[0]; };
    }
    case PEKind::sinusoidal: {
      auto table = std::make_shared<SinusoidalTable>(sinusoidal_pe(t, d));
      return [x, table] { bench_sink = bench_sink + add(*x, table->rows(0, x->rows()))[0]; };
    }
    case PEKind::learned: {
      auto table = std::make_shared<LearnedTable>(make_learned_table(t, d, rng));
      return [x, table] { bench_sink = bench_sink + add(*x, table->rows(0, x->rows()))[0]; };
    }
    case PEKind::none: {
      auto y = std::make_shared<Tensor>(randn({t, d}, rng));
      return [x, y] { bench_sink = bench_sink + matmul_nt(*x, *y)[0]; };
    }
  }
  throw ConfigError("bench: unknown mode");
}

inline double time_calls(const std::function<void()>& fn, std::size_t iterations) {
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < iterations; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// One row per (mode, T, d), in mode-major then T then d order.
inline std::vector<BenchRow> bench_pe(const BenchOptions& opt) {
  if (opt.repeats < 3) throw ConfigError("bench: repeats must be at least 3");
  if (opt.modes.empty() || opt.t_grid.empty() || opt.d_grid.empty()) throw ConfigError("bench: empty grid");
  for (std::size_t d : opt.d_grid) {
    if (d == 0 || d % 2 != 0) throw ConfigError("bench: d must be even and positive, got " + std::to_string(d));
  }
  for (std::size_t t : opt.t_grid) {
    if (t == 0) throw ConfigError("bench: T must be positive");
  }
  std::vector<BenchRow> rows;
  Rng rng(opt.seed);
  for (PEKind mode : opt.modes) {
    std::size_t iterations = 0;
    for (std::size_t t : opt.t_grid) {
      for (std::size_t d : opt.d_grid) {
        const auto fn = detail::bench_kernel(mode, t, d, rng);
        fn();  // warm caches and allocator
        if (iterations == 0) {
          iterations = 1;
          while (detail::time_calls(fn, iterations) < opt.target_seconds && iterations < (1u << 24)) iterations *= 2;
        }
        std::vector<double> per_call;
        for (std::size_t r = 0; r < opt.repeats; ++r) {
          per_call.push_back(detail::time_calls(fn, iterations) / static_cast<double>(iterations));
        }
        BenchRow row;
        row.mode = to_string(mode);
        row.t = t;
        row.d = d;
        row.iterations = iterations;
        row.median_s = median(per_call);
        row.min_s = *std::min_element(per_call.begin(), per_call.end());
        row.max_s = *std::max_element(per_call.begin(), per_call.end());
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline std::string emit_bench_table(const std::vector<BenchRow>& rows, TableFormat format) {
  const std::vector<std::string> header{"mode", "T", "d", "iterations", "median_us", "min_us", "max_us"};
  const bool exact = format == TableFormat::csv;
  auto us = [&](double s) { return exact ? format_roundtrip(s * 1e6) : format_fixed(s * 1e6, 3); };
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.mode, std::to_string(r.t), std::to_string(r.d), std::to_string(r.iterations), us(r.median_s),
                     us(r.min_s), us(r.max_s)});
  }
  return detail::render(header, cells, format);
}

/// Median per-call time of `mode` at (t, d) from a bench result; throws
/// MissingFieldError when absent.
inline double bench_time(const std::vector<BenchRow>& rows, const std::string& mode, std::size_t t, std::size_t d) {
  for (const auto& r : rows)
    if (r.mode == mode && r.t == t && r.d == d) return r.median_s;
  throw MissingFieldError("bench: no row for " + mode + " T=" + std::to_string(t) + " d=" + std::to_string(d));
}

}  // namespace ropeformer
