#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "ropeformer/tensor.hpp"

namespace ropeformer {

inline constexpr double kDefaultPositionBase = 10000.0;

namespace detail {

inline void require_even_dim(std::size_t d, const char* what) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError(std::string(what) + ": dimension must be even and positive, got " + std::to_string(d));
  }
}

inline void require_positions(std::size_t first, std::size_t count, std::size_t t_max, const char* what) {
  if (first + count > t_max) {
    throw PositionRangeError(std::string(what) + ": positions [" + std::to_string(first) + ", " +
                             std::to_string(first + count) + ") exceed table length " + std::to_string(t_max));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Absolute position tables
// ---------------------------------------------------------------------------

/// Fixed sine/cosine table, one row per position.
struct SinusoidalTable {
  Tensor table;  // [t_max x d]

  std::size_t t_max() const { return table.empty() ? 0 : table.rows(); }
  std::size_t dim() const { return table.empty() ? 0 : table.cols(); }

  /// Rows for positions first .. first + count - 1.
  Tensor rows(std::size_t first, std::size_t count) const {
    detail::require_positions(first, count, t_max(), "sinusoidal table");
    return slice_rows(table, first, count);
  }
};

/// table[m, 2j] = sin(m / base^(2j/d)), table[m, 2j+1] = cos(m / base^(2j/d)).
inline SinusoidalTable sinusoidal_pe(std::size_t t_max, std::size_t d, double base = kDefaultPositionBase) {
  detail::require_even_dim(d, "sinusoidal_pe");
  if (t_max == 0) throw ConfigError("sinusoidal_pe: t_max must be at least 1");
  Tensor table({t_max, d});
  for (std::size_t j = 0; j < d / 2; ++j) {
    const double inv = 1.0 / std::pow(base, static_cast<double>(2 * j) / static_cast<double>(d));
    for (std::size_t m = 0; m < t_max; ++m) {
      const double angle = static_cast<double>(m) * inv;
      table(m, 2 * j) = std::sin(angle);
      table(m, 2 * j + 1) = std::cos(angle);
    }
  }
  return {std::move(table)};
}

/// Trainable absolute table. Positions past t_max are an error, never wrapped.
struct LearnedTable {
  Tensor table;  // [t_max x d]

  std::size_t t_max() const { return table.empty() ? 0 : table.rows(); }
  std::size_t dim() const { return table.empty() ? 0 : table.cols(); }

  Tensor lookup(std::size_t m) const {
    detail::require_positions(m, 1, t_max(), "learned position table");
    return Tensor({dim()}, std::vector<double>(table.row(m).begin(), table.row(m).end()));
  }

  Tensor rows(std::size_t first, std::size_t count) const {
    detail::require_positions(first, count, t_max(), "learned position table");
    return slice_rows(table, first, count);
  }
};

inline LearnedTable make_learned_table(std::size_t t_max, std::size_t d, Rng& rng, double stddev = kInitStd) {
  if (t_max == 0 || d == 0) throw ConfigError("learned table: t_max and d must be positive");
  return {randn({t_max, d}, rng, stddev)};
}

// ---------------------------------------------------------------------------
// Relative position parameters
// ---------------------------------------------------------------------------

/// Which key projections the position-dependent logit terms use.
///   literal:        u . (x_n W_k),      v . (R_{m-n} W_k)
///   transformer_xl: u . (x_n W_{k,E}),  v . (R_{m-n} W_{k,R})
enum class RelativeVariant { literal, transformer_xl };

struct RelativeParams {
  Tensor r_table;  // [(2 t_max - 1) x d], row for offset r at index r + t_max - 1
  Tensor u;        // [d_m]
  Tensor v;        // [d_m]
  Tensor w_kE;     // [d x d_m]
  Tensor w_kR;     // [d x d_m]
  RelativeVariant variant = RelativeVariant::literal;

  std::size_t t_max() const { return r_table.empty() ? 0 : (r_table.rows() + 1) / 2; }

  /// Row index of offset m - n. Throws when |offset| >= t_max.
  std::size_t offset_index(std::ptrdiff_t offset) const {
    const auto limit = static_cast<std::ptrdiff_t>(t_max()) - 1;
    if (offset < -limit || offset > limit) {
      throw PositionRangeError("relative offset " + std::to_string(offset) + " outside [" +
                               std::to_string(-limit) + ", " + std::to_string(limit) + "]");
    }
    return static_cast<std::size_t>(offset + limit);
  }
};

inline RelativeParams make_relative_params(std::size_t t_max, std::size_t d, std::size_t d_m, Rng& rng,
                                           RelativeVariant variant = RelativeVariant::literal,
                                           double stddev = kInitStd) {
  if (t_max == 0 || d == 0 || d_m == 0) throw ConfigError("relative params: sizes must be positive");
  RelativeParams p;
  p.r_table = randn({2 * t_max - 1, d}, rng, stddev);
  p.u = randn({d_m}, rng, stddev);
  p.v = randn({d_m}, rng, stddev);
  p.w_kE = randn({d, d_m}, rng, stddev);
  p.w_kR = randn({d, d_m}, rng, stddev);
  p.variant = variant;
  return p;
}

/// R_{m-n}: exact table row, no clipping or interpolation.
inline Tensor relative_offset_embed(const RelativeParams& params, std::ptrdiff_t offset) {
  const std::size_t idx = params.offset_index(offset);
  auto r = params.r_table.row(idx);
  return Tensor({r.size()}, std::vector<double>(r.begin(), r.end()));
}

// ---------------------------------------------------------------------------
// Rotary
// ---------------------------------------------------------------------------

/// theta_i = base^(-2(i-1)/d) for i = 1 .. d/2.
inline Tensor rope_frequencies(std::size_t d, double base = kDefaultPositionBase) {
  detail::require_even_dim(d, "rope_frequencies");
  Tensor theta({d / 2});
  for (std::size_t i = 0; i < d / 2; ++i) {
    theta[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
  }
  return theta;
}

struct RotaryCache {
  Tensor theta;      // [d/2]
  Tensor cos_table;  // [t_max x d/2], cos(m theta_i)
  Tensor sin_table;  // [t_max x d/2], sin(m theta_i)
  double base = kDefaultPositionBase;

  std::size_t dim() const { return 2 * theta.size(); }
  std::size_t t_max() const { return cos_table.empty() ? 0 : cos_table.rows(); }
};

inline RotaryCache make_rotary_cache(std::size_t t_max, std::size_t d, double base = kDefaultPositionBase) {
  if (t_max == 0) throw ConfigError("rotary cache: t_max must be at least 1");
  RotaryCache c;
  c.theta = rope_frequencies(d, base);
  c.base = base;
  const std::size_t half = d / 2;
  c.cos_table = Tensor({t_max, half});
  c.sin_table = Tensor({t_max, half});
  for (std::size_t m = 0; m < t_max; ++m) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(m) * c.theta[i];
      c.cos_table(m, i) = std::cos(angle);
      c.sin_table(m, i) = std::sin(angle);
    }
  }
  return c;
}

enum class RotationDirection { forward, inverse };

/// Rotates adjacent pairs (2i, 2i+1) of `in` by m * theta_i into `out`.
/// The inverse direction applies the transpose (rotation by -m theta_i).
inline void rope_rotate_into(std::span<const double> in, std::span<double> out, std::size_t m,
                             const RotaryCache& cache,
                             RotationDirection dir = RotationDirection::forward) {
  if (in.size() != cache.dim() || out.size() != cache.dim()) {
    throw DimensionError("rope_rotate: vector length " + std::to_string(in.size()) + " vs cache dimension " +
                         std::to_string(cache.dim()));
  }
  detail::require_positions(m, 1, cache.t_max(), "rope_rotate");
  const double sign = dir == RotationDirection::forward ? 1.0 : -1.0;
  auto c = cache.cos_table.row(m);
  auto s = cache.sin_table.row(m);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x0 = in[2 * i];
    const double x1 = in[2 * i + 1];
    const double si = sign * s[i];
    out[2 * i] = x0 * c[i] - x1 * si;
    out[2 * i + 1] = x0 * si + x1 * c[i];
  }
}

inline Tensor rope_rotate(const Tensor& x, std::size_t m, const RotaryCache& cache) {
  Tensor out(x.shape());
  rope_rotate_into(x.data(), out.data(), m, cache);
  return out;
}

/// Rotates row t of x [T x d] to position first_position + t.
inline Tensor rope_rotate_rows(const Tensor& x, std::size_t first_position, const RotaryCache& cache,
                               RotationDirection dir = RotationDirection::forward) {
  detail::require_matrix(x, "rope_rotate_rows");
  detail::require_positions(first_position, x.rows(), cache.t_max(), "rope_rotate_rows");
  Tensor out(x.shape());
  for (std::size_t t = 0; t < x.rows(); ++t) rope_rotate_into(x.row(t), out.row(t), first_position + t, cache, dir);
  return out;
}

/// Dense block-diagonal rotation for position m. Slow; meant as a test oracle.
inline Tensor rope_rotation_matrix(std::size_t d, std::size_t m, double base = kDefaultPositionBase) {
  detail::require_even_dim(d, "rope_rotation_matrix");
  Tensor r({d, d});
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(m) * theta;
    r(2 * i, 2 * i) = std::cos(angle);
    r(2 * i, 2 * i + 1) = -std::sin(angle);
    r(2 * i + 1, 2 * i) = std::sin(angle);
    r(2 * i + 1, 2 * i + 1) = std::cos(angle);
  }
  return r;
}

/// Re[q conj(k) e^{i(m-n)theta}] with 2-vectors read as complex numbers
/// (first component is the real part).
inline double rope_complex_2d(std::span<const double> xq, std::span<const double> xk, std::ptrdiff_t m,
                              std::ptrdiff_t n, double theta) {
  if (xq.size() != 2 || xk.size() != 2) throw DimensionError("rope_complex_2d: inputs must be 2-vectors");
  const std::complex<double> q(xq[0], xq[1]);
  const std::complex<double> k(xk[0], xk[1]);
  const std::complex<double> phase = std::polar(1.0, static_cast<double>(m - n) * theta);
  return std::real(q * std::conj(k) * phase);
}

}  // namespace ropeformer
