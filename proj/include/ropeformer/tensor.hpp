#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ropeformer {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (odd rotary dimension, even conv kernel, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A position or relative offset falls outside the precomputed tables.
class PositionRangeError : public Error {
 public:
  using Error::Error;
};

class InputTooShortError : public Error {
 public:
  using Error::Error;
};

/// A function under evaluation produced NaN or Inf.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Backward called without the forward intermediates it needs.
class InternalError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Dense row-major array of doubles. A default-constructed tensor is the
/// null tensor: rank 0, no elements.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const double& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const double& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::span<double> row(std::size_t i) {
    const std::size_t c = inner_size();
    return std::span<double>(data_).subspan(i * c, c);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t c = inner_size();
    return std::span<const double>(data_).subspan(i * c, c);
  }

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  std::string shape_str() const { return shape_string(shape_); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t checked_numel(const Shape& shape) {
    if (shape.empty()) return 0;
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  std::size_t inner_size() const { return shape_.size() <= 1 ? data_.size() : data_.size() / shape_[0]; }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got " + shape_str());
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor zeros_like(const Tensor& t) { return t.empty() ? Tensor() : Tensor(t.shape()); }

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + a.shape_str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Seeded generator: std::mt19937_64 (its output sequence is fixed by the
/// C++ standard), 53-bit uniform doubles, Marsaglia polar normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ConfigError("uniform_int: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return mean + stddev * u * f;
  }

  /// Child generator whose seed is a deterministic mix of this seed and `stream`.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor randn(Tensor::Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline Tensor uniform(Tensor::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Default initializer for trainable matrices: N(0, 0.02^2).
inline constexpr double kInitStd = 0.02;

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// c = a * b for a [M x K], b [K x N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " * " + b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

/// c = a^T * b for a [K x M], b [K x N].
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts differ, " + a.shape_str() + "^T * " + b.shape_str());
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

/// c = a * b^T for a [M x K], b [N x K].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts differ, " + a.shape_str() + " * " + b.shape_str() + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * n + j] = s;
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class ElementwiseOp { add, sub, mul };

inline Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "elementwise");
  Tensor c = a;
  auto cd = c.data();
  auto bd = b.data();
  switch (op) {
    case ElementwiseOp::add:
      for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
      break;
    case ElementwiseOp::sub:
      for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
      break;
    case ElementwiseOp::mul:
      for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
      break;
  }
  return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }

inline Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

/// a += s * b, in place. Used for gradient accumulation.
inline void axpy(Tensor& a, const Tensor& b, double s = 1.0) {
  detail::require_same_shape(a, b, "axpy");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += s * bd[i];
}

/// x [T x N] plus a bias row b [N] on every row.
inline Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  detail::require_matrix(x, "add_row_vector");
  if (b.size() != x.cols()) {
    throw DimensionError("add_row_vector: bias " + b.shape_str() + " vs matrix " + x.shape_str());
  }
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return y;
}

/// Column sums of a matrix, shape [cols].
inline Tensor col_sum(const Tensor& x) {
  detail::require_matrix(x, "col_sum");
  Tensor s({x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
  }
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double swish(double x) { return x * sigmoid(x); }

inline Tensor swish(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = swish(v);
  return y;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

/// Gated linear unit over the last axis: first half times sigmoid(second half).
inline Tensor glu(const Tensor& x) {
  detail::require_matrix(x, "glu");
  if (x.cols() % 2 != 0) throw DimensionError("glu: last dimension must be even, got " + x.shape_str());
  const std::size_t h = x.cols() / 2;
  Tensor y({x.rows(), h});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < h; ++j) y(i, j) = x(i, j) * sigmoid(x(i, j + h));
  return y;
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  if (start + count > x.cols()) throw DimensionError("slice_cols: range exceeds " + x.shape_str());
  Tensor y({x.rows(), count});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) y(i, j) = x(i, start + j);
  return y;
}

inline void set_cols(Tensor& x, std::size_t start, const Tensor& block) {
  if (block.rows() != x.rows() || start + block.cols() > x.cols()) {
    throw DimensionError("set_cols: block " + block.shape_str() + " does not fit " + x.shape_str());
  }
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < block.cols(); ++j) x(i, start + j) = block(i, j);
}

/// Rows [start, start + count) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_rows");
  if (start + count > x.rows()) throw DimensionError("slice_rows: range exceeds " + x.shape_str());
  auto first = x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols());
  return Tensor({count, x.cols()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction. Entries equal to -inf get weight 0.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  Tensor y({x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      s += out[j];
    }
    for (double& v : out) v /= s;
  }
  return y;
}

/// Per-row statistics kept by layer_norm for the backward pass.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> rstd;
};

/// Normalizes each row over the last axis, then applies gamma and beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5,
                         NormStats* stats = nullptr) {
  detail::require_matrix(x, "layer_norm");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + gamma.shape_str() + "/" + beta.shape_str() +
                         " vs input " + x.shape_str());
  }
  Tensor y({x.rows(), d});
  if (stats) {
    stats->mean.assign(x.rows(), 0.0);
    stats->rstd.assign(x.rows(), 0.0);
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    auto out = y.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = (in[j] - mean) * rstd * gamma[j] + beta[j];
    if (stats) {
      stats->mean[i] = mean;
      stats->rstd[i] = rstd;
    }
  }
  return y;
}

}  // namespace ropeformer
