#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ropeformer/attention.hpp"
#include "ropeformer/conformer.hpp"
#include "ropeformer/grad.hpp"
#include "ropeformer/model.hpp"
#include "ropeformer/params.hpp"
#include "ropeformer/posemb.hpp"

namespace ropeformer {

// Property suite for the position-embedding and attention kernels. Each
// check draws random cases from a seeded generator, compares against an
// independent scalar or dense-matrix evaluation, and reports the worst
// observed error next to its tolerance.

struct PropertyResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t cases = 1000;
};

inline std::string format_property(const PropertyResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s  %-34s worst=%.3e tol=%.0e cases=%zu time=%.2fs%s%s", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.worst, r.tolerance, r.cases, r.seconds, r.detail.empty() ? "" : "  ",
                r.detail.c_str());
  return buf;
}

namespace detail {

/// |a - b| scaled by max(1, |a|, |b|): absolute near zero, relative above one.
inline double scaled_diff(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <class Body>
PropertyResult run_property(const std::string& name, double tol, Body&& body) {
  PropertyResult r;
  r.name = name;
  r.tolerance = tol;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
    r.passed = std::isfinite(r.worst) && r.worst <= tol;
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// y = R x with a dense matrix.
inline std::vector<double> mat_vec(const Tensor& r, std::span<const double> x) {
  std::vector<double> y(r.rows(), 0.0);
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) y[i] += r(i, j) * x[j];
  return y;
}

/// Row m of x times W, restricted to columns [c0, c0 + w).
inline std::vector<double> row_times(const Tensor& x, std::size_t m, const Tensor& w, std::size_t c0, std::size_t width) {
  std::vector<double> out(width, 0.0);
  for (std::size_t c = 0; c < width; ++c)
    for (std::size_t j = 0; j < x.cols(); ++j) out[c] += x(m, j) * w(j, c0 + c);
  return out;
}

inline double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// <f_q(x, m+s), f_k(y, n+s)> equals <f_q(x, m), f_k(y, n)>.
inline PropertyResult check_shift_invariance(const VerifyOptions& opt = {}) {
  return detail::run_property("rope shift invariance", 1e-10, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 101);
    constexpr std::size_t kTmax = 1024;
    const std::size_t dims[] = {2, 4, 8, 64};
    std::vector<RotaryCache> caches;
    for (std::size_t d : dims) caches.push_back(make_rotary_cache(kTmax, d));
    for (std::size_t c = 0; c < opt.cases; ++c) {
      const std::size_t k = rng.uniform_int(4);
      const std::size_t d = dims[k];
      const Tensor x = randn({d}, rng), y = randn({d}, rng);
      const std::size_t m = rng.uniform_int(kTmax / 2), n = rng.uniform_int(kTmax / 2), s = rng.uniform_int(kTmax / 2);
      const double base = dot(rope_rotate(x, m, caches[k]).data(), rope_rotate(y, n, caches[k]).data());
      const double shifted = dot(rope_rotate(x, m + s, caches[k]).data(), rope_rotate(y, n + s, caches[k]).data());
      r.worst = std::max(r.worst, std::abs(shifted - base) / (std::abs(base) + 1e-12));
      ++r.cases;
    }
  });
}

/// Fast rotation = dense block-diagonal matrix = per-pair complex form.
inline PropertyResult check_oracle_triangle(const VerifyOptions& opt = {}) {
  return detail::run_property("rope oracle triangle", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 102);
    constexpr std::size_t kTmax = 64;
    const std::size_t dims[] = {2, 4, 8, 16};
    std::vector<RotaryCache> caches;
    for (std::size_t d : dims) caches.push_back(make_rotary_cache(kTmax, d));
    for (std::size_t c = 0; c < opt.cases; ++c) {
      const std::size_t k = rng.uniform_int(4);
      const std::size_t d = dims[k];
      const Tensor xq = randn({d}, rng), xk = randn({d}, rng);
      const std::size_t m = rng.uniform_int(kTmax), n = rng.uniform_int(kTmax);
      const Tensor fq = rope_rotate(xq, m, caches[k]);
      const Tensor fk = rope_rotate(xk, n, caches[k]);
      const auto mq = detail::mat_vec(rope_rotation_matrix(d, m), xq.data());
      const auto mk = detail::mat_vec(rope_rotation_matrix(d, n), xk.data());
      for (std::size_t i = 0; i < d; ++i) {
        r.worst = std::max(r.worst, detail::scaled_diff(fq[i], mq[i]));
        r.worst = std::max(r.worst, detail::scaled_diff(fk[i], mk[i]));
      }
      for (std::size_t i = 0; i < d / 2; ++i) {
        const double pair_fast = fq[2 * i] * fk[2 * i] + fq[2 * i + 1] * fk[2 * i + 1];
        const double pair_complex = rope_complex_2d(xq.data().subspan(2 * i, 2), xk.data().subspan(2 * i, 2),
                                                    static_cast<std::ptrdiff_t>(m), static_cast<std::ptrdiff_t>(n),
                                                    caches[k].theta[i]);
        r.worst = std::max(r.worst, detail::scaled_diff(pair_fast, pair_complex));
      }
      ++r.cases;
    }
  });
}

/// R^T R = I and R_m R_s = R_{m+s} for d <= 16 and m, s <= 20.
inline PropertyResult check_rotation_algebra(const VerifyOptions& = {}) {
  return detail::run_property("rotation orthogonality/addition", 1e-12, [&](PropertyResult& r) {
    for (std::size_t d = 2; d <= 16; d += 2) {
      std::vector<Tensor> mats;
      for (std::size_t m = 0; m <= 40; ++m) mats.push_back(rope_rotation_matrix(d, m));
      const Tensor eye = [&] {
        Tensor e({d, d});
        for (std::size_t i = 0; i < d; ++i) e(i, i) = 1.0;
        return e;
      }();
      for (std::size_t m = 0; m <= 20; ++m) {
        const Tensor rtr = matmul_tn(mats[m], mats[m]);
        for (std::size_t i = 0; i < d * d; ++i) r.worst = std::max(r.worst, std::abs(rtr[i] - eye[i]));
        for (std::size_t s = 0; s <= 20; ++s) {
          const Tensor prod = matmul(mats[m], mats[s]);
          for (std::size_t i = 0; i < d * d; ++i) r.worst = std::max(r.worst, std::abs(prod[i] - mats[m + s][i]));
          ++r.cases;
        }
      }
    }
  });
}

/// ||rope_rotate(x, m)|| = ||x||.
inline PropertyResult check_norm_preservation(const VerifyOptions& opt = {}) {
  return detail::run_property("rope norm preservation", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 103);
    const RotaryCache cache = make_rotary_cache(512, 32);
    for (std::size_t c = 0; c < opt.cases; ++c) {
      const Tensor x = randn({32}, rng);
      const std::size_t m = rng.uniform_int(512);
      r.worst = std::max(r.worst, detail::scaled_diff(norm2(rope_rotate(x, m, cache).data()), norm2(x.data())));
      ++r.cases;
    }
  });
}

/// Sinusoidal table pairs lie on the unit circle; row 0 is (0, 1, 0, 1, ...).
inline PropertyResult check_sinusoidal_table(const VerifyOptions& = {}) {
  return detail::run_property("sinusoidal unit circle", 1e-12, [&](PropertyResult& r) {
    const SinusoidalTable t = sinusoidal_pe(256, 16);
    for (std::size_t m = 0; m < 256; ++m) {
      for (std::size_t j = 0; j < 8; ++j) {
        const double a = t.table(m, 2 * j), b = t.table(m, 2 * j + 1);
        r.worst = std::max(r.worst, std::abs(a * a + b * b - 1.0));
        ++r.cases;
      }
    }
    for (std::size_t j = 0; j < 8; ++j) {
      r.worst = std::max(r.worst, std::abs(t.table(0, 2 * j)));
      r.worst = std::max(r.worst, std::abs(t.table(0, 2 * j + 1) - 1.0));
    }
  });
}

/// Learned-table lookups beyond the table raise instead of wrapping.
inline PropertyResult check_learned_range(const VerifyOptions& opt = {}) {
  return detail::run_property("learned table range error", 0.0, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 104);
    const LearnedTable t = make_learned_table(8, 4, rng);
    for (std::size_t m = 0; m < 16; ++m) {
      bool threw = false;
      try {
        (void)t.lookup(m);
      } catch (const PositionRangeError&) {
        threw = true;
      }
      if (threw != (m >= 8)) r.worst = 1.0;
      ++r.cases;
    }
  });
}

/// Absolute-PE head logits equal the four-term expansion
///   x_m W_q (x_n W_k)^T + x_m W_q (p_n W_k)^T + p_m W_q (x_n W_k)^T + p_m W_q (p_n W_k)^T
/// evaluated term by term, for sinusoidal and learned tables.
inline PropertyResult check_absolute_decomposition(const VerifyOptions& opt = {}) {
  return detail::run_property("absolute logit decomposition", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 105);
    constexpr std::size_t t = 4, d = 8, heads = 2, d_h = d / heads;
    for (std::size_t c = 0; c < 50; ++c) {
      for (PEKind kind : {PEKind::sinusoidal, PEKind::learned}) {
        const AttentionParams params = make_attention_params(d, d, heads, rng, 1.0);
        const PEMode pe = make_pe_mode(kind, d, d, d_h, rng, {16, RelativeVariant::literal, kDefaultPositionBase, 1.0});
        const Tensor x = randn({t, d}, rng);
        const std::size_t offset = rng.uniform_int(16 - t + 1);
        const Tensor p = kind == PEKind::sinusoidal ? pe.sinusoidal.rows(offset, t) : pe.learned.rows(offset, t);
        const Tensor logits = attention_logits(x, params, pe, offset);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t m = 0; m < t; ++m) {
            const auto xq = detail::row_times(x, m, params.w_q, h * d_h, d_h);
            const auto pq = detail::row_times(p, m, params.w_q, h * d_h, d_h);
            for (std::size_t n = 0; n < t; ++n) {
              const auto xk = detail::row_times(x, n, params.w_k, h * d_h, d_h);
              const auto pk = detail::row_times(p, n, params.w_k, h * d_h, d_h);
              const double four = detail::dot_vec(xq, xk) + detail::dot_vec(xq, pk) + detail::dot_vec(pq, xk) +
                                  detail::dot_vec(pq, pk);
              const double got = logits(h, m, n) * std::sqrt(static_cast<double>(d_h));
              r.worst = std::max(r.worst, detail::scaled_diff(got, four));
            }
          }
        }
        ++r.cases;
      }
    }
  });
}

/// Relative logits equal a scalar evaluation of the four terms
///   q_m . (x_n W_kE) + q_m . (R_{m-n} W_kR) + u . (x_n K1) + v . (R_{m-n} K2)
/// with (K1, K2) = (W_k, W_k) for the literal form and (W_kE, W_kR) otherwise.
inline PropertyResult check_relative_oracle(const VerifyOptions& opt = {}) {
  return detail::run_property("relative logit oracle", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 106);
    constexpr std::size_t t = 4, d = 8, t_max = 6;
    for (std::size_t c = 0; c < 50; ++c) {
      for (RelativeVariant variant : {RelativeVariant::literal, RelativeVariant::transformer_xl}) {
        const AttentionParams params = make_attention_params(d, d, 1, rng, 1.0);
        const RelativeParams rel = make_relative_params(t_max, d, d, rng, variant, 1.0);
        const Tensor x = randn({t, d}, rng);
        const Tensor got = relative_logits(x, params, rel);
        const Tensor& k1 = variant == RelativeVariant::literal ? params.w_k : rel.w_kE;
        const Tensor& k2 = variant == RelativeVariant::literal ? params.w_k : rel.w_kR;
        for (std::size_t m = 0; m < t; ++m) {
          for (std::size_t n = 0; n < t; ++n) {
            const std::size_t ri = m + t_max - 1 - n;  // offset m - n
            double sum = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
              double q = 0.0, ke = 0.0, kr = 0.0, kb = 0.0, kp = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                q += x(m, j) * params.w_q(j, a);
                ke += x(n, j) * rel.w_kE(j, a);
                kr += rel.r_table(ri, j) * rel.w_kR(j, a);
                kb += x(n, j) * k1(j, a);
                kp += rel.r_table(ri, j) * k2(j, a);
              }
              sum += q * ke + q * kr + rel.u[a] * kb + rel.v[a] * kp;
            }
            r.worst = std::max(r.worst, detail::scaled_diff(got(m, n), sum));
          }
        }
        ++r.cases;
      }
    }
  });
}

/// Multi-head rotary logits are unchanged when every position shifts by s.
inline PropertyResult check_mhsa_shift_invariance(const VerifyOptions& opt = {}) {
  return detail::run_property("mhsa rotary logit shift", 1e-10, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 107);
    constexpr std::size_t d = 16, heads = 4, t = 6, t_max = 128;
    for (std::size_t c = 0; c < 100; ++c) {
      const AttentionParams params = make_attention_params(d, d, heads, rng, 1.0);
      const PEMode pe = make_pe_mode(PEKind::rotary, d, d, d / heads, rng, {t_max});
      const Tensor x = randn({t, d}, rng);
      const std::size_t s = rng.uniform_int(t_max - t + 1);
      const Tensor a = attention_logits(x, params, pe, 0);
      const Tensor b = attention_logits(x, params, pe, s);
      for (std::size_t i = 0; i < a.size(); ++i) {
        r.worst = std::max(r.worst, std::abs(a[i] - b[i]) / (std::abs(a[i]) + 1e-12));
      }
      ++r.cases;
    }
  });
}

/// Without position information, permuting input rows permutes output rows.
inline PropertyResult check_permutation_equivariance(const VerifyOptions& opt = {}) {
  return detail::run_property("mhsa none permutation", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 108);
    constexpr std::size_t d = 8, t = 5;
    for (std::size_t c = 0; c < 100; ++c) {
      const AttentionParams params = make_attention_params(d, d, 2, rng, 1.0);
      const PEMode pe;
      const Tensor x = randn({t, d}, rng);
      std::vector<std::size_t> perm(t);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = t - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
      Tensor xp({t, d});
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) xp(i, j) = x(perm[i], j);
      const Tensor y = mhsa_forward(x, params, pe);
      const Tensor yp = mhsa_forward(xp, params, pe);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) r.worst = std::max(r.worst, detail::scaled_diff(yp(i, j), y(perm[i], j)));
      ++r.cases;
    }
  });
}

/// Attention weight rows sum to one in every mode, including extreme inputs.
inline PropertyResult check_softmax_rows(const VerifyOptions& opt = {}) {
  return detail::run_property("attention rows sum to one", 1e-12, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 109);
    for (std::size_t c = 0; c < 100; ++c) {
      const Tensor x = scale(randn({7, 9}, rng), c % 2 == 0 ? 1.0 : 1e4);
      const Tensor s = softmax_rows(x);
      for (std::size_t i = 0; i < 7; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 9; ++j) sum += s(i, j);
        r.worst = std::max(r.worst, std::abs(sum - 1.0));
      }
      ++r.cases;
    }
    constexpr std::size_t d = 8, t = 5;
    for (PEKind kind : {PEKind::none, PEKind::sinusoidal, PEKind::learned, PEKind::relative, PEKind::rotary}) {
      const AttentionParams params = make_attention_params(d, d, 2, rng, 1.0);
      const PEMode pe = make_pe_mode(kind, d, d, d / 2, rng, {16});
      const Tensor w = attention_weights(randn({t, d}, rng), params, pe);
      for (std::size_t row = 0; row < 2 * t; ++row) {
        double sum = 0.0;
        for (std::size_t j = 0; j < t; ++j) sum += w[row * t + j];
        r.worst = std::max(r.worst, std::abs(sum - 1.0));
      }
      ++r.cases;
    }
  });
}

/// Through a stack of rotary encoder blocks, every block's attention logits
/// are unchanged by a global position shift.
inline PropertyResult check_encoder_shift_invariance(const VerifyOptions& opt = {}) {
  return detail::run_property("encoder rotary logit shift", 1e-9, [&](PropertyResult& r) {
    Rng rng = Rng::derive(opt.seed, 110);
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ffn_hidden = 32;
    cfg.conv_kernel = 3;
    cfg.t_max = 64;
    cfg.init_std = 0.3;
    for (std::size_t c = 0; c < 10; ++c) {
      const std::vector<EncoderBlockParams> blocks{make_block_params(cfg, rng), make_block_params(cfg, rng)};
      const Tensor x = randn({8, cfg.d_model}, rng);
      const std::size_t s = 1 + rng.uniform_int(40);
      std::vector<Tensor> logits[2];
      for (int pass = 0; pass < 2; ++pass) {
        ForwardOptions fo;
        fo.position_offset = pass == 0 ? 0 : s;
        Tensor y = x;
        for (const auto& b : blocks) {
          BlockTape tape;
          y = encoder_block(y, b, fo, &tape);
          for (const auto& l : tape.mhsa.logits) logits[pass].push_back(l);
        }
      }
      for (std::size_t i = 0; i < logits[0].size(); ++i)
        for (std::size_t j = 0; j < logits[0][i].size(); ++j)
          r.worst = std::max(r.worst,
                             std::abs(logits[0][i][j] - logits[1][i][j]) / (std::abs(logits[0][i][j]) + 1e-12));
      ++r.cases;
    }
  });
}

/// Every property, in a fixed order.
inline std::vector<PropertyResult> run_property_suite(const VerifyOptions& opt = {}) {
  return {check_shift_invariance(opt),       check_oracle_triangle(opt),        check_rotation_algebra(opt),
          check_norm_preservation(opt),      check_sinusoidal_table(opt),       check_learned_range(opt),
          check_absolute_decomposition(opt), check_relative_oracle(opt),        check_mhsa_shift_invariance(opt),
          check_permutation_equivariance(opt), check_softmax_rows(opt),         check_encoder_shift_invariance(opt)};
}

// ---------------------------------------------------------------------------
// Gradient checks by module
// ---------------------------------------------------------------------------

/// Attention weights plus the position bundle, checked together.
struct MhsaBundle {
  AttentionParams mhsa;
  PEMode pe;
};

template <class Self, class F>
  requires same_base<Self, MhsaBundle>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  visit_params(p.mhsa, prefix + "mhsa.", f);
  visit_params(p.pe, prefix + "pe.", f);
}

struct GradCheckSetup {
  PEKind mode = PEKind::rotary;
  RelativeVariant variant = RelativeVariant::literal;
  ConvNorm conv_norm = ConvNorm::layer;
  std::uint64_t seed = 0;
  GradCheckOptions check;
};

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"mhsa", "ffn", "conv", "block", "frontend", "encoder", "classifier"};
  return names;
}

/// Central-difference check of one module's parameters against its
/// backward pass, on the loss sum(y * R) for a fixed random R.
inline GradCheckReport gradcheck_module(const std::string& module, const GradCheckSetup& setup = {}) {
  Rng rng = Rng::derive(setup.seed, 200);
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  cfg.conv_kernel = 3;
  cfg.blocks = 2;
  cfg.subsample_channels = 3;
  cfg.t_max = 16;
  cfg.pe_mode = setup.mode;
  cfg.relative_variant = setup.variant;
  cfg.conv_norm = setup.conv_norm;
  cfg.init_std = 0.3;  // larger weights keep every term of the loss well above roundoff
  constexpr std::size_t t = 5;
  ForwardOptions fo;
  fo.position_offset = setup.mode == PEKind::relative ? 0 : 2;
  fo.training = true;  // batch-norm uses batch statistics, so the path is differentiable
  // Zero-initialized biases can leave whole rows at exactly zero, where layer
  // norm is at its most curved; jitter every parameter to a generic point.
  auto jitter = [&](auto& params) {
    visit_params(params, "", [&](const std::string&, Tensor& t) {
      for (double& v : t.data()) v += rng.normal(0.0, 0.1);
    });
  };
  auto weighted = [](const Tensor& y, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  if (module == "mhsa") {
    MhsaBundle p{make_attention_params(cfg.d_model, cfg.d_model, cfg.heads, rng, cfg.init_std),
                 make_pe_mode(cfg.pe_mode, cfg.d_model, cfg.d_model, cfg.head_dim(), rng, cfg.pe_options())};
    jitter(p);
    const Tensor x = randn({t, cfg.d_model}, rng), w = randn({t, cfg.d_model}, rng);
    MhsaTape tape;
    mhsa_forward(x, p.mhsa, p.pe, fo.position_offset, nullptr, &tape);
    MhsaBundle g = zeros_like_params(p);
    mhsa_backward(w, p.mhsa, p.pe, tape, g.mhsa, g.pe);
    return grad_check<MhsaBundle>(
        [&](const MhsaBundle& q) { return weighted(mhsa_forward(x, q.mhsa, q.pe, fo.position_offset), w); }, p, g,
        setup.check);
  }
  if (module == "ffn") {
    FfnParams p = make_ffn_params(cfg.d_model, cfg.ffn_hidden, rng, cfg.init_std);
    jitter(p);
    const Tensor x = randn({t, cfg.d_model}, rng), w = randn({t, cfg.d_model}, rng);
    FfnTape tape;
    ffn_module(x, p, fo, &tape);
    FfnParams g = zeros_like_params(p);
    ffn_backward(w, p, tape, g);
    return grad_check<FfnParams>([&](const FfnParams& q) { return weighted(ffn_module(x, q, fo), w); }, p, g,
                                 setup.check);
  }
  if (module == "conv") {
    ConvModuleParams p = make_conv_params(cfg.d_model, cfg.conv_kernel, rng, cfg.conv_norm, cfg.init_std);
    jitter(p);
    const Tensor x = randn({t, cfg.d_model}, rng), w = randn({t, cfg.d_model}, rng);
    ConvTape tape;
    conv_module(x, p, fo, &tape);
    ConvModuleParams g = zeros_like_params(p);
    conv_backward(w, p, tape, g);
    return grad_check<ConvModuleParams>([&](const ConvModuleParams& q) { return weighted(conv_module(x, q, fo), w); },
                                        p, g, setup.check);
  }
  if (module == "block") {
    EncoderBlockParams p = make_block_params(cfg, rng);
    jitter(p);
    const Tensor x = randn({t, cfg.d_model}, rng), w = randn({t, cfg.d_model}, rng);
    BlockTape tape;
    encoder_block(x, p, fo, &tape);
    EncoderBlockParams g = zeros_like_params(p);
    block_backward(w, p, tape, g);
    return grad_check<EncoderBlockParams>(
        [&](const EncoderBlockParams& q) { return weighted(encoder_block(x, q, fo), w); }, p, g, setup.check);
  }
  if (module == "frontend" || module == "encoder") {
    constexpr std::size_t frames = 9, features = 6;
    EncoderParams p = make_encoder_params(cfg, features, rng);
    if (module == "frontend") p.blocks.clear();
    jitter(p);
    EncoderConfig used = cfg;
    used.blocks = p.blocks.size();
    const Tensor f = randn({frames, features}, rng);
    const std::size_t t_out = subsampled_length(subsampled_length(frames));
    const Tensor w = randn({t_out, cfg.d_model}, rng);
    EncoderTape tape;
    encoder_forward(f, used, p, fo, &tape);
    EncoderParams g = zeros_like_params(p);
    encoder_backward(w, p, tape, g);
    return grad_check<EncoderParams>(
        [&](const EncoderParams& q) { return weighted(encoder_forward(f, used, q, fo), w); }, p, g, setup.check);
  }
  if (module == "classifier") {
    SyntheticTask task;
    task.t_train = 12;
    task.max_offset = 4;
    Example ex = gen_task(task, 1, 12, setup.seed)[0];
    ClassifierParams p = make_classifier_params(cfg, task.token_count(), task.num_classes(), rng);
    jitter(p);
    ClassifierParams g = zeros_like_params(p);
    ForwardOptions co = fo;
    co.position_offset = 0;
    classifier_loss(ex, p, Pooling::mean, co, &g);
    return grad_check<ClassifierParams>(
        [&](const ClassifierParams& q) { return classifier_loss(ex, q, Pooling::mean, co); }, p, g, setup.check);
  }
  throw ConfigError("gradcheck: unknown module '" + module + "'");
}

}  // namespace ropeformer
