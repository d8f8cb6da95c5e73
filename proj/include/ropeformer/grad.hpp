#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ropeformer/attention.hpp"
#include "ropeformer/conformer.hpp"
#include "ropeformer/params.hpp"
#include "ropeformer/tensor.hpp"

namespace ropeformer {

// Reverse-mode gradients. Each forward op above records what it needs in a
// tape; the functions here take the upstream gradient and that tape, add
// parameter gradients into a struct of the parameter type and return the
// gradient with respect to the op input.

// ---------------------------------------------------------------------------
// Primitive backward passes
// ---------------------------------------------------------------------------

struct MatmulGrads {
  Tensor da, db;
};

inline MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  return {matmul_nt(dc, b), matmul_tn(a, dc)};
}

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  detail::require_same_shape(y, dy, "softmax_rows_backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = dy.row(i);
    const double s = dot(yr, gr);
    auto out = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = yr[j] * (gr[j] - s);
  }
  return dx;
}

struct NormGrads {
  Tensor dx, dgamma, dbeta;
};

inline NormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const NormStats& stats, const Tensor& dy) {
  detail::require_same_shape(x, dy, "layer_norm_backward");
  if (stats.mean.size() != x.rows()) throw InternalError("layer_norm_backward: statistics were not recorded");
  const std::size_t d = x.cols();
  NormGrads g{Tensor(x.shape()), Tensor({d}), Tensor({d})};
  std::vector<double> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto gr = dy.row(i);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - stats.mean[i]) * stats.rstd[i];
      dxhat[j] = gr[j] * gamma[j];
      g.dgamma[j] += gr[j] * xhat[j];
      g.dbeta[j] += gr[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    auto out = g.dx.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = stats.rstd[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
  return g;
}

inline Tensor swish_backward(const Tensor& x, const Tensor& dy) {
  detail::require_same_shape(x, dy, "swish_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = sigmoid(x[i]);
    dx[i] = dy[i] * (s + x[i] * s * (1.0 - s));
  }
  return dx;
}

inline Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
  detail::require_same_shape(pre, dy, "relu_backward");
  Tensor dx(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

inline Tensor glu_backward(const Tensor& x, const Tensor& dy) {
  const std::size_t h = x.cols() / 2;
  if (dy.rows() != x.rows() || dy.cols() != h) throw DimensionError("glu_backward: gradient shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const double a = x(i, j);
      const double s = sigmoid(x(i, j + h));
      dx(i, j) = dy(i, j) * s;
      dx(i, j + h) = dy(i, j) * a * s * (1.0 - s);
    }
  }
  return dx;
}

struct ConvGrads {
  Tensor dx, dw, db;
};

inline ConvGrads depthwise_conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  detail::require_same_shape(x, dy, "depthwise_conv_backward");
  const std::size_t k = w.rows();
  const auto t_len = static_cast<std::ptrdiff_t>(x.rows());
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), col_sum(dy)};
  for (std::ptrdiff_t t = 0; t < t_len; ++t) {
    auto gr = dy.row(static_cast<std::size_t>(t));
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= t_len) continue;
      auto xin = x.row(static_cast<std::size_t>(src));
      auto dxr = g.dx.row(static_cast<std::size_t>(src));
      auto wr = w.row(j);
      auto dwr = g.dw.row(j);
      for (std::size_t c = 0; c < gr.size(); ++c) {
        dxr[c] += wr[c] * gr[c];
        dwr[c] += xin[c] * gr[c];
      }
    }
  }
  return g;
}

inline ConvGrads conv2d_stride2_backward(const Tensor& in, const Tensor& w, const Tensor& dout) {
  const std::size_t cin = in.dim(0), hin = in.dim(1), win = in.dim(2), cout = w.dim(0);
  const std::size_t ho = dout.dim(1), wo = dout.dim(2);
  ConvGrads g{Tensor(in.shape()), Tensor(w.shape()), Tensor({cout})};
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const double go = dout(co, i, j);
        g.db[co] += go;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t di = 0; di < 3; ++di) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(2 * i + di) - 1;
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(hin)) continue;
            for (std::size_t dj = 0; dj < 3; ++dj) {
              const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(2 * j + dj) - 1;
              if (c < 0 || c >= static_cast<std::ptrdiff_t>(win)) continue;
              const std::size_t widx = ((co * cin + ci) * 3 + di) * 3 + dj;
              const auto rr = static_cast<std::size_t>(r), cc = static_cast<std::size_t>(c);
              g.dw[widx] += go * in(ci, rr, cc);
              g.dx(ci, rr, cc) += go * w[widx];
            }
          }
        }
      }
    }
  }
  return g;
}

/// Rotation is orthogonal, so the gradient is the inverse rotation of dy.
inline Tensor rope_rotate_backward(const Tensor& dy, std::size_t m, const RotaryCache& cache) {
  Tensor dx(dy.shape());
  rope_rotate_into(dy.data(), dx.data(), m, cache, RotationDirection::inverse);
  return dx;
}

/// Mean cross-entropy of softmax(logits) against `label`; writes dL/dlogits.
inline double softmax_cross_entropy(const Tensor& logits, std::size_t label, Tensor* dlogits = nullptr) {
  if (label >= logits.size()) throw DimensionError("softmax_cross_entropy: label out of range");
  const Tensor p = softmax_rows(logits.reshaped({1, logits.size()}));
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double lse = 0.0;
  for (double v : logits.data()) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  if (dlogits) {
    *dlogits = Tensor(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) (*dlogits)[i] = p[i] - (i == label ? 1.0 : 0.0);
  }
  return lse - logits[label];
}

// ---------------------------------------------------------------------------
// Module backward passes
// ---------------------------------------------------------------------------

namespace detail {

inline void require_recorded(bool recorded, const char* what) {
  if (!recorded) throw InternalError(std::string(what) + ": backward called without a recorded forward");
}

inline void add_rows_into(Tensor& table, std::size_t first, const Tensor& rows) {
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto dst = table.row(first + i);
    auto src = rows.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

}  // namespace detail

/// Backward of mhsa_forward. Accumulates into g (attention weights) and gpe
/// (trainable position parameters); returns dL/dx.
inline Tensor mhsa_backward(const Tensor& dy, const AttentionParams& p, const PEMode& pe, const MhsaTape& tp,
                            AttentionParams& g, PEMode& gpe) {
  detail::require_recorded(tp.recorded, "mhsa_backward");
  const std::size_t t = tp.x_in.rows();
  const std::size_t d_h = p.head_dim();
  const std::size_t d_m = p.d_attn();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_h));

  axpy(g.w_o, matmul_tn(tp.context, dy));
  const Tensor dctx = matmul_nt(dy, p.w_o);

  Tensor dq({t, d_m}), dk({t, d_m}), dv({t, d_m});
  const bool relative = pe.kind == PEKind::relative;
  Tensor dk_content, dk_pos, dk_bias, dk_posbias;
  if (relative) {
    dk_content = Tensor({t, d_m});
    dk_pos = Tensor({2 * t - 1, d_m});
    dk_bias = Tensor({t, d_m});
    dk_posbias = Tensor({2 * t - 1, d_m});
  }
  const Tensor& qs = pe.kind == PEKind::rotary ? tp.q_rot : tp.q;
  const Tensor& ks = pe.kind == PEKind::rotary ? tp.k_rot : tp.k;

  for (std::size_t hh = 0; hh < p.heads; ++hh) {
    const std::size_t c0 = hh * d_h;
    const Tensor& w = tp.weights[hh];
    const Tensor dc = slice_cols(dctx, c0, d_h);
    set_cols(dv, c0, matmul_tn(w, dc));
    const Tensor dw = matmul_nt(dc, slice_cols(tp.v, c0, d_h));
    const Tensor ds = scale(softmax_rows_backward(w, dw), inv_scale);

    if (!relative) {
      Tensor dqh = matmul(ds, slice_cols(ks, c0, d_h));
      Tensor dkh = matmul_tn(ds, slice_cols(qs, c0, d_h));
      if (pe.kind == PEKind::rotary) {
        dqh = rope_rotate_rows(dqh, tp.position_offset, pe.rotary, RotationDirection::inverse);
        dkh = rope_rotate_rows(dkh, tp.position_offset, pe.rotary, RotationDirection::inverse);
      }
      set_cols(dq, c0, dqh);
      set_cols(dk, c0, dkh);
      continue;
    }

    const RelativeParams& rel = pe.relative;
    std::vector<double> sum_n(t, 0.0), sum_r(2 * t - 1, 0.0);
    for (std::size_t m = 0; m < t; ++m) {
      for (std::size_t n = 0; n < t; ++n) {
        const double s = ds(m, n);
        const std::size_t r = m + t - 1 - n;
        sum_n[n] += s;
        sum_r[r] += s;
        for (std::size_t c = 0; c < d_h; ++c) {
          dq(m, c0 + c) += s * (tp.rel.k_content(n, c0 + c) + tp.rel.k_pos(r, c0 + c));
          dk_content(n, c0 + c) += s * tp.q(m, c0 + c);
          dk_pos(r, c0 + c) += s * tp.q(m, c0 + c);
        }
      }
    }
    for (std::size_t n = 0; n < t; ++n) {
      for (std::size_t c = 0; c < d_h; ++c) {
        gpe.relative.u[c0 + c] += sum_n[n] * tp.rel.k_bias(n, c0 + c);
        dk_bias(n, c0 + c) += sum_n[n] * rel.u[c0 + c];
      }
    }
    for (std::size_t r = 0; r < 2 * t - 1; ++r) {
      for (std::size_t c = 0; c < d_h; ++c) {
        gpe.relative.v[c0 + c] += sum_r[r] * tp.rel.k_posbias(r, c0 + c);
        dk_posbias(r, c0 + c) += sum_r[r] * rel.v[c0 + c];
      }
    }
  }

  Tensor dx = matmul_nt(dq, p.w_q);
  axpy(dx, matmul_nt(dv, p.w_v));
  axpy(g.w_q, matmul_tn(tp.x_in, dq));
  axpy(g.w_v, matmul_tn(tp.x_in, dv));
  if (!relative) {
    axpy(dx, matmul_nt(dk, p.w_k));
    axpy(g.w_k, matmul_tn(tp.x_in, dk));
  } else {
    const RelativeParams& rel = pe.relative;
    if (rel.variant == RelativeVariant::transformer_xl) {
      axpy(dk_content, dk_bias);
      axpy(dk_pos, dk_posbias);
    }
    axpy(dx, matmul_nt(dk_content, rel.w_kE));
    axpy(gpe.relative.w_kE, matmul_tn(tp.x_in, dk_content));
    Tensor dr = matmul_nt(dk_pos, rel.w_kR);
    axpy(gpe.relative.w_kR, matmul_tn(tp.rel.r_rows, dk_pos));
    if (rel.variant == RelativeVariant::literal) {
      axpy(dx, matmul_nt(dk_bias, p.w_k));
      axpy(g.w_k, matmul_tn(tp.x_in, dk_bias));
      axpy(dr, matmul_nt(dk_posbias, p.w_k));
      axpy(g.w_k, matmul_tn(tp.rel.r_rows, dk_posbias));
    }
    detail::add_rows_into(gpe.relative.r_table, rel.offset_index(-static_cast<std::ptrdiff_t>(t) + 1), dr);
  }
  if (pe.kind == PEKind::learned) detail::add_rows_into(gpe.learned.table, tp.position_offset, dx);
  return dx;
}

inline Tensor ffn_backward(const Tensor& dy, const FfnParams& p, const FfnTape& tp, FfnParams& g) {
  detail::require_recorded(tp.recorded && !tp.x.empty(), "ffn_backward");
  Tensor d_out = scale(dy, 0.5);
  if (!tp.drop.empty()) d_out = mul(d_out, tp.drop);
  axpy(g.b2, col_sum(d_out));
  axpy(g.w2, matmul_tn(tp.a, d_out));
  const Tensor dh = swish_backward(tp.h, matmul_nt(d_out, p.w2));
  axpy(g.b1, col_sum(dh));
  axpy(g.w1, matmul_tn(tp.z, dh));
  const NormGrads ln = layer_norm_backward(tp.x, p.ln_gamma, tp.ln, matmul_nt(dh, p.w1));
  axpy(g.ln_gamma, ln.dgamma);
  axpy(g.ln_beta, ln.dbeta);
  return add(dy, ln.dx);
}

inline Tensor conv_backward(const Tensor& dy, const ConvModuleParams& p, const ConvTape& tp, ConvModuleParams& g) {
  detail::require_recorded(tp.recorded && !tp.x.empty(), "conv_backward");
  Tensor d_out = tp.drop.empty() ? dy : mul(dy, tp.drop);
  axpy(g.pw2_b, col_sum(d_out));
  axpy(g.pw2_w, matmul_tn(tp.s, d_out));
  const Tensor dn = swish_backward(tp.n, matmul_nt(d_out, p.pw2_w));

  Tensor dh;
  switch (tp.norm_path) {
    case NormPath::layer: {
      const NormGrads ng = layer_norm_backward(tp.h, p.norm_gamma, tp.norm, dn);
      axpy(g.norm_gamma, ng.dgamma);
      axpy(g.norm_beta, ng.dbeta);
      dh = ng.dx;
      break;
    }
    case NormPath::batch_stats: {
      // n = colnorm(h) * gamma + beta with colnorm over time per channel.
      Tensor dnhat(dn.shape());
      for (std::size_t t = 0; t < dn.rows(); ++t) {
        for (std::size_t c = 0; c < dn.cols(); ++c) {
          const double nhat = (tp.h(t, c) - tp.norm.mean[c]) * tp.norm.rstd[c];
          g.norm_gamma[c] += dn(t, c) * nhat;
          g.norm_beta[c] += dn(t, c);
          dnhat(t, c) = dn(t, c) * p.norm_gamma[c];
        }
      }
      const Tensor ones({dn.rows()}, 1.0);
      dh = transpose(layer_norm_backward(transpose(tp.h), ones, tp.norm, transpose(dnhat)).dx);
      break;
    }
    case NormPath::running_stats: {
      dh = Tensor(dn.shape());
      for (std::size_t t = 0; t < dn.rows(); ++t) {
        for (std::size_t c = 0; c < dn.cols(); ++c) {
          const double rstd = 1.0 / std::sqrt(p.running_var[c] + kNormEps);
          g.norm_gamma[c] += dn(t, c) * (tp.h(t, c) - p.running_mean[c]) * rstd;
          g.norm_beta[c] += dn(t, c);
          dh(t, c) = dn(t, c) * p.norm_gamma[c] * rstd;
        }
      }
      break;
    }
  }

  const ConvGrads cg = depthwise_conv_backward(tp.g, p.dw_w, dh);
  axpy(g.dw_w, cg.dw);
  axpy(g.dw_b, cg.db);
  const Tensor dp = glu_backward(tp.p, cg.dx);
  axpy(g.pw1_b, col_sum(dp));
  axpy(g.pw1_w, matmul_tn(tp.z, dp));
  const NormGrads ln = layer_norm_backward(tp.x, p.ln_gamma, tp.ln, matmul_nt(dp, p.pw1_w));
  axpy(g.ln_gamma, ln.dgamma);
  axpy(g.ln_beta, ln.dbeta);
  return add(dy, ln.dx);
}

inline Tensor block_backward(const Tensor& dy, const EncoderBlockParams& p, const BlockTape& tp,
                             EncoderBlockParams& g) {
  detail::require_recorded(tp.recorded, "block_backward");
  const NormGrads fin = layer_norm_backward(tp.x4, p.final_gamma, tp.final_ln, dy);
  axpy(g.final_gamma, fin.dgamma);
  axpy(g.final_beta, fin.dbeta);
  const Tensor dx3 = ffn_backward(fin.dx, p.ffn2, tp.ffn2, g.ffn2);
  const Tensor dx2 = conv_backward(dx3, p.conv, tp.conv, g.conv);
  const Tensor datt = tp.mhsa_drop.empty() ? dx2 : mul(dx2, tp.mhsa_drop);
  const Tensor dz = mhsa_backward(datt, p.mhsa, p.pe, tp.mhsa, g.mhsa, g.pe);
  const NormGrads ln = layer_norm_backward(tp.x1, p.mhsa_ln_gamma, tp.mhsa_ln, dz);
  axpy(g.mhsa_ln_gamma, ln.dgamma);
  axpy(g.mhsa_ln_beta, ln.dbeta);
  return ffn_backward(add(dx2, ln.dx), p.ffn1, tp.ffn1, g.ffn1);
}

/// Returns dL/dfeatures [T x F].
inline Tensor frontend_backward(const Tensor& dy, const FrontendParams& p, const FrontendTape& tp, FrontendParams& g) {
  detail::require_recorded(tp.recorded, "frontend_backward");
  axpy(g.proj_b, col_sum(dy));
  axpy(g.proj_w, matmul_tn(tp.flat, dy));
  const Tensor dflat = matmul_nt(dy, p.proj_w);
  const std::size_t c = tp.h2.dim(0), t2 = tp.h2.dim(1), f2 = tp.h2.dim(2);
  Tensor dh2(tp.h2.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < t2; ++t)
      for (std::size_t f = 0; f < f2; ++f) dh2(ch, t, f) = dflat(t, ch * f2 + f);
  const ConvGrads c2 = conv2d_stride2_backward(tp.h1, p.conv2_w, relu_backward(tp.a2, dh2));
  axpy(g.conv2_w, c2.dw);
  axpy(g.conv2_b, c2.db);
  const ConvGrads c1 = conv2d_stride2_backward(tp.input, p.conv1_w, relu_backward(tp.a1, c2.dx));
  axpy(g.conv1_w, c1.dw);
  axpy(g.conv1_b, c1.db);
  return c1.dx.reshaped({tp.input.dim(1), tp.input.dim(2)});
}

inline Tensor encoder_backward(const Tensor& dy, const EncoderParams& p, const EncoderTape& tp, EncoderParams& g) {
  if (tp.blocks.size() != p.blocks.size()) throw InternalError("encoder_backward: tape does not match parameters");
  Tensor d = dy;
  for (std::size_t b = p.blocks.size(); b-- > 0;) d = block_backward(d, p.blocks[b], tp.blocks[b], g.blocks[b]);
  return frontend_backward(d, p.frontend, tp.frontend, g.frontend);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords = 200;  // per tensor; full sweep at or below this size
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor). Central differences
  /// carry roundoff of about eps * |loss| / step (~1e-10 here), so
  /// coordinates with gradients below the floor are held to an absolute
  /// error of tolerance * floor instead of a ratio of roundoff terms.
  double floor = 1e-4;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t total = 0;
  double step = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }

  bool passed(double tol) const { return max_rel_err() <= tol; }

  /// One line per parameter: name, max relative error, FD step.
  std::string to_text() const {
    std::string out;
    char buf[256];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof buf, "%-32s max_rel_err=%.3e step=%.0e checked=%zu/%zu worst=%zu\n", e.name.c_str(),
                    e.max_rel_err, e.step, e.checked, e.total, e.worst_index);
      out += buf;
    }
    return out;
  }
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares `analytic` against central differences of `loss` at `params`.
template <class P>
GradCheckReport grad_check(const std::function<double(const P&)>& loss, const P& params, const P& analytic,
                           const GradCheckOptions& opt = {}) {
  if (opt.step < 1e-6 || opt.step > 1e-4) throw ConfigError("grad_check: step must lie in [1e-6, 1e-4]");
  P work = params;
  auto wt = named_tensors(work);
  auto at = named_tensors(analytic);
  if (wt.size() != at.size()) throw DimensionError("grad_check: gradient structure differs from parameters");
  Rng rng(opt.seed);
  auto eval = [&](const std::string& name) {
    const double v = loss(work);
    if (!std::isfinite(v)) throw EvaluationError("grad_check: loss is not finite while perturbing " + name);
    return v;
  };
  GradCheckReport report;
  for (std::size_t i = 0; i < wt.size(); ++i) {
    Tensor& t = *wt[i].tensor;
    const Tensor& a = *at[i].tensor;
    if (!t.same_shape(a)) throw DimensionError("grad_check: gradient shape mismatch for " + wt[i].name);
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.max_coords) {
      for (std::size_t k = 0; k < opt.max_coords; ++k) {
        std::swap(coords[k], coords[k + rng.uniform_int(coords.size() - k)]);
      }
      coords.resize(opt.max_coords);
    }
    GradCheckEntry e;
    e.name = wt[i].name;
    e.total = t.size();
    e.checked = coords.size();
    e.step = opt.step;
    for (std::size_t c : coords) {
      const double orig = t[c];
      t[c] = orig + opt.step;
      const double fp = eval(wt[i].name);
      t[c] = orig - opt.step;
      const double fm = eval(wt[i].name);
      t[c] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = relative_error(a[c], numeric, opt.floor);
      if (c == coords.front() || err > e.max_rel_err) {
        e.max_rel_err = err;
        e.worst_index = c;
        e.analytic = a[c];
        e.numeric = numeric;
      }
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Adam with warmup schedule
// ---------------------------------------------------------------------------

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double peak_lr = 1e-3;
  std::size_t warmup = 100;
};

/// peak * min(step / warmup, sqrt(warmup / step)); peaks at step == warmup.
inline double scheduled_lr(std::size_t step, double peak, std::size_t warmup) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max<std::size_t>(warmup, 1));
  return peak * std::min(s / w, std::sqrt(w / s));
}

template <class P>
struct AdamState {
  P m;
  P v;
  std::size_t step = 0;
  AdamOptions options;
};

template <class P>
AdamState<P> make_adam_state(const P& params, const AdamOptions& options = {}) {
  return {zeros_like_params(params), zeros_like_params(params), 0, options};
}

/// One bias-corrected Adam update at the scheduled learning rate.
template <class P>
void adam_step(P& params, const P& grads, AdamState<P>& state) {
  auto pt = named_tensors(params);
  auto gt = named_tensors(grads);
  auto mt = named_tensors(state.m);
  auto vt = named_tensors(state.v);
  if (pt.size() != gt.size() || pt.size() != mt.size() || pt.size() != vt.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment structures differ");
  }
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (!pt[i].tensor->same_shape(*gt[i].tensor) || !pt[i].tensor->same_shape(*mt[i].tensor)) {
      throw DimensionError("adam_step: shape mismatch for " + pt[i].name);
    }
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double lr = scheduled_lr(state.step, o.peak_lr, o.warmup);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto p = pt[i].tensor->data();
    auto g = gt[i].tensor->data();
    auto m = mt[i].tensor->data();
    auto v = vt[i].tensor->data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
    }
  }
}

}  // namespace ropeformer
