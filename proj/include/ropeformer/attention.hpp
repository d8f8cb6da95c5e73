#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ropeformer/posemb.hpp"
#include "ropeformer/tensor.hpp"

namespace ropeformer {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct AttentionParams {
  Tensor w_q;  // [d x d_m]
  Tensor w_k;  // [d x d_m]
  Tensor w_v;  // [d x d_m]
  Tensor w_o;  // [d_m x d]
  std::size_t heads = 1;

  std::size_t d_model() const { return w_q.rows(); }
  std::size_t d_attn() const { return w_q.cols(); }
  std::size_t head_dim() const { return d_attn() / heads; }

  void validate() const {
    if (heads == 0 || w_q.empty()) throw ConfigError("attention: heads and projections must be set");
    if (d_attn() % heads != 0) {
      throw ConfigError("attention: d_m = " + std::to_string(d_attn()) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    const Tensor::Shape in{d_model(), d_attn()};
    if (w_k.shape() != in || w_v.shape() != in || w_o.shape() != Tensor::Shape{d_attn(), d_model()}) {
      throw DimensionError("attention: inconsistent projection shapes");
    }
  }
};

inline AttentionParams make_attention_params(std::size_t d, std::size_t d_m, std::size_t heads, Rng& rng,
                                             double stddev = kInitStd) {
  AttentionParams p{randn({d, d_m}, rng, stddev), randn({d, d_m}, rng, stddev), randn({d, d_m}, rng, stddev),
                    randn({d_m, d}, rng, stddev), heads};
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Position-embedding mode
// ---------------------------------------------------------------------------

enum class PEKind { none, sinusoidal, learned, relative, rotary };

inline std::string to_string(PEKind k) {
  switch (k) {
    case PEKind::none: return "none";
    case PEKind::sinusoidal: return "absolute-sinusoidal";
    case PEKind::learned: return "absolute-learned";
    case PEKind::relative: return "relative";
    case PEKind::rotary: return "rotary";
  }
  return "?";
}

inline PEKind parse_pe_kind(const std::string& s) {
  if (s == "none") return PEKind::none;
  if (s == "absolute-sinusoidal" || s == "sinusoidal" || s == "ape") return PEKind::sinusoidal;
  if (s == "absolute-learned" || s == "learned") return PEKind::learned;
  if (s == "relative" || s == "rpe") return PEKind::relative;
  if (s == "rotary" || s == "rope") return PEKind::rotary;
  throw ConfigError("unknown position-embedding mode '" + s + "'");
}

/// One active strategy per attention layer plus its parameter bundle. Only
/// the member matching `kind` is populated.
struct PEMode {
  PEKind kind = PEKind::none;
  SinusoidalTable sinusoidal;
  LearnedTable learned;
  RelativeParams relative;
  RotaryCache rotary;

  /// Longest sequence (including position offset) the tables cover.
  std::size_t t_max() const {
    switch (kind) {
      case PEKind::none: return std::numeric_limits<std::size_t>::max();
      case PEKind::sinusoidal: return sinusoidal.t_max();
      case PEKind::learned: return learned.t_max();
      case PEKind::relative: return relative.t_max();
      case PEKind::rotary: return rotary.t_max();
    }
    return 0;
  }
};

struct PEOptions {
  std::size_t t_max = 512;
  RelativeVariant relative_variant = RelativeVariant::literal;
  double base = kDefaultPositionBase;
  double init_std = kInitStd;
};

/// Builds the bundle for `kind` sized for a layer with model width d,
/// attention width d_m and per-head width d_h.
inline PEMode make_pe_mode(PEKind kind, std::size_t d, std::size_t d_m, std::size_t d_h, Rng& rng,
                           const PEOptions& opt = {}) {
  PEMode pe;
  pe.kind = kind;
  switch (kind) {
    case PEKind::none: break;
    case PEKind::sinusoidal: pe.sinusoidal = sinusoidal_pe(opt.t_max, d, opt.base); break;
    case PEKind::learned: pe.learned = make_learned_table(opt.t_max, d, rng, opt.init_std); break;
    case PEKind::relative:
      pe.relative = make_relative_params(opt.t_max, d, d_m, rng, opt.relative_variant, opt.init_std);
      break;
    case PEKind::rotary:
      if (d_h % 2 != 0) throw ConfigError("rotary mode needs an even head dimension, got " + std::to_string(d_h));
      pe.rotary = make_rotary_cache(opt.t_max, d_h, opt.base);
      break;
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention
// ---------------------------------------------------------------------------

/// mask(m, n) == 0 removes key n from query m. Every row needs at least one
/// visible key.
inline void apply_mask(Tensor& logits, const Tensor* mask) {
  if (!mask) return;
  if (!mask->same_shape(logits)) {
    throw DimensionError("attention mask " + mask->shape_str() + " vs logits " + logits.shape_str());
  }
  for (std::size_t m = 0; m < logits.rows(); ++m) {
    bool any = false;
    for (std::size_t n = 0; n < logits.cols(); ++n) {
      if ((*mask)(m, n) == 0.0) {
        logits(m, n) = -std::numeric_limits<double>::infinity();
      } else {
        any = true;
      }
    }
    if (!any) throw ConfigError("attention mask hides every key for query " + std::to_string(m));
  }
}

/// softmax(q k^T / sqrt(d_h)) v.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr) {
  detail::require_matrix(q, "scaled_dot_attention");
  if (!q.same_shape(k) || k.rows() != v.rows()) {
    throw DimensionError("scaled_dot_attention: q " + q.shape_str() + ", k " + k.shape_str() + ", v " +
                         v.shape_str());
  }
  Tensor logits = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  apply_mask(logits, mask);
  return matmul(softmax_rows(logits), v);
}

// ---------------------------------------------------------------------------
// Relative logits
// ---------------------------------------------------------------------------

/// Per-layer intermediates of the relative logit path.
struct RelativeTerms {
  Tensor r_rows;     // [2T-1 x d], row j holds R for offset j - (T-1)
  Tensor k_content;  // x W_{k,E}               [T x d_m]
  Tensor k_pos;      // R W_{k,R}               [2T-1 x d_m]
  Tensor k_bias;     // key used with u          [T x d_m]
  Tensor k_posbias;  // key used with v          [2T-1 x d_m]
};

inline RelativeTerms relative_terms(const Tensor& x, const AttentionParams& params, const RelativeParams& rel) {
  const std::size_t t = x.rows();
  if (rel.r_table.cols() != x.cols() || rel.w_kE.shape() != params.w_q.shape() ||
      rel.w_kR.shape() != params.w_q.shape() || rel.u.size() != params.d_attn() ||
      rel.v.size() != params.d_attn()) {
    throw DimensionError("relative parameters do not match attention shapes");
  }
  if (t > rel.t_max()) {
    throw PositionRangeError("sequence length " + std::to_string(t) + " exceeds relative table t_max " +
                             std::to_string(rel.t_max()));
  }
  RelativeTerms terms;
  terms.r_rows = slice_rows(rel.r_table, rel.offset_index(-static_cast<std::ptrdiff_t>(t) + 1), 2 * t - 1);
  terms.k_content = matmul(x, rel.w_kE);
  terms.k_pos = matmul(terms.r_rows, rel.w_kR);
  if (rel.variant == RelativeVariant::literal) {
    terms.k_bias = matmul(x, params.w_k);
    terms.k_posbias = matmul(terms.r_rows, params.w_k);
  } else {
    terms.k_bias = terms.k_content;
    terms.k_posbias = terms.k_pos;
  }
  return terms;
}

/// Unscaled four-term logits for one head:
///   q_m . kE_n  +  q_m . kR_{m-n}  +  u . k_n  +  v . kR'_{m-n}
/// with q = x W_q (head slice). The caller divides by sqrt(d_h).
inline Tensor relative_head_logits(const Tensor& q, const RelativeTerms& terms, const RelativeParams& rel,
                                   std::size_t head, std::size_t d_h) {
  const std::size_t t = q.rows();
  const std::size_t c0 = head * d_h;
  std::vector<double> bias_n(t), bias_r(2 * t - 1);
  for (std::size_t n = 0; n < t; ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < d_h; ++c) s += rel.u[c0 + c] * terms.k_bias(n, c0 + c);
    bias_n[n] = s;
  }
  for (std::size_t r = 0; r < 2 * t - 1; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d_h; ++c) s += rel.v[c0 + c] * terms.k_posbias(r, c0 + c);
    bias_r[r] = s;
  }
  Tensor logits({t, t});
  for (std::size_t m = 0; m < t; ++m) {
    const double* qm = &q(m, c0);
    for (std::size_t n = 0; n < t; ++n) {
      const std::size_t r = m + t - 1 - n;
      const double* ke = &terms.k_content(n, c0);
      const double* kr = &terms.k_pos(r, c0);
      double content = 0.0, position = 0.0;
      for (std::size_t c = 0; c < d_h; ++c) {
        content += qm[c] * ke[c];
        position += qm[c] * kr[c];
      }
      logits(m, n) = content + position + bias_n[n] + bias_r[r];
    }
  }
  return logits;
}

/// Relative logits [T x T] of one head (head 0 spans all of d_m when heads == 1),
/// before the 1/sqrt(d_h) scaling.
inline Tensor relative_logits(const Tensor& x, const AttentionParams& params, const RelativeParams& rel,
                              std::size_t head = 0) {
  params.validate();
  if (x.cols() != params.d_model()) {
    throw DimensionError("relative_logits: input " + x.shape_str() + " vs model width " +
                         std::to_string(params.d_model()));
  }
  if (head >= params.heads) throw ConfigError("relative_logits: head index out of range");
  const RelativeTerms terms = relative_terms(x, params, rel);
  return relative_head_logits(matmul(x, params.w_q), terms, rel, head, params.head_dim());
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

/// Forward intermediates needed by mhsa_backward.
struct MhsaTape {
  bool recorded = false;
  std::size_t position_offset = 0;
  Tensor x_in;                  // input after absolute PE
  Tensor q, k, v;               // projections [T x d_m]
  Tensor q_rot, k_rot;          // rotary mode only
  RelativeTerms rel;            // relative mode only
  std::vector<Tensor> logits;   // per head, scaled, before mask and softmax
  std::vector<Tensor> weights;  // per head, after softmax
  Tensor context;               // [T x d_m]
};

namespace detail {

inline void check_mhsa_inputs(const Tensor& x, const AttentionParams& params, const PEMode& pe,
                              std::size_t offset) {
  params.validate();
  detail::require_matrix(x, "mhsa");
  if (x.cols() != params.d_model()) {
    throw DimensionError("mhsa: input " + x.shape_str() + " vs model width " + std::to_string(params.d_model()));
  }
  if (pe.kind == PEKind::rotary) {
    if (params.head_dim() % 2 != 0) {
      throw ConfigError("rotary mode needs an even head dimension, got " + std::to_string(params.head_dim()));
    }
    if (pe.rotary.dim() != params.head_dim()) {
      throw ConfigError("rotary cache dimension " + std::to_string(pe.rotary.dim()) + " != head dimension " +
                        std::to_string(params.head_dim()));
    }
  }
  const std::size_t span = pe.kind == PEKind::relative ? x.rows() : offset + x.rows();
  if (pe.kind != PEKind::none && span > pe.t_max()) {
    throw PositionRangeError("sequence of length " + std::to_string(x.rows()) + " at offset " +
                             std::to_string(offset) + " exceeds " + to_string(pe.kind) + " table length " +
                             std::to_string(pe.t_max()));
  }
}

}  // namespace detail

/// Scaled pre-softmax logits for every head, [h x T x T]. Positions are
/// position_offset .. position_offset + T - 1.
inline Tensor attention_logits(const Tensor& x, const AttentionParams& params, const PEMode& pe,
                               std::size_t position_offset = 0, MhsaTape* tape = nullptr) {
  detail::check_mhsa_inputs(x, params, pe, position_offset);
  const std::size_t t = x.rows();
  const std::size_t h = params.heads;
  const std::size_t d_h = params.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_h));

  MhsaTape local;
  MhsaTape& tp = tape ? *tape : local;
  tp = MhsaTape{};
  tp.position_offset = position_offset;

  switch (pe.kind) {
    case PEKind::sinusoidal: tp.x_in = add(x, pe.sinusoidal.rows(position_offset, t)); break;
    case PEKind::learned: tp.x_in = add(x, pe.learned.rows(position_offset, t)); break;
    default: tp.x_in = x; break;
  }
  tp.q = matmul(tp.x_in, params.w_q);
  if (pe.kind != PEKind::relative) tp.k = matmul(tp.x_in, params.w_k);
  if (tape) tp.v = matmul(tp.x_in, params.w_v);

  Tensor all({h, t, t});
  if (pe.kind == PEKind::relative) {
    tp.rel = relative_terms(tp.x_in, params, pe.relative);
    for (std::size_t hh = 0; hh < h; ++hh) {
      Tensor l = relative_head_logits(tp.q, tp.rel, pe.relative, hh, d_h);
      std::copy(l.data().begin(), l.data().end(), all.data().begin() + static_cast<std::ptrdiff_t>(hh * t * t));
    }
    for (double& v : all.data()) v *= inv_scale;
  } else {
    const Tensor* qs = &tp.q;
    const Tensor* ks = &tp.k;
    if (pe.kind == PEKind::rotary) {
      tp.q_rot = Tensor(tp.q.shape());
      tp.k_rot = Tensor(tp.k.shape());
      for (std::size_t hh = 0; hh < h; ++hh) {
        set_cols(tp.q_rot, hh * d_h, rope_rotate_rows(slice_cols(tp.q, hh * d_h, d_h), position_offset, pe.rotary));
        set_cols(tp.k_rot, hh * d_h, rope_rotate_rows(slice_cols(tp.k, hh * d_h, d_h), position_offset, pe.rotary));
      }
      qs = &tp.q_rot;
      ks = &tp.k_rot;
    }
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t m = 0; m < t; ++m) {
        const double* qm = &(*qs)(m, hh * d_h);
        for (std::size_t n = 0; n < t; ++n) {
          const double* kn = &(*ks)(n, hh * d_h);
          double s = 0.0;
          for (std::size_t c = 0; c < d_h; ++c) s += qm[c] * kn[c];
          all(hh, m, n) = s * inv_scale;
        }
      }
    }
  }
  return all;
}

namespace detail {

inline Tensor head_slice(const Tensor& stacked, std::size_t head) {
  const std::size_t t = stacked.dim(1);
  auto first = stacked.data().begin() + static_cast<std::ptrdiff_t>(head * t * stacked.dim(2));
  return Tensor({t, stacked.dim(2)}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(t * stacked.dim(2))));
}

}  // namespace detail

/// Multi-head self-attention, [T x d] -> [T x d].
///   absolute modes: p_m added to x before the q/k/v projections
///   rotary:         each head's q and k rotated to their positions
///   relative:       logits from the four-term relative form
inline Tensor mhsa_forward(const Tensor& x, const AttentionParams& params, const PEMode& pe,
                           std::size_t position_offset = 0, const Tensor* mask = nullptr, MhsaTape* tape = nullptr) {
  MhsaTape local;
  MhsaTape& tp = tape ? *tape : local;
  const Tensor logits = attention_logits(x, params, pe, position_offset, &tp);
  const std::size_t t = x.rows();
  const std::size_t d_h = params.head_dim();
  if (tp.v.empty()) tp.v = matmul(tp.x_in, params.w_v);
  tp.context = Tensor({t, params.d_attn()});
  tp.logits.clear();
  tp.weights.clear();
  for (std::size_t hh = 0; hh < params.heads; ++hh) {
    Tensor l = detail::head_slice(logits, hh);
    tp.logits.push_back(l);
    apply_mask(l, mask);
    Tensor w = softmax_rows(l);
    set_cols(tp.context, hh * d_h, matmul(w, slice_cols(tp.v, hh * d_h, d_h)));
    tp.weights.push_back(std::move(w));
  }
  tp.recorded = true;
  return matmul(tp.context, params.w_o);
}

/// Post-softmax weights per head, [h x T x T].
inline Tensor attention_weights(const Tensor& x, const AttentionParams& params, const PEMode& pe,
                                std::size_t position_offset = 0, const Tensor* mask = nullptr) {
  const Tensor logits = attention_logits(x, params, pe, position_offset);
  const std::size_t t = x.rows();
  Tensor out({params.heads, t, t});
  for (std::size_t hh = 0; hh < params.heads; ++hh) {
    Tensor l = detail::head_slice(logits, hh);
    apply_mask(l, mask);
    const Tensor w = softmax_rows(l);
    std::copy(w.data().begin(), w.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(hh * t * t));
  }
  return out;
}

}  // namespace ropeformer
