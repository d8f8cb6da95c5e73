#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ropeformer/attention.hpp"
#include "ropeformer/tensor.hpp"

namespace ropeformer {

/// Normalization after the depthwise convolution. `layer` normalizes each
/// frame over channels; `batch` normalizes each channel over time and keeps
/// running statistics for evaluation.
enum class ConvNorm { layer, batch };

inline constexpr double kNormEps = 1e-5;

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t conv_kernel = 7;
  std::size_t blocks = 2;
  std::size_t subsample_channels = 32;
  PEKind pe_mode = PEKind::rotary;
  double dropout = 0.0;
  ConvNorm conv_norm = ConvNorm::layer;
  RelativeVariant relative_variant = RelativeVariant::literal;
  double position_base = kDefaultPositionBase;
  std::size_t t_max = 512;
  double init_std = kInitStd;

  /// Sizes used in the original large-scale recipe.
  static EncoderConfig full_scale() {
    EncoderConfig c;
    c.d_model = 256;
    c.heads = 4;
    c.ffn_hidden = 2048;
    c.blocks = 12;
    c.subsample_channels = 256;
    c.conv_kernel = 15;
    return c;
  }

  std::size_t head_dim() const { return heads == 0 ? 0 : d_model / heads; }

  void validate() const {
    if (d_model == 0 || heads == 0 || ffn_hidden == 0) throw ConfigError("encoder: sizes must be positive");
    if (d_model % heads != 0) {
      throw ConfigError("encoder: d_model " + std::to_string(d_model) + " not divisible by heads " +
                        std::to_string(heads));
    }
    if (conv_kernel % 2 == 0) {
      throw ConfigError("encoder: conv_kernel must be odd, got " + std::to_string(conv_kernel));
    }
    if (pe_mode == PEKind::rotary && head_dim() % 2 != 0) {
      throw ConfigError("encoder: rotary mode needs an even head dimension, got " + std::to_string(head_dim()));
    }
    if (pe_mode == PEKind::sinusoidal && d_model % 2 != 0) {
      throw ConfigError("encoder: sinusoidal table needs an even d_model");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
    if (t_max == 0) throw ConfigError("encoder: t_max must be positive");
  }

  PEOptions pe_options() const { return {t_max, relative_variant, position_base, init_std}; }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct FfnParams {
  Tensor ln_gamma, ln_beta;  // [d]
  Tensor w1;                 // [d x ffn_hidden]
  Tensor b1;                 // [ffn_hidden]
  Tensor w2;                 // [ffn_hidden x d]
  Tensor b2;                 // [d]
};

struct ConvModuleParams {
  Tensor ln_gamma, ln_beta;      // [d]
  Tensor pw1_w;                  // [d x 2d]
  Tensor pw1_b;                  // [2d]
  Tensor dw_w;                   // [kernel x d]
  Tensor dw_b;                   // [d]
  Tensor norm_gamma, norm_beta;  // [d]
  Tensor pw2_w;                  // [d x d]
  Tensor pw2_b;                  // [d]
  ConvNorm norm = ConvNorm::layer;
  Tensor running_mean, running_var;  // batch norm only; not trainable

  std::size_t kernel() const { return dw_w.rows(); }
};

struct EncoderBlockParams {
  FfnParams ffn1;
  Tensor mhsa_ln_gamma, mhsa_ln_beta;
  AttentionParams mhsa;
  PEMode pe;
  ConvModuleParams conv;
  FfnParams ffn2;
  Tensor final_gamma, final_beta;
};

/// Two 3x3 stride-2 convolutions with ReLU, then a linear map to d_model.
struct FrontendParams {
  Tensor conv1_w;  // [C x 1 x 3 x 3]
  Tensor conv1_b;  // [C]
  Tensor conv2_w;  // [C x C x 3 x 3]
  Tensor conv2_b;  // [C]
  Tensor proj_w;   // [C * F'' x d_model]
  Tensor proj_b;   // [d_model]
};

struct EncoderParams {
  FrontendParams frontend;
  std::vector<EncoderBlockParams> blocks;
};

inline FfnParams make_ffn_params(std::size_t d, std::size_t hidden, Rng& rng, double stddev = kInitStd) {
  return {Tensor({d}, 1.0), Tensor({d}), randn({d, hidden}, rng, stddev), Tensor({hidden}),
          randn({hidden, d}, rng, stddev), Tensor({d})};
}

inline ConvModuleParams make_conv_params(std::size_t d, std::size_t kernel, Rng& rng, ConvNorm norm = ConvNorm::layer,
                                         double stddev = kInitStd) {
  if (kernel % 2 == 0) throw ConfigError("conv module: kernel must be odd, got " + std::to_string(kernel));
  ConvModuleParams p;
  p.ln_gamma = Tensor({d}, 1.0);
  p.ln_beta = Tensor({d});
  p.pw1_w = randn({d, 2 * d}, rng, stddev);
  p.pw1_b = Tensor({2 * d});
  p.dw_w = randn({kernel, d}, rng, stddev);
  p.dw_b = Tensor({d});
  p.norm_gamma = Tensor({d}, 1.0);
  p.norm_beta = Tensor({d});
  p.pw2_w = randn({d, d}, rng, stddev);
  p.pw2_b = Tensor({d});
  p.norm = norm;
  if (norm == ConvNorm::batch) {
    p.running_mean = Tensor({d});
    p.running_var = Tensor({d}, 1.0);
  }
  return p;
}

inline EncoderBlockParams make_block_params(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  EncoderBlockParams p;
  p.ffn1 = make_ffn_params(d, cfg.ffn_hidden, rng, cfg.init_std);
  p.mhsa_ln_gamma = Tensor({d}, 1.0);
  p.mhsa_ln_beta = Tensor({d});
  p.mhsa = make_attention_params(d, d, cfg.heads, rng, cfg.init_std);
  p.pe = make_pe_mode(cfg.pe_mode, d, d, cfg.head_dim(), rng, cfg.pe_options());
  p.conv = make_conv_params(d, cfg.conv_kernel, rng, cfg.conv_norm, cfg.init_std);
  p.ffn2 = make_ffn_params(d, cfg.ffn_hidden, rng, cfg.init_std);
  p.final_gamma = Tensor({d}, 1.0);
  p.final_beta = Tensor({d});
  return p;
}

/// Output length of a pad-1, kernel-3, stride-2 convolution: ceil(n / 2).
inline std::size_t subsampled_length(std::size_t n) { return (n + 1) / 2; }

inline FrontendParams make_frontend_params(std::size_t features, std::size_t channels, std::size_t d_model, Rng& rng,
                                           double stddev = kInitStd) {
  const std::size_t f2 = subsampled_length(subsampled_length(features));
  return {randn({channels, 1, 3, 3}, rng, stddev), Tensor({channels}), randn({channels, channels, 3, 3}, rng, stddev),
          Tensor({channels}), randn({channels * f2, d_model}, rng, stddev), Tensor({d_model})};
}

inline EncoderParams make_encoder_params(const EncoderConfig& cfg, std::size_t features, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.frontend = make_frontend_params(features, cfg.subsample_channels, cfg.d_model, rng, cfg.init_std);
  for (std::size_t b = 0; b < cfg.blocks; ++b) p.blocks.push_back(make_block_params(cfg, rng));
  return p;
}

// ---------------------------------------------------------------------------
// Forward options and tapes
// ---------------------------------------------------------------------------

struct ForwardOptions {
  std::size_t position_offset = 0;
  bool training = false;  // enables dropout and batch-norm batch statistics
  double dropout = 0.0;
  Rng* rng = nullptr;     // dropout masks; required when training with dropout > 0
  const Tensor* mask = nullptr;
};

namespace detail {

/// Inverted dropout on a sub-module output. Returns the keep mask scaled by
/// 1/(1-p), or a null tensor when dropout is inactive.
inline Tensor dropout_mask(const Tensor& like, const ForwardOptions& opt) {
  if (!opt.training || opt.dropout <= 0.0) return {};
  if (!opt.rng) throw ConfigError("dropout requires an rng");
  Tensor m(like.shape());
  const double keep = 1.0 - opt.dropout;
  for (double& v : m.data()) v = opt.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

inline Tensor apply_dropout(const Tensor& y, const Tensor& mask) { return mask.empty() ? y : mul(y, mask); }

}  // namespace detail

struct FfnTape {
  bool recorded = false;
  Tensor x;
  NormStats ln;
  Tensor z;  // layer_norm(x)
  Tensor h;  // z W1 + b1
  Tensor a;  // swish(h)
  Tensor drop;
};

enum class NormPath { layer, batch_stats, running_stats };

struct ConvTape {
  bool recorded = false;
  Tensor x;
  NormPath norm_path = NormPath::layer;
  NormStats ln;
  Tensor z;       // layer_norm(x)
  Tensor p;       // pointwise-1 output [T x 2d]
  Tensor g;       // glu(p)
  Tensor h;       // depthwise output
  NormStats norm; // layer: per frame; batch: per channel (over time)
  Tensor n;       // normalized h (after affine)
  Tensor s;       // swish(n)
  Tensor drop;
};

struct BlockTape {
  bool recorded = false;
  FfnTape ffn1;
  Tensor x1;  // after ffn1
  NormStats mhsa_ln;
  Tensor mhsa_z;
  MhsaTape mhsa;
  Tensor mhsa_drop;
  Tensor x2;  // after mhsa
  ConvTape conv;
  Tensor x3;  // after conv
  FfnTape ffn2;
  Tensor x4;  // after ffn2, input of the final norm
  NormStats final_ln;
};

struct FrontendTape {
  bool recorded = false;
  Tensor input;  // [1 x T x F]
  Tensor a1, h1; // conv1 pre/post ReLU [C x T1 x F1]
  Tensor a2, h2; // conv2 pre/post ReLU [C x T2 x F2]
  Tensor flat;   // [T2 x C*F2]
};

struct EncoderTape {
  FrontendTape frontend;
  std::vector<BlockTape> blocks;
};

// ---------------------------------------------------------------------------
// Sub-modules
// ---------------------------------------------------------------------------

/// x + 1/2 * W2 swish(W1 layer_norm(x) + b1) + b2.
inline Tensor ffn_module(const Tensor& x, const FfnParams& p, const ForwardOptions& opt = {}, FfnTape* tape = nullptr) {
  if (x.cols() != p.w1.rows() || p.w2.cols() != x.cols()) {
    throw DimensionError("ffn: input " + x.shape_str() + " vs weights " + p.w1.shape_str() + "/" + p.w2.shape_str());
  }
  FfnTape local;
  FfnTape& tp = tape ? *tape : local;
  if (tape) tp.x = x;
  tp.z = layer_norm(x, p.ln_gamma, p.ln_beta, kNormEps, &tp.ln);
  tp.h = add_row_vector(matmul(tp.z, p.w1), p.b1);
  tp.a = swish(tp.h);
  Tensor o = add_row_vector(matmul(tp.a, p.w2), p.b2);
  tp.drop = detail::dropout_mask(o, opt);
  tp.recorded = true;
  Tensor y = x;
  axpy(y, detail::apply_dropout(o, tp.drop), 0.5);
  return y;
}

/// Same-padded depthwise convolution over time: y[t,c] = b[c] + sum_j w[j,c] x[t+j-K/2, c].
inline Tensor depthwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_matrix(x, "depthwise_conv");
  const std::size_t k = w.rows();
  if (k % 2 == 0) throw ConfigError("depthwise_conv: kernel must be odd, got " + std::to_string(k));
  if (w.cols() != x.cols() || b.size() != x.cols()) {
    throw DimensionError("depthwise_conv: weights " + w.shape_str() + " vs input " + x.shape_str());
  }
  const auto t_len = static_cast<std::ptrdiff_t>(x.rows());
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y = add_row_vector(Tensor(x.shape()), b);
  for (std::ptrdiff_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= t_len) continue;
      auto in = x.row(static_cast<std::size_t>(src));
      auto wr = w.row(j);
      auto out = y.row(static_cast<std::size_t>(t));
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += wr[c] * in[c];
    }
  }
  return y;
}

namespace detail {

/// Normalizes each column of h over time; stats hold per-channel mean/rstd.
inline Tensor column_norm(const Tensor& h, const Tensor& gamma, const Tensor& beta, NormStats* stats) {
  const Tensor ht = transpose(h);
  const Tensor ones({ht.cols()}, 1.0), zeros({ht.cols()});
  Tensor n = transpose(layer_norm(ht, ones, zeros, kNormEps, stats));
  for (std::size_t t = 0; t < n.rows(); ++t)
    for (std::size_t c = 0; c < n.cols(); ++c) n(t, c) = n(t, c) * gamma[c] + beta[c];
  return n;
}

inline Tensor running_norm(const Tensor& h, const ConvModuleParams& p) {
  Tensor n(h.shape());
  for (std::size_t t = 0; t < h.rows(); ++t)
    for (std::size_t c = 0; c < h.cols(); ++c)
      n(t, c) = (h(t, c) - p.running_mean[c]) / std::sqrt(p.running_var[c] + kNormEps) * p.norm_gamma[c] +
                p.norm_beta[c];
  return n;
}

}  // namespace detail

/// x + PW2(swish(norm(DW(GLU(PW1(layer_norm(x))))))). Sequence length is preserved.
inline Tensor conv_module(const Tensor& x, const ConvModuleParams& p, const ForwardOptions& opt = {},
                          ConvTape* tape = nullptr) {
  if (p.kernel() % 2 == 0) throw ConfigError("conv module: kernel must be odd, got " + std::to_string(p.kernel()));
  if (x.cols() != p.pw1_w.rows() || p.pw1_w.cols() != 2 * x.cols()) {
    throw DimensionError("conv module: input " + x.shape_str() + " vs pointwise weights " + p.pw1_w.shape_str());
  }
  ConvTape local;
  ConvTape& tp = tape ? *tape : local;
  if (tape) tp.x = x;
  tp.z = layer_norm(x, p.ln_gamma, p.ln_beta, kNormEps, &tp.ln);
  tp.p = add_row_vector(matmul(tp.z, p.pw1_w), p.pw1_b);
  tp.g = glu(tp.p);
  tp.h = depthwise_conv(tp.g, p.dw_w, p.dw_b);
  if (p.norm == ConvNorm::layer) {
    tp.norm_path = NormPath::layer;
    tp.n = layer_norm(tp.h, p.norm_gamma, p.norm_beta, kNormEps, &tp.norm);
  } else if (opt.training) {
    tp.norm_path = NormPath::batch_stats;
    tp.n = detail::column_norm(tp.h, p.norm_gamma, p.norm_beta, &tp.norm);
  } else {
    tp.norm_path = NormPath::running_stats;
    tp.n = detail::running_norm(tp.h, p);
  }
  tp.s = swish(tp.n);
  Tensor o = add_row_vector(matmul(tp.s, p.pw2_w), p.pw2_b);
  tp.drop = detail::dropout_mask(o, opt);
  tp.recorded = true;
  return add(x, detail::apply_dropout(o, tp.drop));
}

/// Folds the batch statistics of one training forward into the running
/// estimates (exponential average with the given momentum).
inline void update_running_stats(ConvModuleParams& p, const ConvTape& tape, double momentum = 0.1) {
  if (p.norm != ConvNorm::batch) return;
  if (!tape.recorded || tape.norm_path != NormPath::batch_stats || tape.norm.mean.size() != p.running_mean.size()) {
    throw InternalError("update_running_stats: no batch statistics recorded");
  }
  for (std::size_t c = 0; c < p.running_mean.size(); ++c) {
    const double var = 1.0 / (tape.norm.rstd[c] * tape.norm.rstd[c]) - kNormEps;
    p.running_mean[c] = (1.0 - momentum) * p.running_mean[c] + momentum * tape.norm.mean[c];
    p.running_var[c] = (1.0 - momentum) * p.running_var[c] + momentum * var;
  }
}

/// ffn1 -> MHSA -> conv -> ffn2 -> layer_norm, each sub-module residual.
inline Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, const ForwardOptions& opt = {},
                            BlockTape* tape = nullptr) {
  BlockTape local;
  BlockTape& tp = tape ? *tape : local;
  tp.x1 = ffn_module(x, p.ffn1, opt, &tp.ffn1);
  tp.mhsa_z = layer_norm(tp.x1, p.mhsa_ln_gamma, p.mhsa_ln_beta, kNormEps, &tp.mhsa_ln);
  Tensor att = mhsa_forward(tp.mhsa_z, p.mhsa, p.pe, opt.position_offset, opt.mask, &tp.mhsa);
  tp.mhsa_drop = detail::dropout_mask(att, opt);
  tp.x2 = add(tp.x1, detail::apply_dropout(att, tp.mhsa_drop));
  tp.x3 = conv_module(tp.x2, p.conv, opt, &tp.conv);
  tp.x4 = ffn_module(tp.x3, p.ffn2, opt, &tp.ffn2);
  tp.recorded = true;
  return layer_norm(tp.x4, p.final_gamma, p.final_beta, kNormEps, &tp.final_ln);
}

// ---------------------------------------------------------------------------
// Frontend
// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 2, one zero row/column of padding on each side.
/// in [C_in x H x W], w [C_out x C_in x 3 x 3] -> [C_out x ceil(H/2) x ceil(W/2)].
inline Tensor conv2d_stride2(const Tensor& in, const Tensor& w, const Tensor& b) {
  if (in.rank() != 3 || w.rank() != 4 || w.dim(1) != in.dim(0) || w.dim(2) != 3 || w.dim(3) != 3 ||
      b.size() != w.dim(0)) {
    throw DimensionError("conv2d: input " + in.shape_str() + " vs weights " + w.shape_str());
  }
  const std::size_t cin = in.dim(0), hin = in.dim(1), win = in.dim(2), cout = w.dim(0);
  const std::size_t ho = subsampled_length(hin), wo = subsampled_length(win);
  Tensor out({cout, ho, wo});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double s = b[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t di = 0; di < 3; ++di) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(2 * i + di) - 1;
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(hin)) continue;
            for (std::size_t dj = 0; dj < 3; ++dj) {
              const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(2 * j + dj) - 1;
              if (c < 0 || c >= static_cast<std::ptrdiff_t>(win)) continue;
              s += w[((co * cin + ci) * 3 + di) * 3 + dj] * in(ci, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            }
          }
        }
        out(co, i, j) = s;
      }
    }
  }
  return out;
}

/// Features [T x F] -> [ceil(ceil(T/2)/2) x d_model].
inline Tensor subsampling_frontend(const Tensor& features, const FrontendParams& p, FrontendTape* tape = nullptr) {
  detail::require_matrix(features, "subsampling_frontend");
  if (features.rows() < 4 || features.cols() < 4) {
    throw InputTooShortError("frontend needs at least 4 frames and 4 features, got " + features.shape_str());
  }
  FrontendTape local;
  FrontendTape& tp = tape ? *tape : local;
  tp.input = features.reshaped({1, features.rows(), features.cols()});
  tp.a1 = conv2d_stride2(tp.input, p.conv1_w, p.conv1_b);
  tp.h1 = relu(tp.a1);
  tp.a2 = conv2d_stride2(tp.h1, p.conv2_w, p.conv2_b);
  tp.h2 = relu(tp.a2);
  const std::size_t c = tp.h2.dim(0), t2 = tp.h2.dim(1), f2 = tp.h2.dim(2);
  if (p.proj_w.rows() != c * f2) {
    throw DimensionError("frontend projection expects " + std::to_string(p.proj_w.rows()) + " inputs, got " +
                         std::to_string(c * f2));
  }
  tp.flat = Tensor({t2, c * f2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < t2; ++t)
      for (std::size_t f = 0; f < f2; ++f) tp.flat(t, ch * f2 + f) = tp.h2(ch, t, f);
  tp.recorded = true;
  return add_row_vector(matmul(tp.flat, p.proj_w), p.proj_b);
}

/// Frontend, then every block in order.
inline Tensor encoder_forward(const Tensor& features, const EncoderConfig& cfg, const EncoderParams& p,
                              const ForwardOptions& opt = {}, EncoderTape* tape = nullptr) {
  cfg.validate();
  if (p.blocks.size() != cfg.blocks) throw ConfigError("encoder: block count differs from config");
  Tensor x = subsampling_frontend(features, p.frontend, tape ? &tape->frontend : nullptr);
  if (tape) tape->blocks.assign(p.blocks.size(), BlockTape{});
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    x = encoder_block(x, p.blocks[b], opt, tape ? &tape->blocks[b] : nullptr);
  }
  return x;
}

}  // namespace ropeformer
