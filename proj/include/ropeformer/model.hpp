#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ropeformer/conformer.hpp"
#include "ropeformer/grad.hpp"
#include "ropeformer/params.hpp"
#include "ropeformer/tasks.hpp"

namespace ropeformer {

// Sequence classifier used by the synthetic experiments: token embedding,
// a stack of encoder blocks, pooling over time, and a linear head. The
// subsampling frontend is not used here; it would merge neighbouring
// positions before attention sees them.

enum class Pooling { mean, max };

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling '" + s + "'");
}

inline std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }

struct ClassifierParams {
  Tensor embedding;  // [tokens x d]
  std::vector<EncoderBlockParams> blocks;
  Tensor head_w;  // [d x classes]
  Tensor head_b;  // [classes]
};

template <class Self, class F>
  requires same_base<Self, ClassifierParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  f(prefix + "embedding", p.embedding);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    visit_params(p.blocks[b], prefix + "block" + std::to_string(b) + ".", f);
  }
  f(prefix + "head_w", p.head_w);
  f(prefix + "head_b", p.head_b);
}

inline ClassifierParams make_classifier_params(const EncoderConfig& cfg, std::size_t tokens, std::size_t classes,
                                               Rng& rng) {
  cfg.validate();
  ClassifierParams p;
  p.embedding = randn({tokens, cfg.d_model}, rng, cfg.init_std);
  for (std::size_t b = 0; b < cfg.blocks; ++b) p.blocks.push_back(make_block_params(cfg, rng));
  p.head_w = randn({cfg.d_model, classes}, rng, cfg.init_std);
  p.head_b = Tensor({classes});
  return p;
}

struct ClassifierTape {
  bool recorded = false;
  std::vector<std::size_t> tokens;
  std::vector<BlockTape> blocks;
  Tensor top;                       // last block output [T x d]
  Tensor pooled;                    // [d]
  std::vector<std::size_t> argmax;  // max pooling winners per channel
};

/// Class logits [classes] for one token sequence.
inline Tensor classifier_forward(const std::vector<std::size_t>& tokens, const ClassifierParams& p, Pooling pooling,
                                 const ForwardOptions& opt = {}, ClassifierTape* tape = nullptr) {
  if (tokens.empty()) throw ConfigError("classifier: empty sequence");
  const std::size_t d = p.embedding.cols();
  Tensor x({tokens.size(), d});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= p.embedding.rows()) throw ConfigError("classifier: token id out of range");
    auto src = p.embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  ClassifierTape local;
  ClassifierTape& tp = tape ? *tape : local;
  tp.tokens = tokens;
  tp.blocks.assign(p.blocks.size(), BlockTape{});
  for (std::size_t b = 0; b < p.blocks.size(); ++b) x = encoder_block(x, p.blocks[b], opt, tape ? &tp.blocks[b] : nullptr);
  tp.top = x;
  tp.pooled = Tensor({d});
  if (pooling == Pooling::mean) {
    tp.pooled = scale(col_sum(x), 1.0 / static_cast<double>(x.rows()));
  } else {
    tp.argmax.assign(d, 0);
    for (std::size_t c = 0; c < d; ++c) {
      double best = x(0, c);
      for (std::size_t t = 1; t < x.rows(); ++t) {
        if (x(t, c) > best) {
          best = x(t, c);
          tp.argmax[c] = t;
        }
      }
      tp.pooled[c] = best;
    }
  }
  tp.recorded = true;
  Tensor logits = matmul(tp.pooled.reshaped({1, d}), p.head_w).reshaped({p.head_w.cols()});
  return add(logits, p.head_b);
}

/// Backward of classifier_forward given dL/dlogits.
inline void classifier_backward(const Tensor& dlogits, const ClassifierParams& p, Pooling pooling,
                                const ClassifierTape& tp, ClassifierParams& g) {
  detail::require_recorded(tp.recorded && tp.blocks.size() == p.blocks.size() &&
                               (p.blocks.empty() || tp.blocks.front().recorded),
                           "classifier_backward");
  const std::size_t d = p.embedding.cols();
  const std::size_t t_len = tp.top.rows();
  axpy(g.head_b, dlogits);
  axpy(g.head_w, matmul_tn(tp.pooled.reshaped({1, d}), dlogits.reshaped({1, dlogits.size()})));
  const Tensor dpooled = matmul_nt(dlogits.reshaped({1, dlogits.size()}), p.head_w);
  Tensor dx({t_len, d});
  for (std::size_t c = 0; c < d; ++c) {
    if (pooling == Pooling::mean) {
      for (std::size_t t = 0; t < t_len; ++t) dx(t, c) = dpooled[c] / static_cast<double>(t_len);
    } else {
      dx(tp.argmax[c], c) = dpooled[c];
    }
  }
  for (std::size_t b = p.blocks.size(); b-- > 0;) dx = block_backward(dx, p.blocks[b], tp.blocks[b], g.blocks[b]);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto dst = g.embedding.row(tp.tokens[t]);
    auto src = dx.row(t);
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
}

/// Cross-entropy of one example; accumulates its gradient (times `weight`)
/// into g when given.
inline double classifier_loss(const Example& ex, const ClassifierParams& p, Pooling pooling,
                              const ForwardOptions& opt = {}, ClassifierParams* g = nullptr, double weight = 1.0) {
  ClassifierTape tape;
  const Tensor logits = classifier_forward(ex.tokens, p, pooling, opt, g ? &tape : nullptr);
  Tensor dlogits;
  const double loss = softmax_cross_entropy(logits, ex.label, g ? &dlogits : nullptr);
  if (g) classifier_backward(scale(dlogits, weight), p, pooling, tape, *g);
  return loss;
}

inline std::size_t predict(const std::vector<std::size_t>& tokens, const ClassifierParams& p, Pooling pooling) {
  const Tensor logits = classifier_forward(tokens, p, pooling);
  return static_cast<std::size_t>(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
}

inline double accuracy(const Dataset& data, const ClassifierParams& p, Pooling pooling) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) hits += predict(ex.tokens, p, pooling) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace ropeformer
