#pragma once

#include <concepts>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ropeformer/conformer.hpp"

namespace ropeformer {

// Every parameter struct exposes its trainable tensors through
// visit_params(p, prefix, f), which calls f(name, tensor) in a fixed order.
// Gradients and optimizer moments reuse the parameter struct type, so two
// structs of the same type can be walked in lockstep.

template <class T, class U>
concept same_base = std::same_as<std::remove_const_t<T>, U>;

/// Ordered named tensors with unique names.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor value) {
    for (const auto& e : entries_) {
      if (e.first == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    entries_.emplace_back(std::move(name), std::move(value));
  }

  Tensor& at(const std::string& name) {
    for (auto& e : entries_)
      if (e.first == name) return e.second;
    throw ConfigError("unknown parameter '" + name + "'");
  }
  const Tensor& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

  std::size_t size() const { return entries_.size(); }
  auto& entries() { return entries_; }
  const auto& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

template <class Self, class F>
  requires same_base<Self, ParamSet>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  for (auto& [name, t] : p.entries()) f(prefix + name, t);
}

template <class Self, class F>
  requires same_base<Self, AttentionParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  f(prefix + "w_q", p.w_q);
  f(prefix + "w_k", p.w_k);
  f(prefix + "w_v", p.w_v);
  f(prefix + "w_o", p.w_o);
}

template <class Self, class F>
  requires same_base<Self, PEMode>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  if (p.kind == PEKind::learned) f(prefix + "learned_table", p.learned.table);
  if (p.kind == PEKind::relative) {
    f(prefix + "r_table", p.relative.r_table);
    f(prefix + "u", p.relative.u);
    f(prefix + "v", p.relative.v);
    f(prefix + "w_kE", p.relative.w_kE);
    f(prefix + "w_kR", p.relative.w_kR);
  }
}

template <class Self, class F>
  requires same_base<Self, FfnParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  f(prefix + "ln_gamma", p.ln_gamma);
  f(prefix + "ln_beta", p.ln_beta);
  f(prefix + "w1", p.w1);
  f(prefix + "b1", p.b1);
  f(prefix + "w2", p.w2);
  f(prefix + "b2", p.b2);
}

template <class Self, class F>
  requires same_base<Self, ConvModuleParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  f(prefix + "ln_gamma", p.ln_gamma);
  f(prefix + "ln_beta", p.ln_beta);
  f(prefix + "pw1_w", p.pw1_w);
  f(prefix + "pw1_b", p.pw1_b);
  f(prefix + "dw_w", p.dw_w);
  f(prefix + "dw_b", p.dw_b);
  f(prefix + "norm_gamma", p.norm_gamma);
  f(prefix + "norm_beta", p.norm_beta);
  f(prefix + "pw2_w", p.pw2_w);
  f(prefix + "pw2_b", p.pw2_b);
}

template <class Self, class F>
  requires same_base<Self, EncoderBlockParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  visit_params(p.ffn1, prefix + "ffn1.", f);
  f(prefix + "mhsa.ln_gamma", p.mhsa_ln_gamma);
  f(prefix + "mhsa.ln_beta", p.mhsa_ln_beta);
  visit_params(p.mhsa, prefix + "mhsa.", f);
  visit_params(p.pe, prefix + "mhsa.pe.", f);
  visit_params(p.conv, prefix + "conv.", f);
  visit_params(p.ffn2, prefix + "ffn2.", f);
  f(prefix + "final_gamma", p.final_gamma);
  f(prefix + "final_beta", p.final_beta);
}

template <class Self, class F>
  requires same_base<Self, FrontendParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  f(prefix + "conv1_w", p.conv1_w);
  f(prefix + "conv1_b", p.conv1_b);
  f(prefix + "conv2_w", p.conv2_w);
  f(prefix + "conv2_b", p.conv2_b);
  f(prefix + "proj_w", p.proj_w);
  f(prefix + "proj_b", p.proj_b);
}

template <class Self, class F>
  requires same_base<Self, EncoderParams>
void visit_params(Self& p, const std::string& prefix, F&& f) {
  visit_params(p.frontend, prefix + "frontend.", f);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    visit_params(p.blocks[b], prefix + "block" + std::to_string(b) + ".", f);
  }
}

template <class P>
concept Parameterized = requires(P& p) { visit_params(p, std::string{}, [](const std::string&, Tensor&) {}); };

template <class P>
struct NamedTensor {
  std::string name;
  std::conditional_t<std::is_const_v<P>, const Tensor*, Tensor*> tensor;
};

/// Flat, ordered list of (name, tensor pointer) for a parameter struct.
template <class P>
auto named_tensors(P& p) {
  std::vector<NamedTensor<P>> out;
  visit_params(p, "", [&](const std::string& name, auto& t) { out.push_back({name, &t}); });
  return out;
}

/// Same structure as p with every trainable tensor zeroed.
template <class P>
P zeros_like_params(const P& p) {
  P g = p;
  visit_params(g, "", [](const std::string&, Tensor& t) { t = zeros_like(t); });
  return g;
}

template <class P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  visit_params(p, "", [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

template <class P>
ParamSet to_param_set(const P& p) {
  ParamSet s;
  visit_params(p, "", [&](const std::string& name, const Tensor& t) { s.add(name, t); });
  return s;
}

/// Copies tensors from `s` into `p` by name; shapes must match.
template <class P>
void assign_from(P& p, const ParamSet& s) {
  visit_params(p, "", [&](const std::string& name, Tensor& t) {
    const Tensor& src = s.at(name);
    if (!src.same_shape(t)) {
      throw DimensionError("parameter '" + name + "': stored " + src.shape_str() + " vs model " + t.shape_str());
    }
    t = src;
  });
}

/// a += s * b over every trainable tensor.
template <class P>
void axpy_params(P& a, const P& b, double s = 1.0) {
  auto ta = named_tensors(a);
  auto tb = named_tensors(b);
  if (ta.size() != tb.size()) throw DimensionError("axpy_params: parameter structures differ");
  for (std::size_t i = 0; i < ta.size(); ++i) axpy(*ta[i].tensor, *tb[i].tensor, s);
}

}  // namespace ropeformer
