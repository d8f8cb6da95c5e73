#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ropeformer/experiment.hpp"

namespace ropeformer {

// Plain-text configuration: one `key = value` per line, `#` starts a
// comment, blank lines ignored. Unknown keys are errors so typos never pass
// silently. Lists (modes, seeds) are comma separated.

inline std::string to_string(RelativeVariant v) {
  return v == RelativeVariant::literal ? "literal" : "transformer-xl";
}

inline RelativeVariant parse_relative_variant(const std::string& s) {
  if (s == "literal") return RelativeVariant::literal;
  if (s == "transformer-xl" || s == "transformer_xl" || s == "xl") return RelativeVariant::transformer_xl;
  throw ConfigError("unknown relative variant '" + s + "'");
}

inline std::string to_string(ConvNorm n) { return n == ConvNorm::layer ? "layer" : "batch"; }

inline ConvNorm parse_conv_norm(const std::string& s) {
  if (s == "layer") return ConvNorm::layer;
  if (s == "batch") return ConvNorm::batch;
  throw ConfigError("unknown conv norm '" + s + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline std::vector<PEKind> parse_mode_list(const std::string& s) {
  std::vector<PEKind> out;
  for (const auto& item : detail::split_list(s)) out.push_back(parse_pe_kind(item));
  if (out.empty()) throw ConfigError("config: empty mode list");
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : detail::split_list(s)) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto lo = detail::parse_u64("seeds", item.substr(0, dash));
      const auto hi = detail::parse_u64("seeds", item.substr(dash + 1));
      if (hi < lo) throw ConfigError("config: seed range '" + item + "' is reversed");
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(detail::parse_u64("seeds", item));
    }
  }
  if (out.empty()) throw ConfigError("config: empty seed list");
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : detail::split_list(s)) out.push_back(detail::parse_u64(key, item));
  if (out.empty()) throw ConfigError("config: empty list for '" + key + "'");
  return out;
}

/// Sets one key on the config; throws ConfigError for unknown keys or bad
/// values.
inline void apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto u = [&] { return static_cast<std::size_t>(detail::parse_u64(key, value)); };
  auto f = [&] { return detail::parse_double(key, value); };
  if (key == "task") c.task.kind = parse_task_kind(value);
  else if (key == "t_train") c.task.t_train = u();
  else if (key == "t_eval") c.task.t_eval = u();
  else if (key == "vocab") c.task.vocab = u();
  else if (key == "classes") c.task.classes = u();
  else if (key == "min_offset") c.task.min_offset = u();
  else if (key == "max_offset") c.task.max_offset = u();
  else if (key == "shift") c.task.shift = u();
  else if (key == "d_model") c.model.d_model = u();
  else if (key == "heads") c.model.heads = u();
  else if (key == "ffn_hidden") c.model.ffn_hidden = u();
  else if (key == "conv_kernel") c.model.conv_kernel = u();
  else if (key == "blocks") c.model.blocks = u();
  else if (key == "subsample_channels") c.model.subsample_channels = u();
  else if (key == "dropout") c.model.dropout = f();
  else if (key == "conv_norm") c.model.conv_norm = parse_conv_norm(value);
  else if (key == "relative_variant") c.model.relative_variant = parse_relative_variant(value);
  else if (key == "position_base") c.model.position_base = f();
  else if (key == "init_std") c.model.init_std = f();
  else if (key == "t_max") c.t_max = u();
  else if (key == "steps") c.steps = u();
  else if (key == "batch") c.batch = u();
  else if (key == "eval_count") c.eval_count = u();
  else if (key == "pooling") c.pooling = parse_pooling(value);
  else if (key == "peak_lr") c.adam.peak_lr = f();
  else if (key == "warmup") c.adam.warmup = u();
  else if (key == "beta1") c.adam.beta1 = f();
  else if (key == "beta2") c.adam.beta2 = f();
  else if (key == "adam_eps") c.adam.eps = f();
  else if (key == "modes") c.modes = parse_mode_list(value);
  else if (key == "seeds") c.seeds = parse_seed_list(value);
  else if (key == "threads") c.threads = u();
  else throw ConfigError("config: unknown key '" + key + "'");
}

/// Applies `key = value` lines from text on top of `base`.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          ExperimentConfig base = ExperimentConfig::desk_defaults()) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    }
    apply_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline ExperimentConfig load_config_file(const std::string& path,
                                         ExperimentConfig base = ExperimentConfig::desk_defaults()) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

/// Canonical key = value text for every setting that affects results, in a
/// fixed order. Modes, seeds and threads are excluded: reports list modes
/// and seeds separately and threads never change numbers.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto num = [](double v) { return format_roundtrip(v); };
  os << "task = " << to_string(c.task.kind) << "\n"
     << "t_train = " << c.task.t_train << "\n"
     << "t_eval = " << c.task.t_eval << "\n"
     << "vocab = " << c.task.vocab << "\n"
     << "classes = " << c.task.classes << "\n"
     << "min_offset = " << c.task.min_offset << "\n"
     << "max_offset = " << c.task.max_offset << "\n"
     << "shift = " << c.task.shift << "\n"
     << "d_model = " << c.model.d_model << "\n"
     << "heads = " << c.model.heads << "\n"
     << "ffn_hidden = " << c.model.ffn_hidden << "\n"
     << "conv_kernel = " << c.model.conv_kernel << "\n"
     << "blocks = " << c.model.blocks << "\n"
     << "subsample_channels = " << c.model.subsample_channels << "\n"
     << "dropout = " << num(c.model.dropout) << "\n"
     << "conv_norm = " << to_string(c.model.conv_norm) << "\n"
     << "relative_variant = " << to_string(c.model.relative_variant) << "\n"
     << "position_base = " << num(c.model.position_base) << "\n"
     << "init_std = " << num(c.model.init_std) << "\n"
     << "t_max = " << c.t_max << "\n"
     << "steps = " << c.steps << "\n"
     << "batch = " << c.batch << "\n"
     << "eval_count = " << c.eval_count << "\n"
     << "pooling = " << to_string(c.pooling) << "\n"
     << "peak_lr = " << num(c.adam.peak_lr) << "\n"
     << "warmup = " << c.adam.warmup << "\n"
     << "beta1 = " << num(c.adam.beta1) << "\n"
     << "beta2 = " << num(c.adam.beta2) << "\n"
     << "adam_eps = " << num(c.adam.eps) << "\n";
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(canonical_config(c)); }

inline std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ropeformer
