#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ropeformer/config.hpp"
#include "ropeformer/model.hpp"
#include "ropeformer/params.hpp"
#include "ropeformer/tensor_io.hpp"

namespace ropeformer {

// Checkpoint directory layout:
//   manifest.txt  key = value lines: format, config_hash, pe_mode, seed,
//                 tokens, classes, and one `tensor.<name> = <file>` per tensor
//   config.txt    canonical configuration text; its hash must match
//   <name>.tnsr   one tensor dump per parameter
// Loading refuses a checkpoint whose config text does not hash to the
// manifest's config_hash.

inline constexpr const char* kCheckpointFormat = "ropeformer-checkpoint-1";

struct Checkpoint {
  ExperimentConfig config;
  PEKind mode = PEKind::rotary;
  std::uint64_t seed = 0;
  ClassifierParams params;
};

namespace detail {

/// Trainable tensors plus batch-norm running statistics, by name.
inline ParamSet checkpoint_tensors(const ClassifierParams& p) {
  ParamSet s = to_param_set(p);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& conv = p.blocks[b].conv;
    if (conv.norm == ConvNorm::batch) {
      const std::string prefix = "block" + std::to_string(b) + ".conv.";
      s.add(prefix + "running_mean", conv.running_mean);
      s.add(prefix + "running_var", conv.running_var);
    }
  }
  return s;
}

inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed line in '" + path.string() + "': " + line);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline const std::string& require_key(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("checkpoint manifest lacks '" + key + "'");
  return it->second;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  const std::string cfg_text = canonical_config(ck.config);
  {
    std::ofstream out(dir / "config.txt", std::ios::binary);
    out << cfg_text;
    if (!out) throw ConfigError("cannot write '" + (dir / "config.txt").string() + "'");
  }
  std::ofstream man(dir / "manifest.txt", std::ios::binary);
  man << "format = " << kCheckpointFormat << "\n"
      << "config_hash = " << hash_hex(fnv1a(cfg_text)) << "\n"
      << "pe_mode = " << to_string(ck.mode) << "\n"
      << "seed = " << ck.seed << "\n"
      << "tokens = " << ck.params.embedding.rows() << "\n"
      << "classes = " << ck.params.head_b.size() << "\n";
  const ParamSet tensors = detail::checkpoint_tensors(ck.params);
  for (const auto& [name, t] : tensors.entries()) {
    const std::string file = name + ".tnsr";
    save_tensor(dir / file, t);
    man << "tensor." << name << " = " << file << "\n";
  }
  if (!man) throw ConfigError("cannot write '" + (dir / "manifest.txt").string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto kv = detail::read_kv_file(dir / "manifest.txt");
  if (detail::require_key(kv, "format") != kCheckpointFormat) {
    throw ConfigError("unsupported checkpoint format '" + kv.at("format") + "'");
  }
  std::ifstream cin(dir / "config.txt", std::ios::binary);
  if (!cin) throw ConfigError("checkpoint lacks config.txt");
  std::ostringstream ss;
  ss << cin.rdbuf();
  const std::string cfg_text = ss.str();
  if (hash_hex(fnv1a(cfg_text)) != detail::require_key(kv, "config_hash")) {
    throw ConfigError("checkpoint config hash mismatch: config.txt was modified or belongs to another run");
  }
  Checkpoint ck;
  ck.config = parse_config_text(cfg_text);
  ck.mode = parse_pe_kind(detail::require_key(kv, "pe_mode"));
  ck.seed = detail::parse_u64("seed", detail::require_key(kv, "seed"));
  const auto tokens = detail::parse_u64("tokens", detail::require_key(kv, "tokens"));
  const auto classes = detail::parse_u64("classes", detail::require_key(kv, "classes"));
  Rng scratch(0);
  ck.params = make_classifier_params(ck.config.model_for(ck.mode), tokens, classes, scratch);
  ParamSet stored;
  for (const auto& [key, file] : kv) {
    if (key.rfind("tensor.", 0) == 0) stored.add(key.substr(7), load_tensor(dir / file));
  }
  assign_from(ck.params, stored);
  for (std::size_t b = 0; b < ck.params.blocks.size(); ++b) {
    auto& conv = ck.params.blocks[b].conv;
    if (conv.norm == ConvNorm::batch) {
      const std::string prefix = "block" + std::to_string(b) + ".conv.";
      conv.running_mean = stored.at(prefix + "running_mean");
      conv.running_var = stored.at(prefix + "running_var");
    }
  }
  return ck;
}

}  // namespace ropeformer
