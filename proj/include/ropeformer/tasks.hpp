#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ropeformer/tensor.hpp"

namespace ropeformer {

// Synthetic position-sensitive classification tasks.
//
// relative-offset: filler tokens 0..vocab-1 plus two markers A = vocab and
//   B = vocab + 1 placed once each. The label buckets the signed offset
//   pos(B) - pos(A), taken from +-[min_offset, max_offset], into `classes`
//   equal groups in increasing offset order. Offsets are the same at every
//   sequence length, so longer sequences only move the markers further
//   from the origin.
//
// shifted-copy: the sequence is two halves of length H. Label 1 when
//   second[i] == first[(i - shift) mod H] for every i, else 0.

enum class TaskKind { relative_offset, shifted_copy };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::relative_offset ? "relative-offset" : "shifted-copy";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "relative-offset" || s == "relative_offset") return TaskKind::relative_offset;
  if (s == "shifted-copy" || s == "shifted_copy") return TaskKind::shifted_copy;
  throw ConfigError("unknown task '" + s + "'");
}

struct SyntheticTask {
  TaskKind kind = TaskKind::relative_offset;
  std::size_t t_train = 32;
  std::size_t t_eval = 64;
  std::size_t vocab = 8;
  std::size_t classes = 4;
  std::size_t min_offset = 1;
  std::size_t max_offset = 8;
  std::size_t shift = 1;
  std::uint64_t seed = 0;

  /// Embedding rows needed: fillers plus the two markers.
  std::size_t token_count() const { return vocab + 2; }

  std::size_t num_classes() const { return kind == TaskKind::relative_offset ? classes : 2; }

  /// Number of distinct signed offsets.
  std::size_t offset_count() const { return 2 * (max_offset - min_offset + 1); }

  void validate() const {
    if (t_train < 4) throw ConfigError("task: t_train must be at least 4");
    if (vocab < 2) throw ConfigError("task: vocab must be at least 2");
    if (kind == TaskKind::relative_offset) {
      if (min_offset == 0 || min_offset > max_offset) throw ConfigError("task: need 1 <= min_offset <= max_offset");
      if (max_offset >= t_train) throw ConfigError("task: max_offset must be below t_train");
      if (classes < 2 || classes > offset_count()) {
        throw ConfigError("task: " + std::to_string(classes) + " classes but only " +
                          std::to_string(offset_count()) + " distinct offsets");
      }
    } else {
      if (t_train % 2 != 0 || t_eval % 2 != 0) throw ConfigError("task: shifted-copy needs even lengths");
      if (shift == 0 || shift >= t_train / 2) throw ConfigError("task: shift must be in [1, t_train/2)");
    }
  }
};

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

using Dataset = std::vector<Example>;

/// Class of a signed offset, or throws when the offset is not a task offset.
inline std::size_t offset_class(std::ptrdiff_t offset, const SyntheticTask& task) {
  const auto lo = static_cast<std::ptrdiff_t>(task.min_offset);
  const auto hi = static_cast<std::ptrdiff_t>(task.max_offset);
  const std::ptrdiff_t mag = offset < 0 ? -offset : offset;
  if (mag < lo || mag > hi) throw ConfigError("offset " + std::to_string(offset) + " is not a task offset");
  const std::ptrdiff_t span = hi - lo + 1;
  // Rank in the ascending list [-hi .. -lo, lo .. hi].
  const std::ptrdiff_t rank = offset < 0 ? offset + hi : span + (offset - lo);
  return static_cast<std::size_t>(rank) * task.classes / task.offset_count();
}

/// The label as a function of sequence content alone.
inline std::size_t label_of(const std::vector<std::size_t>& tokens, const SyntheticTask& task) {
  if (task.kind == TaskKind::relative_offset) {
    std::ptrdiff_t a = -1, b = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == task.vocab) a = static_cast<std::ptrdiff_t>(i);
      if (tokens[i] == task.vocab + 1) b = static_cast<std::ptrdiff_t>(i);
    }
    if (a < 0 || b < 0) throw ConfigError("sequence lacks a marker");
    return offset_class(b - a, task);
  }
  const std::size_t h = tokens.size() / 2;
  for (std::size_t i = 0; i < h; ++i) {
    if (tokens[h + i] != tokens[(i + h - task.shift % h) % h]) return 0;
  }
  return 1;
}

namespace detail {

inline Example relative_offset_example(const SyntheticTask& task, std::size_t length, Rng& rng) {
  Example ex;
  ex.tokens.resize(length);
  for (auto& t : ex.tokens) t = rng.uniform_int(task.vocab);
  const std::size_t cls = rng.uniform_int(task.classes);
  // Offsets of this class in ascending order.
  std::vector<std::ptrdiff_t> offsets;
  const auto lo = static_cast<std::ptrdiff_t>(task.min_offset);
  const auto hi = static_cast<std::ptrdiff_t>(task.max_offset);
  for (std::ptrdiff_t o = -hi; o <= hi; ++o) {
    if ((o <= -lo || o >= lo) && offset_class(o, task) == cls) offsets.push_back(o);
  }
  const std::ptrdiff_t off = offsets[rng.uniform_int(offsets.size())];
  const std::ptrdiff_t mag = off < 0 ? -off : off;
  const std::size_t a = static_cast<std::size_t>(off < 0 ? mag : 0) +
                        rng.uniform_int(length - static_cast<std::size_t>(mag));
  const std::size_t b = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(a) + off);
  ex.tokens[a] = task.vocab;
  ex.tokens[b] = task.vocab + 1;
  ex.label = label_of(ex.tokens, task);
  return ex;
}

inline Example shifted_copy_example(const SyntheticTask& task, std::size_t length, Rng& rng) {
  const std::size_t h = length / 2;
  Example ex;
  ex.tokens.resize(length);
  for (std::size_t i = 0; i < h; ++i) ex.tokens[i] = rng.uniform_int(task.vocab);
  for (std::size_t i = 0; i < h; ++i) ex.tokens[h + i] = ex.tokens[(i + h - task.shift % h) % h];
  if (rng.uniform_int(2) == 0) {
    const std::size_t pos = h + rng.uniform_int(h);
    ex.tokens[pos] = (ex.tokens[pos] + 1 + rng.uniform_int(task.vocab - 1)) % task.vocab;
  }
  ex.label = label_of(ex.tokens, task);
  return ex;
}

}  // namespace detail

/// `count` examples of the given length. The stream index separates
/// independent splits drawn from the same task seed.
inline Dataset gen_task(const SyntheticTask& task, std::size_t count, std::size_t length, std::uint64_t stream = 0) {
  task.validate();
  if (length < 4) throw ConfigError("task: sequence length must be at least 4");
  if (task.kind == TaskKind::relative_offset && task.max_offset >= length) {
    throw ConfigError("task: max_offset " + std::to_string(task.max_offset) + " does not fit length " +
                      std::to_string(length));
  }
  if (task.kind == TaskKind::shifted_copy && (length % 2 != 0 || task.shift >= length / 2)) {
    throw ConfigError("task: shifted-copy length must be even and exceed twice the shift");
  }
  Rng rng = Rng::derive(task.seed, stream);
  Dataset data;
  data.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    data.push_back(task.kind == TaskKind::relative_offset ? detail::relative_offset_example(task, length, rng)
                                                          : detail::shifted_copy_example(task, length, rng));
  }
  return data;
}

}  // namespace ropeformer
