// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mixphm {

// Shared token layout for the synthetic seq2seq tasks. The pretraining
// tasks (copy, reverse) only ever see payload tokens; the adaptation task
// (kv-lookup) introduces a separator and a key range that never appear
// during pretraining, which is the distribution shift the low-resource
// protocol needs.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;        // reserved
inline constexpr int kKvSep = 4;      // kv-lookup separator, unseen in pretraining
inline constexpr int kPayloadFirst = 10;
inline constexpr int kPayloadLast = 49;
inline constexpr int kKeyFirst = 50;  // kv keys, unseen in pretraining
inline constexpr int kKeyLast = 61;
inline constexpr int kSize = 64;
}  // namespace vocab

enum class TaskKind { Copy, Reverse, KvLookup };

TaskKind task_from_name(const std::string& name);
const char* task_name(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::KvLookup;
  int min_payload = 3;   // copy/reverse payload length range
  int max_payload = 6;
  int kv_pairs = 3;      // key-value pairs per kv-lookup context
};

struct Sample {
  int id = -1;  // position in the generating pool; used for disjointness checks
  std::vector<int> input;
  std::vector<int> answer;
};

// Deterministic sample list for (task, count, seed). kv-lookup contexts use
// distinct keys so the answer is a function of the input.
std::vector<Sample> generate_synthetic(const TaskSpec& task, int count, std::uint64_t seed);

// Even copy/reverse mixture used for pretraining.
std::vector<Sample> generate_pretraining_mixture(const TaskSpec& base, int count,
                                                 std::uint64_t seed);

// Independent answer for a kv-lookup input, by re-parsing the context.
std::vector<int> kv_lookup_oracle(const std::vector<int>& input);

struct LowResourceSplit {
  int n_d = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> dev;
};

// Draw 2 N_D distinct samples from the pool and split them equally.
LowResourceSplit make_lowresource_splits(const std::vector<Sample>& pool, int n_d,
                                         std::uint64_t seed);

}  // namespace mixphm
