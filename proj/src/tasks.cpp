// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/tasks.hpp"

#include <algorithm>

#include "mixphm/errors.hpp"
#include "mixphm/rng.hpp"

namespace mixphm {

TaskKind task_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "kv-lookup") return TaskKind::KvLookup;
  throw ConfigError("unknown task kind '" + name + "'");
}

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::KvLookup: return "kv-lookup";
  }
  return "?";
}

namespace {

int payload_token(Rng& rng) {
  return vocab::kPayloadFirst + rng.next_int(vocab::kPayloadLast - vocab::kPayloadFirst + 1);
}

Sample make_sample(const TaskSpec& task, TaskKind kind, Rng& rng) {
  Sample s;
  switch (kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse: {
      const int len = task.min_payload + rng.next_int(task.max_payload - task.min_payload + 1);
      for (int i = 0; i < len; ++i) s.input.push_back(payload_token(rng));
      s.answer = s.input;
      if (kind == TaskKind::Reverse) std::reverse(s.answer.begin(), s.answer.end());
      break;
    }
    case TaskKind::KvLookup: {
      const int key_range = vocab::kKeyLast - vocab::kKeyFirst + 1;
      if (task.kv_pairs > key_range) {
        throw ConfigError("kv-lookup: more pairs than distinct keys available");
      }
      // Partial Fisher-Yates over the key range keeps keys distinct.
      std::vector<int> keys(static_cast<std::size_t>(key_range));
      for (int i = 0; i < key_range; ++i) keys[static_cast<std::size_t>(i)] = vocab::kKeyFirst + i;
      for (int i = 0; i < task.kv_pairs; ++i) {
        const int j = i + rng.next_int(key_range - i);
        std::swap(keys[static_cast<std::size_t>(i)], keys[static_cast<std::size_t>(j)]);
      }
      std::vector<int> values;
      for (int i = 0; i < task.kv_pairs; ++i) values.push_back(payload_token(rng));
      const int query = rng.next_int(task.kv_pairs);
      for (int i = 0; i < task.kv_pairs; ++i) {
        s.input.push_back(keys[static_cast<std::size_t>(i)]);
        s.input.push_back(values[static_cast<std::size_t>(i)]);
      }
      s.input.push_back(vocab::kKvSep);
      s.input.push_back(keys[static_cast<std::size_t>(query)]);
      s.answer.push_back(values[static_cast<std::size_t>(query)]);
      break;
    }
  }
  return s;
}

}  // namespace

std::vector<Sample> generate_synthetic(const TaskSpec& task, int count, std::uint64_t seed) {
  if (count < 1) throw ProtocolError("generate_synthetic: count must be >= 1");
  Rng rng(derive_seed(seed, "task-data"));
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample s = make_sample(task, task.kind, rng);
    s.id = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_pretraining_mixture(const TaskSpec& base, int count,
                                                 std::uint64_t seed) {
  if (count < 1) throw ProtocolError("generate_pretraining_mixture: count must be >= 1");
  Rng rng(derive_seed(seed, "pretrain-data"));
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const TaskKind kind = (i % 2 == 0) ? TaskKind::Copy : TaskKind::Reverse;
    Sample s = make_sample(base, kind, rng);
    s.id = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<int> kv_lookup_oracle(const std::vector<int>& input) {
  // context: k1 v1 ... km vm SEP q
  if (input.size() < 4 || input.size() % 2 != 0) {
    throw ProtocolError("kv_lookup_oracle: malformed input length");
  }
  const int query = input.back();
  const std::size_t sep_pos = input.size() - 2;
  if (input[sep_pos] != vocab::kKvSep) {
    throw ProtocolError("kv_lookup_oracle: separator not found");
  }
  for (std::size_t i = 0; i + 1 < sep_pos; i += 2) {
    if (input[i] == query) return {input[i + 1]};
  }
  throw ProtocolError("kv_lookup_oracle: query key not present in context");
}

LowResourceSplit make_lowresource_splits(const std::vector<Sample>& pool, int n_d,
                                         std::uint64_t seed) {
  if (n_d < 1) throw ProtocolError("make_lowresource_splits: N_D must be >= 1");
  if (static_cast<int>(pool.size()) < 2 * n_d) {
    throw ProtocolError("make_lowresource_splits: pool of " + std::to_string(pool.size()) +
                        " cannot supply 2*N_D = " + std::to_string(2 * n_d) + " samples");
  }
  Rng rng(derive_seed(seed, "lowresource-split"));
  std::vector<int> indices(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) indices[i] = static_cast<int>(i);
  for (int i = 0; i < 2 * n_d; ++i) {  // partial Fisher-Yates: 2 N_D distinct draws
    const int j = i + rng.next_int(static_cast<int>(pool.size()) - i);
    std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
  }
  LowResourceSplit split;
  split.n_d = n_d;
  split.seed = seed;
  for (int i = 0; i < n_d; ++i) split.train.push_back(pool[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])]);
  for (int i = n_d; i < 2 * n_d; ++i) split.dev.push_back(pool[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])]);
  return split;
}

}  // namespace mixphm
