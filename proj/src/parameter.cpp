// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/parameter.hpp"

#include <cstring>
#include <unordered_set>

#include "mixphm/rng.hpp"

namespace mixphm {

void zero_gradients(const std::vector<ParamPtr>& params) {
  for (const auto& p : params) {
    p->gradient.set_zero();
    p->grad_accumulated = false;
  }
}

long long census(const std::vector<ParamPtr>& params, bool trainable_only) {
  std::unordered_set<const Parameter*> seen;
  long long total = 0;
  for (const auto& p : params) {
    if (!p || (trainable_only && !p->trainable)) continue;
    if (!seen.insert(p.get()).second) continue;
    total += static_cast<long long>(p->value.size());
  }
  return total;
}

std::uint64_t value_checksum(const std::vector<ParamPtr>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* ptr, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params) {
    mix_bytes(p->name.data(), p->name.size());
    const int shape[2] = {p->value.rows, p->value.cols};
    mix_bytes(shape, sizeof(shape));
    mix_bytes(p->value.data.data(), p->value.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace mixphm
