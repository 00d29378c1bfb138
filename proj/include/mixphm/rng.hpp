// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace mixphm {

// Deterministic, platform-independent generator (xoshiro256** seeded via
// splitmix64). std::mt19937 distributions are not bit-portable across
// standard libraries, and reproducibility of full metric trajectories is a
// contract here, so sampling is done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double next_double();
  // Uniform in (0, 1]; safe as a log() argument.
  double next_open();
  // Uniform integer in [0, bound); bound >= 1.
  std::uint64_t next_below(std::uint64_t bound);
  int next_int(int bound);
  // Standard normal via Box-Muller.
  double next_normal();
  double next_normal(double mean, double stddev);

 private:
  std::uint64_t s_[4];
};

std::uint64_t fnv1a64(std::string_view text);

// Sub-seed for a named component so that adding components never perturbs
// the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index);

}  // namespace mixphm
