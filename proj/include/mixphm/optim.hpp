// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unordered_map>
#include <vector>

#include "mixphm/parameter.hpp"

namespace mixphm {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Moment state persists across steps and is
// keyed per parameter; parameters that received no gradient contribution
// since the last zero_gradients are left untouched (stochastic routing
// leaves unselected experts out of a step entirely).
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(const std::vector<ParamPtr>& params);
  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  struct Slot {
    Matrix m;
    Matrix v;
    long t = 0;
  };
  AdamWConfig config_;
  std::unordered_map<const Parameter*, Slot> state_;
};

}  // namespace mixphm
