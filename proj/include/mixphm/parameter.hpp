// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mixphm/matrix.hpp"

namespace mixphm {

// A named trainable tensor. Gradients accumulate additively across backward
// passes; callers zero them between optimizer steps.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix gradient;
  bool trainable = true;
  // Set by Tape::backward when this parameter received a contribution since
  // the last zero_gradients; the optimizer skips parameters that did not
  // participate in the step (stochastic routing leaves experts untouched).
  bool grad_accumulated = false;

  Parameter(std::string name_, Matrix value_, bool trainable_ = true)
      : name(std::move(name_)),
        value(std::move(value_)),
        gradient(Matrix::zeros(value.rows, value.cols)),
        trainable(trainable_) {}
};

using ParamPtr = std::shared_ptr<Parameter>;

inline ParamPtr make_param(std::string name, Matrix value, bool trainable = true) {
  return std::make_shared<Parameter>(std::move(name), std::move(value), trainable);
}

void zero_gradients(const std::vector<ParamPtr>& params);

// Total entry count over unique parameters (shared pointers counted once).
long long census(const std::vector<ParamPtr>& params, bool trainable_only = true);

// FNV-1a hash over names, shapes and value bytes, in list order.
std::uint64_t value_checksum(const std::vector<ParamPtr>& params);

}  // namespace mixphm
