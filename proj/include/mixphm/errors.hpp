// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mixphm {

// Shape disagreement between operands. Messages name the operation and both shapes.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid static configuration: divisibility, rank bounds, unknown enum values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API contract violation: non-scalar loss, optimizer stepped before backward, bad call order.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment protocol violation: split sizes, empty targets, batch too small for negatives.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Routing assignment inconsistent with the layer (index out of range).
class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Routing kind requested in the wrong train/inference mode.
class ModeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// grad_check preconditions failed (non-deterministic target function).
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric failure (NaN/Inf) while training; message carries the step index.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or corrupt file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An analysis report cannot be formed from the available samples.
class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mixphm
