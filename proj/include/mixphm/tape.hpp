// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mixphm/matrix.hpp"
#include "mixphm/parameter.hpp"

namespace mixphm {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Add,            // equal shapes, or second operand 1xC broadcast over rows
  Scale,
  Hadamard,       // elementwise-multiply
  RowSoftmax,
  Gelu,
  Relu,
  Softplus,
  LayerNorm,      // inputs: x (NxD), gain (1xD), bias (1xD); epsilon fixed at 1e-6
  MeanOverRows,   // NxD -> 1xD
  ConcatRows,
  Reshape,
  CrossEntropyWithLogits,  // scalar sum of per-row NLL against integer targets
  Kron,                    // Kronecker product of the two inputs
  RowL2Normalize,          // rows scaled to unit L2 norm; rows with norm < 1e-12 become zero
};

const char* op_name(OpKind k);

struct TapeNode {
  OpKind op;
  int in0 = -1;
  int in1 = -1;
  int in2 = -1;
  double scalar = 0.0;
  Matrix value;
  std::vector<int> targets;     // CrossEntropyWithLogits
  Parameter* param = nullptr;   // Leaf
  bool needs_grad = false;
};

// Reverse-mode tape over dense matrices. Nodes are appended in creation
// order and the backward pass walks them in exact reverse order, so a node
// id is also its topological rank. Single-threaded by construction.
class Tape {
 public:
  int leaf(Parameter& p);
  int leaf(const ParamPtr& p) { return leaf(*p); }
  int constant(Matrix m);

  int matmul(int a, int b);
  int transpose(int a);
  int add(int a, int b);
  int scale(int a, double s);
  int hadamard(int a, int b);
  int row_softmax(int a);
  int gelu(int a);
  int relu(int a);
  int softplus(int a);
  int layer_norm(int x, int gain, int bias);
  int mean_over_rows(int a);
  int concat_rows(int a, int b);
  int concat_rows(const std::vector<int>& parts);
  int reshape(int a, int rows, int cols);
  int cross_entropy_with_logits(int logits, std::vector<int> targets);
  int kron(int s, int a);
  int row_l2_normalize(int a);

  // Composites built from the primitives above.
  int sub(int a, int b) { return add(a, scale(b, -1.0)); }
  int sum_all(int a);
  int mean_all(int a);

  const Matrix& value(int id) const;
  bool wants_grad(int id) const;
  std::size_t size() const { return nodes_.size(); }

  // Accumulates dLoss/dParameter into every trainable Parameter reachable
  // from the scalar loss node.
  void backward(int loss);

  static constexpr double kLayerNormEpsilon = 1e-6;
  static constexpr double kNormalizeFloor = 1e-12;

 private:
  std::vector<TapeNode> nodes_;

  int push(TapeNode&& node);
  const Matrix& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  void check_id(int id, const char* who) const;
};

}  // namespace mixphm
