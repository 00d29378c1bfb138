// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mixphm/matrix.hpp"
#include "mixphm/parameter.hpp"
#include "mixphm/tape.hpp"

namespace mixphm {

// Dimensions of a PHM-expert: weights are sums of n Kronecker products of
// n x n rule matrices with low-rank d_k factor products. The projection
// shapes are d x d_r (down) and d_r x d (up).
struct PHMConfig {
  int n = 2;
  int d = 32;
  int d_r = 8;
  int d_k = 2;

  void validate() const;
};

enum class Activation { Gelu, Relu };

int apply_activation(Tape& tape, int x, Activation act);

// Kronecker product, value level. The tape op Tape::kron shares this kernel.
Matrix kron(const Matrix& s, const Matrix& a);

// W = sum_j S_j x A_j (value level and tape level).
Matrix phm_weight(const std::vector<Matrix>& s_list, const std::vector<Matrix>& a_list);
int phm_weight_node(Tape& tape, const std::vector<int>& s_nodes, const std::vector<int>& a_nodes);

// Low-rank factor pair; the realized block is T * U^T.
struct LowRankFactorPair {
  ParamPtr t;
  ParamPtr u;
};

enum class FactorDirection { Down, Up };

// W = sum_j S_j x (T_j U_j^T), value level and tape level. The tape route
// keeps gradients flowing to S, T and U rather than to a materialized W.
Matrix lowrank_phm_weight(const std::vector<Matrix>& s_list,
                          const std::vector<Matrix>& t_list,
                          const std::vector<Matrix>& u_list);
int lowrank_phm_weight_node(Tape& tape, const std::vector<int>& s_nodes,
                            const std::vector<int>& t_nodes, const std::vector<int>& u_nodes);

// Standard bottleneck adapter, f(h W_dn) W_up + h.
struct AdapterWeights {
  ParamPtr w_dn;  // d x d_r
  ParamPtr w_up;  // d_r x d
  Activation activation = Activation::Gelu;
};

struct ResidualForward {
  int out;    // h + delta
  int delta;  // pre-residual update h_a, captured for regularization and RSA
};

ResidualForward adapter_forward(Tape& tape, int h, int w_dn, int w_up, Activation act);
ResidualForward adapter_forward(Tape& tape, int h, const AdapterWeights& weights);

// PHM-expert forward: adapter_forward with both projections realized from
// shared S factors, down factor pairs and expert-owned up factor pairs.
ResidualForward expert_forward(Tape& tape, int h, const std::vector<int>& s_nodes,
                               const std::vector<int>& down_t, const std::vector<int>& down_u,
                               const std::vector<int>& up_t, const std::vector<int>& up_u,
                               Activation act);

// (n * n^2 + d * d_r / n) / (d * d_r): the PHM factor count relative to a
// dense projection; bounded by 1/n + n^3/(d * d_r).
double phm_param_reduction(const PHMConfig& config);

}  // namespace mixphm
