// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/phm.hpp"

#include <string>

#include "mixphm/errors.hpp"

namespace mixphm {

void PHMConfig::validate() const {
  if (n <= 0 || d <= 0 || d_r <= 0 || d_k <= 0) {
    throw ConfigError("PHMConfig: all dimensions must be positive");
  }
  if (d % n != 0 || d_r % n != 0) {
    throw ConfigError("PHMConfig: n=" + std::to_string(n) + " must divide d=" +
                      std::to_string(d) + " and d_r=" + std::to_string(d_r));
  }
  const int cap = std::min(d / n, d_r / n);
  if (d_k > cap) {
    throw ConfigError("PHMConfig: d_k=" + std::to_string(d_k) +
                      " exceeds min(d/n, d_r/n)=" + std::to_string(cap));
  }
}

int apply_activation(Tape& tape, int x, Activation act) {
  return act == Activation::Gelu ? tape.gelu(x) : tape.relu(x);
}

Matrix kron(const Matrix& s, const Matrix& a) {
  Matrix out(s.rows * a.rows, s.cols * a.cols);
  for (int i = 0; i < s.rows; ++i) {
    for (int j = 0; j < s.cols; ++j) {
      const double sij = s(i, j);
      if (sij == 0.0) continue;
      for (int u = 0; u < a.rows; ++u)
        for (int v = 0; v < a.cols; ++v) out(i * a.rows + u, j * a.cols + v) = sij * a(u, v);
    }
  }
  return out;
}

namespace {

void check_lists(std::size_t s_count, std::size_t a_count, const char* who) {
  if (s_count == 0 || s_count != a_count) {
    throw ConfigError(std::string(who) + ": factor list lengths disagree (" +
                      std::to_string(s_count) + " vs " + std::to_string(a_count) + ")");
  }
}

}  // namespace

Matrix phm_weight(const std::vector<Matrix>& s_list, const std::vector<Matrix>& a_list) {
  check_lists(s_list.size(), a_list.size(), "phm_weight");
  Matrix w = kron(s_list[0], a_list[0]);
  for (std::size_t j = 1; j < s_list.size(); ++j) {
    const Matrix term = kron(s_list[j], a_list[j]);
    if (!term.same_shape(w)) {
      throw DimensionError("phm_weight: summand " + std::to_string(j) + " has shape " +
                           term.shape_str() + ", expected " + w.shape_str());
    }
    add_in_place(w, term);
  }
  return w;
}

int phm_weight_node(Tape& tape, const std::vector<int>& s_nodes,
                    const std::vector<int>& a_nodes) {
  check_lists(s_nodes.size(), a_nodes.size(), "phm_weight");
  int w = tape.kron(s_nodes[0], a_nodes[0]);
  for (std::size_t j = 1; j < s_nodes.size(); ++j) {
    w = tape.add(w, tape.kron(s_nodes[j], a_nodes[j]));
  }
  return w;
}

Matrix lowrank_phm_weight(const std::vector<Matrix>& s_list, const std::vector<Matrix>& t_list,
                          const std::vector<Matrix>& u_list) {
  check_lists(s_list.size(), t_list.size(), "lowrank_phm_weight");
  check_lists(s_list.size(), u_list.size(), "lowrank_phm_weight");
  std::vector<Matrix> a_list;
  a_list.reserve(t_list.size());
  for (std::size_t j = 0; j < t_list.size(); ++j) {
    if (t_list[j].cols != u_list[j].cols) {
      throw ConfigError("lowrank_phm_weight: rank mismatch, T " + t_list[j].shape_str() +
                        " vs U " + u_list[j].shape_str());
    }
    a_list.push_back(matmul(t_list[j], transpose(u_list[j])));
  }
  return phm_weight(s_list, a_list);
}

int lowrank_phm_weight_node(Tape& tape, const std::vector<int>& s_nodes,
                            const std::vector<int>& t_nodes, const std::vector<int>& u_nodes) {
  check_lists(s_nodes.size(), t_nodes.size(), "lowrank_phm_weight");
  check_lists(s_nodes.size(), u_nodes.size(), "lowrank_phm_weight");
  std::vector<int> a_nodes;
  a_nodes.reserve(t_nodes.size());
  for (std::size_t j = 0; j < t_nodes.size(); ++j) {
    if (tape.value(t_nodes[j]).cols != tape.value(u_nodes[j]).cols) {
      throw ConfigError("lowrank_phm_weight: rank mismatch, T " +
                        tape.value(t_nodes[j]).shape_str() + " vs U " +
                        tape.value(u_nodes[j]).shape_str());
    }
    a_nodes.push_back(tape.matmul(t_nodes[j], tape.transpose(u_nodes[j])));
  }
  return phm_weight_node(tape, s_nodes, a_nodes);
}

ResidualForward adapter_forward(Tape& tape, int h, int w_dn, int w_up, Activation act) {
  const Matrix& hv = tape.value(h);
  const Matrix& dn = tape.value(w_dn);
  if (hv.cols != dn.rows) {
    throw DimensionError("adapter_forward: input " + hv.shape_str() +
                         " vs down-projection " + dn.shape_str());
  }
  const int bottleneck = apply_activation(tape, tape.matmul(h, w_dn), act);
  const int delta = tape.matmul(bottleneck, w_up);
  return {tape.add(h, delta), delta};
}

ResidualForward adapter_forward(Tape& tape, int h, const AdapterWeights& weights) {
  return adapter_forward(tape, h, tape.leaf(weights.w_dn), tape.leaf(weights.w_up),
                         weights.activation);
}

ResidualForward expert_forward(Tape& tape, int h, const std::vector<int>& s_nodes,
                               const std::vector<int>& down_t, const std::vector<int>& down_u,
                               const std::vector<int>& up_t, const std::vector<int>& up_u,
                               Activation act) {
  const int w_dn = lowrank_phm_weight_node(tape, s_nodes, down_t, down_u);
  const int w_up = lowrank_phm_weight_node(tape, s_nodes, up_t, up_u);
  return adapter_forward(tape, h, w_dn, w_up, act);
}

double phm_param_reduction(const PHMConfig& config) {
  config.validate();
  const double dense = static_cast<double>(config.d) * config.d_r;
  const double phm = static_cast<double>(config.n) * config.n * config.n + dense / config.n;
  const double ratio = phm / dense;
  const double bound = 1.0 / config.n +
                       static_cast<double>(config.n) * config.n * config.n / dense;
  if (ratio > bound + 1e-12) {
    throw ContractError("phm_param_reduction: ratio exceeds 1/n + n^3/(d*d_r)");
  }
  return ratio;
}

}  // namespace mixphm
