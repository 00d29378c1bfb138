// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/tape.hpp"

#include <cmath>
#include <string>

#include "mixphm/errors.hpp"

namespace mixphm {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Hadamard: return "elementwise-multiply";
    case OpKind::RowSoftmax: return "row-softmax";
    case OpKind::Gelu: return "GELU";
    case OpKind::Relu: return "ReLU";
    case OpKind::Softplus: return "softplus";
    case OpKind::LayerNorm: return "layer-norm";
    case OpKind::MeanOverRows: return "mean-over-rows";
    case OpKind::ConcatRows: return "concat-rows";
    case OpKind::Reshape: return "reshape";
    case OpKind::CrossEntropyWithLogits: return "cross-entropy-with-logits";
    case OpKind::Kron: return "kron";
    case OpKind::RowL2Normalize: return "row-l2-normalize";
  }
  return "?";
}

void Tape::check_id(int id, const char* who) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError(std::string(who) + ": node id " + std::to_string(id) + " out of range");
  }
}

int Tape::push(TapeNode&& node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Parameter& p) {
  TapeNode n;
  n.op = OpKind::Leaf;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = p.trainable;
  return push(std::move(n));
}

int Tape::constant(Matrix m) {
  TapeNode n;
  n.op = OpKind::Constant;
  n.value = std::move(m);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  TapeNode n;
  n.op = OpKind::MatMul;
  n.in0 = a;
  n.in1 = b;
  n.value = mixphm::matmul(val(a), val(b));
  n.needs_grad = wants_grad(a) || wants_grad(b);
  return push(std::move(n));
}

int Tape::transpose(int a) {
  check_id(a, "transpose");
  TapeNode n;
  n.op = OpKind::Transpose;
  n.in0 = a;
  n.value = mixphm::transpose(val(a));
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_id(a, "add");
  check_id(b, "add");
  const Matrix& x = val(a);
  const Matrix& y = val(b);
  TapeNode n;
  n.op = OpKind::Add;
  n.in0 = a;
  n.in1 = b;
  if (x.same_shape(y)) {
    n.value = mixphm::add(x, y);
  } else if (y.rows == 1 && y.cols == x.cols) {
    n.value = x;
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j) n.value(i, j) += y(0, j);
  } else {
    throw DimensionError("add: " + x.shape_str() + " + " + y.shape_str());
  }
  n.needs_grad = wants_grad(a) || wants_grad(b);
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  check_id(a, "scale");
  TapeNode n;
  n.op = OpKind::Scale;
  n.in0 = a;
  n.scalar = s;
  n.value = mixphm::scale(val(a), s);
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
  check_id(a, "elementwise-multiply");
  check_id(b, "elementwise-multiply");
  TapeNode n;
  n.op = OpKind::Hadamard;
  n.in0 = a;
  n.in1 = b;
  n.value = mixphm::hadamard(val(a), val(b));
  n.needs_grad = wants_grad(a) || wants_grad(b);
  return push(std::move(n));
}

int Tape::row_softmax(int a) {
  check_id(a, "row-softmax");
  const Matrix& x = val(a);
  TapeNode n;
  n.op = OpKind::RowSoftmax;
  n.in0 = a;
  n.value = Matrix(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double total = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      const double e = std::exp(x(i, j) - mx);
      n.value(i, j) = e;
      total += e;
    }
    for (int j = 0; j < x.cols; ++j) n.value(i, j) /= total;
  }
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::gelu(int a) {
  check_id(a, "GELU");
  TapeNode n;
  n.op = OpKind::Gelu;
  n.in0 = a;
  n.value = val(a);
  for (auto& v : n.value.data) v = gelu_value(v);
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::relu(int a) {
  check_id(a, "ReLU");
  TapeNode n;
  n.op = OpKind::Relu;
  n.in0 = a;
  n.value = val(a);
  for (auto& v : n.value.data) v = v > 0.0 ? v : 0.0;
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::softplus(int a) {
  check_id(a, "softplus");
  TapeNode n;
  n.op = OpKind::Softplus;
  n.in0 = a;
  n.value = val(a);
  for (auto& v : n.value.data) v = softplus_value(v);
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::layer_norm(int x, int gain, int bias) {
  check_id(x, "layer-norm");
  check_id(gain, "layer-norm");
  check_id(bias, "layer-norm");
  const Matrix& xv = val(x);
  const Matrix& g = val(gain);
  const Matrix& b = val(bias);
  if (g.rows != 1 || g.cols != xv.cols || b.rows != 1 || b.cols != xv.cols) {
    throw DimensionError("layer-norm: x " + xv.shape_str() + ", gain " + g.shape_str() +
                         ", bias " + b.shape_str());
  }
  TapeNode n;
  n.op = OpKind::LayerNorm;
  n.in0 = x;
  n.in1 = gain;
  n.in2 = bias;
  n.value = Matrix(xv.rows, xv.cols);
  const int d = xv.cols;
  for (int i = 0; i < xv.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xv(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xv(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (int j = 0; j < d; ++j) {
      n.value(i, j) = (xv(i, j) - mean) * inv * g(0, j) + b(0, j);
    }
  }
  n.needs_grad = wants_grad(x) || wants_grad(gain) || wants_grad(bias);
  return push(std::move(n));
}

int Tape::mean_over_rows(int a) {
  check_id(a, "mean-over-rows");
  const Matrix& x = val(a);
  TapeNode n;
  n.op = OpKind::MeanOverRows;
  n.in0 = a;
  n.value = Matrix(1, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) n.value(0, j) += x(i, j);
  for (int j = 0; j < x.cols; ++j) n.value(0, j) /= x.rows;
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::concat_rows(int a, int b) {
  check_id(a, "concat-rows");
  check_id(b, "concat-rows");
  const Matrix& x = val(a);
  const Matrix& y = val(b);
  if (x.cols != y.cols) {
    throw DimensionError("concat-rows: " + x.shape_str() + " | " + y.shape_str());
  }
  TapeNode n;
  n.op = OpKind::ConcatRows;
  n.in0 = a;
  n.in1 = b;
  n.value = Matrix(x.rows + y.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) n.value(i, j) = x(i, j);
  for (int i = 0; i < y.rows; ++i)
    for (int j = 0; j < y.cols; ++j) n.value(x.rows + i, j) = y(i, j);
  n.needs_grad = wants_grad(a) || wants_grad(b);
  return push(std::move(n));
}

int Tape::concat_rows(const std::vector<int>& parts) {
  if (parts.empty()) throw ContractError("concat-rows: empty part list");
  int acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_rows(acc, parts[i]);
  return acc;
}

int Tape::reshape(int a, int rows, int cols) {
  check_id(a, "reshape");
  const Matrix& x = val(a);
  if (rows <= 0 || cols <= 0 ||
      static_cast<long long>(rows) * cols != static_cast<long long>(x.rows) * x.cols) {
    throw DimensionError("reshape: " + x.shape_str() + " -> " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  TapeNode n;
  n.op = OpKind::Reshape;
  n.in0 = a;
  n.value = Matrix(rows, cols);
  n.value.data = x.data;
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::cross_entropy_with_logits(int logits, std::vector<int> targets) {
  check_id(logits, "cross-entropy-with-logits");
  const Matrix& x = val(logits);
  if (static_cast<int>(targets.size()) != x.rows) {
    throw DimensionError("cross-entropy-with-logits: logits " + x.shape_str() + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  for (int t : targets) {
    if (t < 0 || t >= x.cols) {
      throw ContractError("cross-entropy-with-logits: target id " + std::to_string(t) +
                          " outside vocabulary of size " + std::to_string(x.cols));
    }
  }
  TapeNode n;
  n.op = OpKind::CrossEntropyWithLogits;
  n.in0 = logits;
  n.targets = std::move(targets);
  double total = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double lse = 0.0;
    for (int j = 0; j < x.cols; ++j) lse += std::exp(x(i, j) - mx);
    total += mx + std::log(lse) - x(i, n.targets[i]);
  }
  n.value = Matrix(1, 1);
  n.value(0, 0) = total;
  n.needs_grad = wants_grad(logits);
  return push(std::move(n));
}

int Tape::kron(int s, int a) {
  check_id(s, "kron");
  check_id(a, "kron");
  const Matrix& sv = val(s);
  const Matrix& av = val(a);
  TapeNode n;
  n.op = OpKind::Kron;
  n.in0 = s;
  n.in1 = a;
  n.value = Matrix(sv.rows * av.rows, sv.cols * av.cols);
  for (int i = 0; i < sv.rows; ++i) {
    for (int j = 0; j < sv.cols; ++j) {
      const double sij = sv(i, j);
      if (sij == 0.0) continue;
      for (int u = 0; u < av.rows; ++u)
        for (int v = 0; v < av.cols; ++v)
          n.value(i * av.rows + u, j * av.cols + v) = sij * av(u, v);
    }
  }
  n.needs_grad = wants_grad(s) || wants_grad(a);
  return push(std::move(n));
}

int Tape::row_l2_normalize(int a) {
  check_id(a, "row-l2-normalize");
  const Matrix& x = val(a);
  TapeNode n;
  n.op = OpKind::RowL2Normalize;
  n.in0 = a;
  n.value = Matrix(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < x.cols; ++j) sq += x(i, j) * x(i, j);
    const double norm = std::sqrt(sq);
    if (norm < kNormalizeFloor) continue;  // row stays zero
    for (int j = 0; j < x.cols; ++j) n.value(i, j) = x(i, j) / norm;
  }
  n.needs_grad = wants_grad(a);
  return push(std::move(n));
}

int Tape::sum_all(int a) {
  check_id(a, "sum_all");
  // Copy the dims: pushing nodes may reallocate and invalidate val() refs.
  const int rows = val(a).rows;
  const int cols = val(a).cols;
  const int row_ones = constant(Matrix::full(1, rows, 1.0));
  const int col_ones = constant(Matrix::full(cols, 1, 1.0));
  return matmul(matmul(row_ones, a), col_ones);
}

int Tape::mean_all(int a) {
  check_id(a, "mean_all");
  const double count = static_cast<double>(val(a).rows) * val(a).cols;
  return scale(sum_all(a), 1.0 / count);
}

const Matrix& Tape::value(int id) const {
  check_id(id, "value");
  return nodes_[static_cast<std::size_t>(id)].value;
}

bool Tape::wants_grad(int id) const {
  check_id(id, "wants_grad");
  return nodes_[static_cast<std::size_t>(id)].needs_grad;
}

void Tape::backward(int loss) {
  check_id(loss, "backward");
  const Matrix& l = val(loss);
  if (l.rows != 1 || l.cols != 1) {
    throw ContractError("backward: loss must be 1x1, got " + l.shape_str());
  }

  std::vector<Matrix> grad(nodes_.size());
  grad[static_cast<std::size_t>(loss)] = Matrix::full(1, 1, 1.0);

  auto acc = [&](int id, int r, int c) -> Matrix& {
    Matrix& g = grad[static_cast<std::size_t>(id)];
    if (g.empty()) g = Matrix::zeros(r, c);
    return g;
  };

  for (int id = loss; id >= 0; --id) {
    TapeNode& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad) continue;
    Matrix& g = grad[static_cast<std::size_t>(id)];
    if (g.empty()) continue;  // not on a path from the loss

    switch (node.op) {
      case OpKind::Leaf: {
        Parameter* p = node.param;
        if (p != nullptr && p->trainable) {
          add_in_place(p->gradient, g);
          p->grad_accumulated = true;
        }
        break;
      }
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Matrix& a = val(node.in0);
        const Matrix& b = val(node.in1);
        if (wants_grad(node.in0)) {
          add_in_place(acc(node.in0, a.rows, a.cols), mixphm::matmul(g, mixphm::transpose(b)));
        }
        if (wants_grad(node.in1)) {
          add_in_place(acc(node.in1, b.rows, b.cols), mixphm::matmul(mixphm::transpose(a), g));
        }
        break;
      }
      case OpKind::Transpose: {
        const Matrix& a = val(node.in0);
        if (wants_grad(node.in0)) {
          add_in_place(acc(node.in0, a.rows, a.cols), mixphm::transpose(g));
        }
        break;
      }
      case OpKind::Add: {
        const Matrix& a = val(node.in0);
        const Matrix& b = val(node.in1);
        if (wants_grad(node.in0)) add_in_place(acc(node.in0, a.rows, a.cols), g);
        if (wants_grad(node.in1)) {
          Matrix& gb = acc(node.in1, b.rows, b.cols);
          if (b.same_shape(a)) {
            add_in_place(gb, g);
          } else {  // row broadcast: column sums
            for (int i = 0; i < g.rows; ++i)
              for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
          }
        }
        break;
      }
      case OpKind::Scale: {
        const Matrix& a = val(node.in0);
        if (wants_grad(node.in0)) {
          add_in_place(acc(node.in0, a.rows, a.cols), mixphm::scale(g, node.scalar));
        }
        break;
      }
      case OpKind::Hadamard: {
        const Matrix& a = val(node.in0);
        const Matrix& b = val(node.in1);
        if (wants_grad(node.in0)) {
          add_in_place(acc(node.in0, a.rows, a.cols), mixphm::hadamard(g, b));
        }
        if (wants_grad(node.in1)) {
          add_in_place(acc(node.in1, b.rows, b.cols), mixphm::hadamard(g, a));
        }
        break;
      }
      case OpKind::RowSoftmax: {
        if (!wants_grad(node.in0)) break;
        const Matrix& y = node.value;
        Matrix& ga = acc(node.in0, y.rows, y.cols);
        for (int i = 0; i < y.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
          for (int j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
        break;
      }
      case OpKind::Gelu: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
          ga.data[i] += g.data[i] * gelu_grad(x.data[i]);
        }
        break;
      }
      case OpKind::Relu: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
          if (x.data[i] > 0.0) ga.data[i] += g.data[i];
        }
        break;
      }
      case OpKind::Softplus: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
          ga.data[i] += g.data[i] * sigmoid_value(x.data[i]);
        }
        break;
      }
      case OpKind::LayerNorm: {
        const Matrix& x = val(node.in0);
        const Matrix& gn = val(node.in1);
        const int d = x.cols;
        const bool need_x = wants_grad(node.in0);
        const bool need_gain = wants_grad(node.in1);
        const bool need_bias = wants_grad(node.in2);
        Matrix* gx = need_x ? &acc(node.in0, x.rows, x.cols) : nullptr;
        Matrix* ggain = need_gain ? &acc(node.in1, 1, d) : nullptr;
        Matrix* gbias = need_bias ? &acc(node.in2, 1, d) : nullptr;
        std::vector<double> xhat(static_cast<std::size_t>(d));
        for (int i = 0; i < x.rows; ++i) {
          double mean = 0.0;
          for (int j = 0; j < d; ++j) mean += x(i, j);
          mean /= d;
          double var = 0.0;
          for (int j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
          }
          var /= d;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
          for (int j = 0; j < d; ++j) xhat[static_cast<std::size_t>(j)] = (x(i, j) - mean) * inv;
          if (need_gain || need_bias) {
            for (int j = 0; j < d; ++j) {
              if (ggain) (*ggain)(0, j) += g(i, j) * xhat[static_cast<std::size_t>(j)];
              if (gbias) (*gbias)(0, j) += g(i, j);
            }
          }
          if (need_x) {
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (int j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gn(0, j);
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[static_cast<std::size_t>(j)];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            for (int j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gn(0, j);
              (*gx)(i, j) +=
                  inv * (dxh - mean_dxhat - xhat[static_cast<std::size_t>(j)] * mean_dxhat_xhat);
            }
          }
        }
        break;
      }
      case OpKind::MeanOverRows: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        const double inv = 1.0 / x.rows;
        for (int i = 0; i < x.rows; ++i)
          for (int j = 0; j < x.cols; ++j) ga(i, j) += g(0, j) * inv;
        break;
      }
      case OpKind::ConcatRows: {
        const Matrix& a = val(node.in0);
        const Matrix& b = val(node.in1);
        if (wants_grad(node.in0)) {
          Matrix& ga = acc(node.in0, a.rows, a.cols);
          for (int i = 0; i < a.rows; ++i)
            for (int j = 0; j < a.cols; ++j) ga(i, j) += g(i, j);
        }
        if (wants_grad(node.in1)) {
          Matrix& gb = acc(node.in1, b.rows, b.cols);
          for (int i = 0; i < b.rows; ++i)
            for (int j = 0; j < b.cols; ++j) gb(i, j) += g(a.rows + i, j);
        }
        break;
      }
      case OpKind::Reshape: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        for (std::size_t i = 0; i < x.data.size(); ++i) ga.data[i] += g.data[i];
        break;
      }
      case OpKind::CrossEntropyWithLogits: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        const double gscale = g(0, 0);
        for (int i = 0; i < x.rows; ++i) {
          double mx = x(i, 0);
          for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
          double total = 0.0;
          for (int j = 0; j < x.cols; ++j) total += std::exp(x(i, j) - mx);
          for (int j = 0; j < x.cols; ++j) {
            double p = std::exp(x(i, j) - mx) / total;
            if (j == node.targets[static_cast<std::size_t>(i)]) p -= 1.0;
            ga(i, j) += gscale * p;
          }
        }
        break;
      }
      case OpKind::Kron: {
        const Matrix& s = val(node.in0);
        const Matrix& a = val(node.in1);
        const bool need_s = wants_grad(node.in0);
        const bool need_a = wants_grad(node.in1);
        Matrix* gs = need_s ? &acc(node.in0, s.rows, s.cols) : nullptr;
        Matrix* ga = need_a ? &acc(node.in1, a.rows, a.cols) : nullptr;
        for (int i = 0; i < s.rows; ++i) {
          for (int j = 0; j < s.cols; ++j) {
            const double sij = s(i, j);
            double block_dot = 0.0;
            for (int u = 0; u < a.rows; ++u) {
              for (int v = 0; v < a.cols; ++v) {
                const double guv = g(i * a.rows + u, j * a.cols + v);
                block_dot += guv * a(u, v);
                if (need_a) (*ga)(u, v) += sij * guv;
              }
            }
            if (need_s) (*gs)(i, j) += block_dot;
          }
        }
        break;
      }
      case OpKind::RowL2Normalize: {
        if (!wants_grad(node.in0)) break;
        const Matrix& x = val(node.in0);
        const Matrix& y = node.value;
        Matrix& ga = acc(node.in0, x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i) {
          double sq = 0.0;
          for (int j = 0; j < x.cols; ++j) sq += x(i, j) * x(i, j);
          const double norm = std::sqrt(sq);
          if (norm < kNormalizeFloor) continue;  // excluded rows carry no gradient
          double dot = 0.0;
          for (int j = 0; j < x.cols; ++j) dot += g(i, j) * y(i, j);
          for (int j = 0; j < x.cols; ++j) ga(i, j) += (g(i, j) - y(i, j) * dot) / norm;
        }
        break;
      }
    }

    // Interior gradients are dead once propagated; free them eagerly.
    if (node.op != OpKind::Leaf) {
      grad[static_cast<std::size_t>(id)] = Matrix();
    }
  }
}

}  // namespace mixphm
