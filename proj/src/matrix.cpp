// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/matrix.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "mixphm/errors.hpp"
#include "mixphm/rng.hpp"

namespace mixphm {

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
  if (r <= 0 || c <= 0) {
    throw DimensionError("Matrix: dimensions must be positive, got " + std::to_string(r) + "x" +
                         std::to_string(c));
  }
  data.assign(static_cast<std::size_t>(r) * c, 0.0);
}

Matrix Matrix::zeros(int r, int c) { return Matrix(r, c); }

Matrix Matrix::full(int r, int c, double v) {
  Matrix m(r, c);
  for (auto& x : m.data) x = v;
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> values) {
  const int r = static_cast<int>(values.size());
  const int c = r > 0 ? static_cast<int>(values.begin()->size()) : 0;
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : values) {
    if (static_cast<int>(row.size()) != c) {
      throw DimensionError("Matrix::from_rows: ragged rows");
    }
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void Matrix::set_zero() { std::memset(data.data(), 0, data.size() * sizeof(double)); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: " + a.shape_str() + " @ " + b.shape_str());
  }
  Matrix c(a.rows, b.cols);
  const double* ap = a.data.data();
  const double* bp = b.data.data();
  double* cp = c.data.data();
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = ap[static_cast<std::size_t>(i) * a.cols + k];
      if (aik == 0.0) continue;  // one-hot and selector operands are mostly zero
      const double* brow = bp + static_cast<std::size_t>(k) * b.cols;
      double* crow = cp + static_cast<std::size_t>(i) * b.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add: " + a.shape_str() + " + " + b.shape_str());
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("sub: " + a.shape_str() + " - " + b.shape_str());
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("elementwise-multiply: " + a.shape_str() + " * " + b.shape_str());
  }
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (auto& x : c.data) x *= s;
  return c;
}

void add_in_place(Matrix& target, const Matrix& delta) {
  if (!target.same_shape(delta)) {
    throw DimensionError("add_in_place: " + target.shape_str() + " += " + delta.shape_str());
  }
  for (std::size_t i = 0; i < target.data.size(); ++i) target.data[i] += delta.data[i];
}

bool all_finite(const Matrix& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Matrix random_normal(int r, int c, Rng& rng, double stddev, double mean) {
  Matrix m(r, c);
  for (auto& x : m.data) x = rng.next_normal(mean, stddev);
  return m;
}

Matrix random_uniform(int r, int c, Rng& rng, double lo, double hi) {
  Matrix m(r, c);
  for (auto& x : m.data) x = lo + (hi - lo) * rng.next_double();
  return m;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double gelu_value(double x) { return x * norm_cdf(x); }

double gelu_grad(double x) { return norm_cdf(x) + x * norm_pdf(x); }

double softplus_value(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace mixphm
