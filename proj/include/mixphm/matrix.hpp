// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace mixphm {

class Rng;

// Dense row-major matrix of 64-bit floats, the universal value type for
// weights and activations. Everything runs in double so the 1e-4
// finite-difference tolerance used throughout the test suite is meaningful.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c);

  static Matrix zeros(int r, int c);
  static Matrix full(int r, int c, double v);
  static Matrix identity(int n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> values);

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
  std::string shape_str() const;
  void set_zero();
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_in_place(Matrix& target, const Matrix& delta);

bool all_finite(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool bit_equal(const Matrix& a, const Matrix& b);

Matrix random_normal(int r, int c, Rng& rng, double stddev = 1.0, double mean = 0.0);
Matrix random_uniform(int r, int c, Rng& rng, double lo = 0.0, double hi = 1.0);

// Scalar kernels shared by the tape ops.
double gelu_value(double x);     // exact Gaussian-CDF form, x * Phi(x)
double gelu_grad(double x);      // Phi(x) + x * phi(x)
double softplus_value(double x);
double sigmoid_value(double x);
double norm_cdf(double x);
double norm_pdf(double x);

}  // namespace mixphm
