// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "mixphm/matrix.hpp"

namespace mixphm {

// Strictly-upper-triangular entries of H H^T in row-major order. The Gram
// diagonal carries only row norms and is excluded.
std::vector<double> gram_upper(const Matrix& h);

// Pearson correlation; throws ReportError when either vector has (near)
// zero variance, so degenerate samples can be counted and skipped.
double pearson(std::span<const double> u, std::span<const double> v);

// Representational similarity: pearson(gram_upper(h1), gram_upper(h2)).
// Row counts must agree; feature widths may differ.
double rsa(const Matrix& h1, const Matrix& h2);

// Per sample and per layer: residual inputs H, adapter deltas Ha, and the
// final encoder/decoder output Htilde of the sample's side.
struct DumpRecord {
  int sample = 0;
  int layer = 0;  // 1-based, encoder side is [1, L]
  Matrix h;
  Matrix ha;
  Matrix htilde;
};

struct ActivationDump {
  std::vector<DumpRecord> records;

  void save(const std::string& path) const;
  static ActivationDump load(const std::string& path);
};

struct RSALayerStat {
  int layer = 0;
  bool encoder_side = true;
  double rsa_ha_h_mean = 0.0;
  double rsa_ha_h_std = 0.0;
  double rsa_ha_htilde_mean = 0.0;
  double rsa_ha_htilde_std = 0.0;
  int n_used = 0;
  int n_skipped = 0;
};

struct RSAReport {
  std::vector<RSALayerStat> layers;
  int sample_count = 0;

  // Overall means across layers with at least two usable samples.
  double mean_rsa_ha_h() const;
  double mean_rsa_ha_htilde() const;
  bool usable() const;
};

// Mean/std of RSA(h_a, h) and RSA(h_a, h~) per layer across samples.
// Samples whose Gram vectors are degenerate (zero variance, e.g. all-zero
// adapter deltas) are counted in n_skipped; layers with fewer than two
// usable samples report NaN statistics.
RSAReport rsa_profile(const ActivationDump& dump, int encoder_layers);

void write_rsa_csv(const std::string& path, const RSAReport& report);

}  // namespace mixphm
