// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "mixphm/checkpoint.hpp"
#include "mixphm/errors.hpp"

namespace mixphm {

std::vector<double> gram_upper(const Matrix& h) {
  const int n = h.rows;
  if (n < 2) {
    throw ReportError("gram_upper: need at least two rows, got " + std::to_string(n));
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (int c = 0; c < h.cols; ++c) dot += h(i, c) * h(j, c);
      out.push_back(dot);
    }
  }
  return out;
}

double pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.size() < 2) {
    throw ReportError("pearson: need two vectors of equal length >= 2");
  }
  const double n = static_cast<double>(u.size());
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= n;
  mv /= n;
  double suu = 0.0, svv = 0.0, suv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double du = u[i] - mu;
    const double dv = v[i] - mv;
    suu += du * du;
    svv += dv * dv;
    suv += du * dv;
  }
  if (suu < 1e-24 || svv < 1e-24) {
    throw ReportError("pearson: zero variance makes the correlation undefined");
  }
  return suv / std::sqrt(suu * svv);
}

double rsa(const Matrix& h1, const Matrix& h2) {
  if (h1.rows != h2.rows) {
    throw ReportError("rsa: row counts differ, " + h1.shape_str() + " vs " + h2.shape_str());
  }
  const auto g1 = gram_upper(h1);
  const auto g2 = gram_upper(h2);
  return pearson(g1, g2);
}

void ActivationDump::save(const std::string& path) const {
  std::vector<NamedTensor> tensors;
  tensors.reserve(records.size() * 3);
  for (const auto& rec : records) {
    const std::string prefix =
        "dump/sample" + std::to_string(rec.sample) + "/layer" + std::to_string(rec.layer) + "/";
    tensors.push_back({prefix + "H", rec.h});
    tensors.push_back({prefix + "Ha", rec.ha});
    tensors.push_back({prefix + "Htilde", rec.htilde});
  }
  save_tensors(path, tensors);
}

ActivationDump ActivationDump::load(const std::string& path) {
  const auto tensors = load_tensors(path);
  std::map<std::pair<int, int>, DumpRecord> records;
  for (const auto& rec : tensors) {
    int sample = 0, layer = 0;
    char field[16] = {0};
    if (std::sscanf(rec.name.c_str(), "dump/sample%d/layer%d/%15s", &sample, &layer, field) !=
        3) {
      throw IoError("activation dump: unrecognized record '" + rec.name + "' in " + path);
    }
    DumpRecord& slot = records[{sample, layer}];
    slot.sample = sample;
    slot.layer = layer;
    const std::string f(field);
    if (f == "H") {
      slot.h = rec.tensor;
    } else if (f == "Ha") {
      slot.ha = rec.tensor;
    } else if (f == "Htilde") {
      slot.htilde = rec.tensor;
    } else {
      throw IoError("activation dump: unknown field '" + f + "' in " + path);
    }
  }
  ActivationDump dump;
  for (auto& [key, rec] : records) {
    if (rec.h.empty() || rec.ha.empty() || rec.htilde.empty()) {
      throw IoError("activation dump: incomplete record for sample " +
                    std::to_string(key.first) + " layer " + std::to_string(key.second));
    }
    dump.records.push_back(std::move(rec));
  }
  return dump;
}

RSAReport rsa_profile(const ActivationDump& dump, int encoder_layers) {
  if (encoder_layers < 0) throw ReportError("rsa_profile: bad encoder layer count");
  std::map<int, std::vector<std::pair<double, double>>> by_layer;  // layer -> (rsa_h, rsa_ht)
  std::map<int, int> skipped;
  std::map<int, bool> seen;
  int max_sample = -1;

  for (const auto& rec : dump.records) {
    seen[rec.layer] = true;
    max_sample = std::max(max_sample, rec.sample);
    try {
      const double r_h = rsa(rec.ha, rec.h);
      const double r_ht = rsa(rec.ha, rec.htilde);
      by_layer[rec.layer].push_back({r_h, r_ht});
    } catch (const ReportError&) {
      skipped[rec.layer] += 1;  // degenerate sample: counted, not clamped
    }
  }
  if (seen.empty()) throw ReportError("rsa_profile: empty activation dump");

  RSAReport report;
  report.sample_count = max_sample + 1;
  for (const auto& [layer, flag] : seen) {
    (void)flag;
    RSALayerStat stat;
    stat.layer = layer;
    stat.encoder_side = layer <= encoder_layers;
    stat.n_skipped = skipped.count(layer) ? skipped[layer] : 0;
    const auto& vals = by_layer[layer];
    stat.n_used = static_cast<int>(vals.size());
    if (stat.n_used >= 2) {
      double m1 = 0.0, m2 = 0.0;
      for (const auto& [a, b] : vals) {
        m1 += a;
        m2 += b;
      }
      m1 /= stat.n_used;
      m2 /= stat.n_used;
      double v1 = 0.0, v2 = 0.0;
      for (const auto& [a, b] : vals) {
        v1 += (a - m1) * (a - m1);
        v2 += (b - m2) * (b - m2);
      }
      stat.rsa_ha_h_mean = m1;
      stat.rsa_ha_h_std = std::sqrt(v1 / stat.n_used);
      stat.rsa_ha_htilde_mean = m2;
      stat.rsa_ha_htilde_std = std::sqrt(v2 / stat.n_used);
    } else {
      stat.rsa_ha_h_mean = stat.rsa_ha_h_std = std::numeric_limits<double>::quiet_NaN();
      stat.rsa_ha_htilde_mean = stat.rsa_ha_htilde_std =
          std::numeric_limits<double>::quiet_NaN();
    }
    report.layers.push_back(stat);
  }
  return report;
}

double RSAReport::mean_rsa_ha_h() const {
  double total = 0.0;
  int count = 0;
  for (const auto& stat : layers) {
    if (stat.n_used >= 2) {
      total += stat.rsa_ha_h_mean;
      ++count;
    }
  }
  return count > 0 ? total / count : std::numeric_limits<double>::quiet_NaN();
}

double RSAReport::mean_rsa_ha_htilde() const {
  double total = 0.0;
  int count = 0;
  for (const auto& stat : layers) {
    if (stat.n_used >= 2) {
      total += stat.rsa_ha_htilde_mean;
      ++count;
    }
  }
  return count > 0 ? total / count : std::numeric_limits<double>::quiet_NaN();
}

bool RSAReport::usable() const {
  for (const auto& stat : layers) {
    if (stat.n_used >= 2) return true;
  }
  return false;
}

void write_rsa_csv(const std::string& path, const RSAReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("rsa report: cannot open " + path);
  f << "layer,side,rsa_ha_h_mean,rsa_ha_h_std,rsa_ha_htilde_mean,rsa_ha_htilde_std,"
       "n_used,n_skipped\n";
  f.precision(12);
  for (const auto& stat : report.layers) {
    f << stat.layer << ',' << (stat.encoder_side ? "encoder" : "decoder") << ','
      << stat.rsa_ha_h_mean << ',' << stat.rsa_ha_h_std << ',' << stat.rsa_ha_htilde_mean << ','
      << stat.rsa_ha_htilde_std << ',' << stat.n_used << ',' << stat.n_skipped << '\n';
  }
}

}  // namespace mixphm
