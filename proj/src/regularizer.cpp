// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/regularizer.hpp"

#include <cmath>

#include "mixphm/errors.hpp"

namespace mixphm {

OffdiagMode offdiag_mode_from_name(const std::string& name) {
  if (name == "squared") return OffdiagMode::Squared;
  if (name == "raw") return OffdiagMode::Raw;
  throw ConfigError("unknown off-diagonal mode '" + name + "'");
}

CriticKind critic_kind_from_name(const std::string& name) {
  if (name == "bilinear") return CriticKind::Bilinear;
  if (name == "mlp") return CriticKind::Mlp;
  throw ConfigError("unknown critic kind '" + name + "'");
}

const char* offdiag_mode_name(OffdiagMode mode) {
  return mode == OffdiagMode::Squared ? "squared" : "raw";
}

const char* critic_kind_name(CriticKind kind) {
  return kind == CriticKind::Bilinear ? "bilinear" : "mlp";
}

void RegConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("RegConfig: alpha must be >= 0");
  if (negatives_per_positive < 1) {
    throw ConfigError("RegConfig: negatives_per_positive must be >= 1");
  }
}

Critic Critic::build(CriticKind kind, int d, const std::string& name_prefix, Rng& rng) {
  Critic c;
  c.kind = kind;
  c.dim = d;
  if (kind == CriticKind::Bilinear) {
    c.m = make_param(name_prefix + "/M", random_normal(d, d, rng, 1.0 / d));
  } else {
    c.w1 = make_param(name_prefix + "/W1",
                      random_normal(2 * d, d, rng, 1.0 / std::sqrt(2.0 * d)));
    c.b1 = make_param(name_prefix + "/b1", Matrix::zeros(1, d));
    c.w2 = make_param(name_prefix + "/W2", random_normal(d, 1, rng, 1.0 / std::sqrt(d)));
    c.b2 = make_param(name_prefix + "/b2", Matrix::zeros(1, 1));
  }
  return c;
}

int concat_cols(Tape& tape, int a, int b) {
  return tape.transpose(tape.concat_rows(tape.transpose(a), tape.transpose(b)));
}

int Critic::scores(Tape& tape, int x, int y) const {
  const Matrix& xv = tape.value(x);
  if (xv.cols != dim) {
    throw DimensionError("critic: input width " + std::to_string(xv.cols) + ", expected " +
                         std::to_string(dim));
  }
  if (kind == CriticKind::Bilinear) {
    const int xm = tape.matmul(x, tape.leaf(m));
    const int prod = tape.hadamard(xm, y);
    const int ones = tape.constant(Matrix::full(dim, 1, 1.0));
    return tape.matmul(prod, ones);
  }
  const int xy = concat_cols(tape, x, y);
  const int hidden = tape.gelu(tape.add(tape.matmul(xy, tape.leaf(w1)), tape.leaf(b1)));
  return tape.add(tape.matmul(hidden, tape.leaf(w2)), tape.leaf(b2));
}

std::vector<ParamPtr> Critic::parameters() const {
  if (kind == CriticKind::Bilinear) return {m};
  return {w1, b1, w2, b2};
}

int cosine_offdiag_penalty(Tape& tape, int za, int z, OffdiagMode mode) {
  const Matrix& a = tape.value(za);
  const Matrix& b = tape.value(z);
  if (!a.same_shape(b)) {
    throw DimensionError("cosine_offdiag_penalty: " + a.shape_str() + " vs " + b.shape_str());
  }
  const int n = a.rows;
  if (n == 1) return tape.constant(Matrix::zeros(1, 1));

  const int za_hat = tape.row_l2_normalize(za);
  const int z_hat = tape.row_l2_normalize(z);
  const int cosine = tape.matmul(za_hat, tape.transpose(z_hat));
  Matrix offdiag_mask = Matrix::full(n, n, 1.0);
  for (int i = 0; i < n; ++i) offdiag_mask(i, i) = 0.0;
  int off = tape.hadamard(cosine, tape.constant(std::move(offdiag_mask)));
  if (mode == OffdiagMode::Squared) off = tape.hadamard(off, off);
  return tape.scale(tape.sum_all(off), 1.0 / (static_cast<double>(n) * (n - 1)));
}

std::vector<int> draw_negative_offsets(Rng& rng, int n_b, int negatives_per_positive) {
  if (n_b < 2) {
    throw ProtocolError("jsd_mi_estimate: need at least two samples to draw negatives");
  }
  std::vector<int> offsets;
  offsets.reserve(static_cast<std::size_t>(negatives_per_positive));
  for (int k = 0; k < negatives_per_positive; ++k) {
    offsets.push_back(1 + rng.next_int(n_b - 1));
  }
  return offsets;
}

int jsd_mi_estimate(Tape& tape, int ha, int hbar, const std::vector<int>& row_sample,
                    const Critic& critic, const std::vector<int>& neg_offsets) {
  const int n_rows = tape.value(ha).rows;
  const int n_b = tape.value(hbar).rows;
  if (n_b < 2) {
    throw ProtocolError("jsd_mi_estimate: need at least two samples to draw negatives");
  }
  if (static_cast<int>(row_sample.size()) != n_rows) {
    throw DimensionError("jsd_mi_estimate: row_sample covers " +
                         std::to_string(row_sample.size()) + " rows, h_a has " +
                         std::to_string(n_rows));
  }
  if (neg_offsets.empty()) {
    throw ProtocolError("jsd_mi_estimate: need at least one negative offset");
  }
  for (int s : row_sample) {
    if (s < 0 || s >= n_b) {
      throw ProtocolError("jsd_mi_estimate: row sample index " + std::to_string(s) +
                          " outside batch of " + std::to_string(n_b));
    }
  }
  for (int o : neg_offsets) {
    if (o < 1 || o >= n_b) {
      throw ProtocolError("jsd_mi_estimate: negative offset must lie in [1, n_b)");
    }
  }

  auto selector = [&](int offset) {
    Matrix sel(n_rows, n_b);
    for (int r = 0; r < n_rows; ++r) {
      sel(r, (row_sample[static_cast<std::size_t>(r)] + offset) % n_b) = 1.0;
    }
    return sel;
  };

  const int y_pos = tape.matmul(tape.constant(selector(0)), hbar);
  const int s_pos = critic.scores(tape, ha, y_pos);

  int x_neg = ha;
  int neg_sel = tape.constant(selector(neg_offsets[0]));
  for (std::size_t k = 1; k < neg_offsets.size(); ++k) {
    x_neg = tape.concat_rows(x_neg, ha);
    neg_sel = tape.concat_rows(neg_sel, tape.constant(selector(neg_offsets[k])));
  }
  const int y_neg = tape.matmul(neg_sel, hbar);
  const int s_neg = critic.scores(tape, x_neg, y_neg);

  const int sp_pos = tape.mean_over_rows(tape.softplus(tape.scale(s_pos, -1.0)));
  const int sp_neg = tape.mean_over_rows(tape.softplus(s_neg));
  return tape.scale(tape.add(sp_pos, sp_neg), -1.0);
}

RedundancyResult redundancy_loss(Tape& tape, const std::vector<LayerReps>& layers,
                                 const std::vector<Critic>& critics, int hbar_enc, int hbar_dec,
                                 const std::vector<int>& row_sample,
                                 const std::vector<int>& neg_offsets, const RegConfig& config) {
  return redundancy_loss_rows(tape, layers,
                              std::vector<std::vector<int>>(layers.size(), row_sample), critics,
                              hbar_enc, hbar_dec, neg_offsets, config);
}

RedundancyResult redundancy_loss_rows(Tape& tape, const std::vector<LayerReps>& layers,
                                      const std::vector<std::vector<int>>& row_samples,
                                      const std::vector<Critic>& critics, int hbar_enc,
                                      int hbar_dec, const std::vector<int>& neg_offsets,
                                      const RegConfig& config) {
  config.validate();
  if (layers.empty()) throw ProtocolError("redundancy_loss: no layer representations");
  if (critics.size() != layers.size() || row_samples.size() != layers.size()) {
    throw ProtocolError("redundancy_loss: " + std::to_string(critics.size()) + " critics and " +
                        std::to_string(row_samples.size()) + " row maps for " +
                        std::to_string(layers.size()) + " layers");
  }

  auto maybe_stop = [&](int node) {
    return config.stop_gradient_targets ? tape.constant(tape.value(node)) : node;
  };
  const int enc_target = maybe_stop(hbar_enc);
  const int dec_target = maybe_stop(hbar_dec);

  int cos_sum = -1;
  int mi_sum = -1;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerReps& reps = layers[l];
    const int z_target = maybe_stop(reps.z);
    const int cos = cosine_offdiag_penalty(tape, reps.za, z_target, config.offdiag_mode);
    const int mi = jsd_mi_estimate(tape, reps.za,
                                   reps.encoder_side ? enc_target : dec_target, row_samples[l],
                                   critics[l], neg_offsets);
    cos_sum = cos_sum < 0 ? cos : tape.add(cos_sum, cos);
    mi_sum = mi_sum < 0 ? mi : tape.add(mi_sum, mi);
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  RedundancyResult result;
  result.cosine_mean = tape.scale(cos_sum, inv);
  result.mi_mean = tape.scale(mi_sum, inv);
  result.l_ra = tape.sub(result.cosine_mean, result.mi_mean);
  return result;
}

int total_loss(Tape& tape, int logits, const std::vector<int>& targets, int l_ra, double alpha) {
  if (targets.empty()) throw ProtocolError("total_loss: empty target sequence");
  const int nll = tape.cross_entropy_with_logits(logits, targets);
  return total_loss_from_nll(tape, nll, l_ra, alpha);
}

int total_loss_from_nll(Tape& tape, int nll, int l_ra, double alpha) {
  if (alpha == 0.0) return nll;
  if (l_ra < 0) throw ContractError("total_loss: alpha > 0 requires a regularizer node");
  return tape.add(nll, tape.scale(l_ra, alpha));
}

}  // namespace mixphm
