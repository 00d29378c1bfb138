// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mixphm/parameter.hpp"
#include "mixphm/rng.hpp"
#include "mixphm/tape.hpp"

namespace mixphm {

enum class OffdiagMode { Squared, Raw };
enum class CriticKind { Bilinear, Mlp };

OffdiagMode offdiag_mode_from_name(const std::string& name);
CriticKind critic_kind_from_name(const std::string& name);
const char* offdiag_mode_name(OffdiagMode mode);
const char* critic_kind_name(CriticKind kind);

struct RegConfig {
  double alpha = 0.2;
  OffdiagMode offdiag_mode = OffdiagMode::Squared;
  CriticKind critic_kind = CriticKind::Bilinear;
  int negatives_per_positive = 1;
  // Cut the gradient into the residual stream Z and the pooled task
  // representation h-bar so the regularizer shapes only the expert deltas.
  bool stop_gradient_targets = true;

  void validate() const;
};

// Statistics network for the JSD mutual-information estimate. One critic is
// kept per MixPHM layer; its parameters train during adaptation but are
// reported separately from the adapter count and dropped at merge time.
class Critic {
 public:
  CriticKind kind = CriticKind::Bilinear;
  int dim = 0;
  ParamPtr m;                  // bilinear: d x d
  ParamPtr w1, b1, w2, b2;     // mlp: (2d -> d), GELU, (d -> 1)

  static Critic build(CriticKind kind, int d, const std::string& name_prefix, Rng& rng);

  // Row-paired scores T(x_i, y_i) for x, y of shape N x d; returns N x 1.
  int scores(Tape& tape, int x, int y) const;
  std::vector<ParamPtr> parameters() const;
};

// Mean squared (or raw) off-diagonal entry of the cosine-similarity matrix
// between the rows of Z_a and Z. Rows with L2 norm below 1e-12 are treated
// as zero rows. A single-row input has no off-diagonal entries and scores 0.
int cosine_offdiag_penalty(Tape& tape, int za, int z, OffdiagMode mode);

// Negative-pair sample offsets in [1, n_b): each positive row of sample i is
// contrasted with sample (i + offset) % n_b.
std::vector<int> draw_negative_offsets(Rng& rng, int n_b, int negatives_per_positive);

// JSD mutual-information estimate between token rows h_a (N x d, row r
// belonging to sample row_sample[r]) and per-sample pooled vectors h_bar
// (N_b x d): mean over positives of -softplus(-T) minus mean over negatives
// of softplus(T).
int jsd_mi_estimate(Tape& tape, int ha, int hbar, const std::vector<int>& row_sample,
                    const Critic& critic, const std::vector<int>& neg_offsets);

struct LayerReps {
  int za = -1;  // stacked expert deltas for the step, N x d
  int z = -1;   // stacked residual inputs, N x d
  bool encoder_side = true;
};

struct RedundancyResult {
  int l_ra = -1;
  int cosine_mean = -1;
  int mi_mean = -1;
};

// L_Ra averaged over layers: cosine redundancy term minus the JSD MI term.
// Encoder-side layers pair with the encoder h_bar, decoder-side with the
// decoder one. Honors stop_gradient_targets by re-entering Z and h_bar as
// constants.
RedundancyResult redundancy_loss(Tape& tape, const std::vector<LayerReps>& layers,
                                 const std::vector<Critic>& critics, int hbar_enc, int hbar_dec,
                                 const std::vector<int>& row_sample,
                                 const std::vector<int>& neg_offsets, const RegConfig& config);

// Same, with one row-to-sample map per layer (encoder and decoder stacks
// carry different token counts).
RedundancyResult redundancy_loss_rows(Tape& tape, const std::vector<LayerReps>& layers,
                                      const std::vector<std::vector<int>>& row_samples,
                                      const std::vector<Critic>& critics, int hbar_enc,
                                      int hbar_dec, const std::vector<int>& neg_offsets,
                                      const RegConfig& config);

// Teacher-forced generative loss plus alpha times the regularizer.
int total_loss(Tape& tape, int logits, const std::vector<int>& targets, int l_ra, double alpha);
int total_loss_from_nll(Tape& tape, int nll, int l_ra, double alpha);

// N x 2d column concatenation built from the row primitives.
int concat_cols(Tape& tape, int a, int b);

}  // namespace mixphm
