// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixphm/phm.hpp"
#include "mixphm/rng.hpp"

namespace mixphm {

// Expert selection policy. The random kinds draw from the layer's own rng
// stream during training; Merged is the deterministic inference mode after
// weight aggregation; RepAverage (mean of all expert outputs) is valid in
// both modes.
enum class RoutingKind { BatchRandom, TokenRandom, SentenceRandom, RepAverage, Merged };

const char* routing_name(RoutingKind k);
RoutingKind routing_from_name(const std::string& name);

// Up-projection factors are the only parameters unique to an expert; the
// rule tensor S and the down-projection factors are referenced from shared
// storage.
struct ExpertWeights {
  std::vector<LowRankFactorPair> up;  // n pairs: T (d_r/n x d_k), U (d/n x d_k)
};

struct MixPHMLayer {
  int index = 1;  // 1-based position in [1, 2L]; encoder side is [1, L]
  PHMConfig config;
  int n_experts = 1;
  RoutingKind routing = RoutingKind::BatchRandom;
  Activation activation = Activation::Gelu;
  ParamPtr s_global;                   // n x n^2; the single shared rule tensor
  std::vector<LowRankFactorPair> down;  // n pairs shared by all experts here
  std::vector<ExpertWeights> experts;
  std::optional<ExpertWeights> merged;  // derived, non-trainable
  bool merged_mode = false;
  Rng rng{0};
};

// A batch routing decision. For TokenRandom the per-token indices are kept
// ragged per sample so variable-length batches route deterministically.
struct Assignment {
  RoutingKind kind = RoutingKind::BatchRandom;
  int batch_expert = -1;
  std::vector<int> per_sample;
  std::vector<std::vector<int>> per_token;
};

Assignment route(const std::vector<int>& tokens_per_sample, RoutingKind kind, int n_experts,
                 Rng& rng, bool training);
Assignment route(int n_b, int n_t, RoutingKind kind, int n_experts, Rng& rng, bool training);

// Averages the up-projection factor pairs across experts into the layer's
// merged expert and switches the layer to Merged routing. Idempotent. The
// shared rule tensor and down factors are untouched.
const ExpertWeights& merge_experts(MixPHMLayer& layer);

// Per-step tape caches: leaves and realized projection nodes are created
// once per step and reused across samples so gradients still reach the
// factors but the Kronecker expansion is not rebuilt per sample.
struct MixPHMStepState {
  struct PerLayer {
    std::vector<int> s_nodes;
    int w_dn = -1;
    std::vector<int> w_up;
    int merged_up = -1;
  };
  Tape* tape = nullptr;
  std::vector<PerLayer> layers;
};

// Routed forward through one MixPHM for the rows of one sample.
ResidualForward mixphm_forward(Tape& tape, int h, const MixPHMLayer& layer,
                               const Assignment& assignment, MixPHMStepState::PerLayer& cache,
                               int sample_index);

// The full set of MixPHMs inserted into a model: 2L layers sharing one S.
class MixPHMStack {
 public:
  PHMConfig config;
  int n_experts = 1;
  RoutingKind routing = RoutingKind::BatchRandom;
  Activation activation = Activation::Gelu;
  ParamPtr s_global;
  std::vector<MixPHMLayer> layers;

  static MixPHMStack build(int n_layers, const PHMConfig& config, int n_experts,
                           RoutingKind routing, Activation activation, std::uint64_t seed);

  std::vector<ParamPtr> parameters() const;
  MixPHMStepState begin_step(Tape& tape) const;
  // One routing draw per layer for the coming step; training gates the
  // random kinds.
  std::vector<Assignment> route_step(const std::vector<int>& tokens_per_sample, bool training);
  ResidualForward forward_layer(MixPHMStepState& step, int layer_pos, int h,
                                const Assignment& assignment, int sample_index) const;
  void merge_all();
  bool merged() const;
  void set_routing(RoutingKind kind);
};

// Closed-form trainable-parameter count for the full MixPHM configuration:
// 2 L d_k (d + d_r) (N_e + 1) + n^3.
long long mixphm_param_count(int L, int n_experts, int d, int d_r, int d_k, int n);
// Dense mixture-of-adapters baseline: 4 L N_e d d_r.
long long dense_moe_param_count(int L, int n_experts, int d, int d_r);

enum class BaselineMethod { Houlsby, Pfeiffer, Compacter, Lora, Adamix, MixphmVariant };

BaselineMethod baseline_method_from_name(const std::string& name);

struct BaselineDims {
  int L = 12;
  int d = 768;
  int d_ff = 3072;
  int d_r = 64;
  int n = 4;
  int d_k = 8;
  int r = 4;       // LoRA rank
  int n_experts = 4;
};

// Ablation switches for the MixphmVariant method: with all of them on and
// up-projections unshared this reproduces mixphm_param_count.
struct MixphmVariantFlags {
  bool lowrank = true;   // factorize each Kronecker block into T U^T
  bool share_s = true;   // one rule tensor for the whole model
  bool share_dn = true;  // one down set per layer
  bool share_up = false;
};

long long baseline_param_count(BaselineMethod method, const BaselineDims& dims,
                               const MixphmVariantFlags& flags = {});

}  // namespace mixphm
