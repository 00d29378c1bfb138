// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixphm/backbone.hpp"
#include "mixphm/moe.hpp"
#include "mixphm/regularizer.hpp"

namespace mixphm {

enum class AdapterKind { None, Mixphm, Pfeiffer };

AdapterKind adapter_kind_from_name(const std::string& name);
const char* adapter_kind_name(AdapterKind kind);

struct ModelConfig {
  BackboneConfig backbone;
  AdapterKind kind = AdapterKind::None;
  // MixPHM settings (d is taken from the backbone width).
  PHMConfig phm{.n = 2, .d = 32, .d_r = 8, .d_k = 2};
  int n_experts = 2;
  RoutingKind routing = RoutingKind::BatchRandom;
  Activation activation = Activation::Gelu;
  // Plain bottleneck adapter width for the Pfeiffer-style baseline.
  int adapter_d_r = 4;

  void validate() const;
};

// A backbone with one adapter inserted after each of the 2L feed-forward
// sublayers. Building with any adapter kind freezes the backbone.
class AdaptedModel {
 public:
  ModelConfig cfg;
  ToyBackbone backbone;
  std::optional<MixPHMStack> stack;     // kind == Mixphm
  std::vector<AdapterWeights> plain;    // kind == Pfeiffer, 2L adapters

  static AdaptedModel build(const ModelConfig& cfg, std::uint64_t seed);

  int layer_count() const { return 2 * cfg.backbone.L; }
  std::vector<ParamPtr> adapter_parameters() const;
  std::vector<ParamPtr> all_parameters() const;

  void merge_for_inference();
  bool merged() const;

  // Tensor file plus a JSON sidecar (<path>.json) carrying the structural
  // configuration and the merged flag.
  void save(const std::string& path) const;
  static AdaptedModel load(const std::string& path);

 private:
  AdaptedModel(const ModelConfig& cfg, std::uint64_t seed);
};

// One forward pass worth of adapter state: routing assignments plus the
// per-layer tape caches. Training mode draws from the stack's rng streams;
// inference mode uses the deterministic kinds only.
class ModelStep {
 public:
  static ModelStep training(AdaptedModel& model, Tape& tape,
                            const std::vector<int>& enc_lengths,
                            const std::vector<int>& dec_lengths);
  static ModelStep inference(AdaptedModel& model, Tape& tape, RoutingKind mode);

  // Applies the adapter at 1-based layer_index to stream h; identity for
  // kind None.
  ResidualForward apply_adapter(StepContext& st, int layer_index, int h, int sample_index);

  AdaptedModel& model;
  Tape& tape;

 private:
  ModelStep(AdaptedModel& m, Tape& t) : model(m), tape(t) {}
  MixPHMStepState stack_state_;
  std::vector<Assignment> assignments_;
};

}  // namespace mixphm
