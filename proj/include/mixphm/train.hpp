// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mixphm/model.hpp"
#include "mixphm/rsa.hpp"
#include "mixphm/tasks.hpp"

namespace mixphm {

struct PretrainConfig {
  BackboneConfig backbone;
  TaskSpec task;           // payload settings for the copy/reverse mixture
  int n_samples = 20000;
  int steps = 4000;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  int eval_samples = 512;
};

struct PretrainResult {
  double final_em = 0.0;
  // Loss on the first batch before and after training, a cheap learning
  // sanity signal.
  double first_batch_loss_before = 0.0;
  double first_batch_loss_after = 0.0;
  int steps_run = 0;
};

// Teacher-forced NLL training of every backbone parameter on the
// copy/reverse mixture. Throws TrainingError with the step index if the
// loss stops being finite.
PretrainResult pretrain(ToyBackbone& backbone, const PretrainConfig& cfg);

// Greedy decoding with the model's adapters in a deterministic mode.
std::vector<int> greedy_decode(AdaptedModel& model, const std::vector<int>& input,
                               RoutingKind infer_mode, int max_answer_len = 8);

// Exact-match over greedy decodes.
double evaluate(AdaptedModel& model, const std::vector<Sample>& samples,
                RoutingKind infer_mode = RoutingKind::RepAverage, int max_answer_len = 8);

// Exact-match of an arbitrary decoder, for oracle-style tests.
double evaluate_with_decoder(const std::vector<Sample>& samples,
                             const std::function<std::vector<int>(const Sample&)>& decode);

struct AdaptConfig {
  std::uint64_t seed = 42;
  int n_d = 64;
  int batch_size = 16;
  int max_epochs = 1000;
  int patience = 200;
  double lr = 5e-3;
  double weight_decay = 0.01;

  AdapterKind kind = AdapterKind::Mixphm;
  PHMConfig phm{.n = 2, .d = 32, .d_r = 8, .d_k = 2};
  int n_experts = 2;
  RoutingKind routing = RoutingKind::BatchRandom;
  Activation activation = Activation::Gelu;
  int pfeiffer_d_r = 4;
  RegConfig reg;  // alpha = 0 disables the regularizer and its critics

  TaskSpec task;            // kv-lookup by default
  std::uint64_t data_seed = 7;  // task pool / test set; fixed across run seeds
  int pool_size = 4096;
  int test_samples = 512;

  std::string out_dir;  // when set, run artifacts are written here
};

struct EpochRow {
  int epoch = 0;
  double train_nll = 0.0;
  double l_ra = 0.0;
  double dev_score = 0.0;
};

struct AdaptResult {
  double test_em = 0.0;
  double zero_shot_em = 0.0;
  double best_dev = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  bool stopped_early = false;
  long long adapter_params = 0;
  long long critic_params = 0;
  double wall_seconds = 0.0;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
  std::vector<EpochRow> metrics;
};

// The low-resource adaptation protocol: freeze the pretrained backbone,
// train only the inserted adapters (and critics) with AdamW, early-stop on
// dev exact-match, restore the best-on-dev weights, merge the experts and
// evaluate on the held-out test set.
AdaptResult adapt(const ToyBackbone& pretrained, const AdaptConfig& cfg);
AdaptResult adapt(const ToyBackbone& pretrained, const AdaptConfig& cfg,
                  const LowResourceSplit& split, const std::vector<Sample>& test_set);

// Teacher-forced activation capture for RSA profiling.
ActivationDump collect_dump(AdaptedModel& model, const std::vector<Sample>& samples,
                            RoutingKind infer_mode = RoutingKind::RepAverage);

void copy_parameter_values(const std::vector<ParamPtr>& from, const std::vector<ParamPtr>& to);

}  // namespace mixphm
