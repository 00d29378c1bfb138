// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mixphm/checkpoint.hpp"
#include "mixphm/errors.hpp"
#include "mixphm/optim.hpp"

namespace mixphm {

using nlohmann::json;

namespace {

std::vector<int> decoder_input(const Sample& s) {
  std::vector<int> in = {vocab::kBos};
  in.insert(in.end(), s.answer.begin(), s.answer.end());
  return in;
}

std::vector<int> decoder_targets(const Sample& s) {
  std::vector<int> t = s.answer;
  t.push_back(vocab::kEos);
  return t;
}

int argmax_row(const Matrix& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols; ++c) {
    if (m(row, c) > m(row, best)) best = c;
  }
  return best;
}

std::vector<int> shuffled_indices(int count, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = count - 1; i > 0; --i) {
    const int j = rng.next_int(i + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

}  // namespace

void copy_parameter_values(const std::vector<ParamPtr>& from, const std::vector<ParamPtr>& to) {
  if (from.size() != to.size()) {
    throw ContractError("copy_parameter_values: registry sizes differ");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]->value.same_shape(to[i]->value)) {
      throw ContractError("copy_parameter_values: shape mismatch at '" + from[i]->name + "'");
    }
    to[i]->value = from[i]->value;
  }
}

PretrainResult pretrain(ToyBackbone& backbone, const PretrainConfig& cfg) {
  if (cfg.steps < 0 || cfg.batch_size < 1) {
    throw ConfigError("pretrain: bad step or batch configuration");
  }
  const auto pool = generate_pretraining_mixture(cfg.task, cfg.n_samples, cfg.seed);
  Rng batch_rng(derive_seed(cfg.seed, "pretrain-batches"));
  AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  const auto params = backbone.parameters();

  // NLL of one batch, mean per sample; optionally takes the training step.
  auto run_batch = [&](const std::vector<const Sample*>& batch, bool train) {
    Tape tape;
    StepContext st(tape);
    int nll = -1;
    for (const Sample* s : batch) {
      const int enc = backbone.encode(st, s->input, nullptr);
      const int dec = backbone.decode(st, decoder_input(*s), enc, nullptr);
      const int logits = backbone.lm_logits(st, dec);
      const int ce = tape.cross_entropy_with_logits(logits, decoder_targets(*s));
      nll = nll < 0 ? ce : tape.add(nll, ce);
    }
    const int loss = tape.scale(nll, 1.0 / static_cast<double>(batch.size()));
    const double value = tape.value(loss)(0, 0);
    if (train) {
      tape.backward(loss);
      opt.step(params);
      zero_gradients(params);
    }
    return value;
  };

  auto draw_batch = [&]() {
    std::vector<const Sample*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(&pool[static_cast<std::size_t>(batch_rng.next_int(static_cast<int>(pool.size())))]);
    }
    return batch;
  };

  PretrainResult result;
  const auto first_batch = draw_batch();
  result.first_batch_loss_before = run_batch(first_batch, false);

  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = step == 0 ? first_batch : draw_batch();
    const double loss = run_batch(batch, true);
    if (!std::isfinite(loss)) {
      throw TrainingError("pretrain: loss diverged at step " + std::to_string(step));
    }
    result.steps_run = step + 1;
  }
  result.first_batch_loss_after = run_batch(first_batch, false);

  // Held-out slice from an independent stream.
  const auto eval_set =
      generate_pretraining_mixture(cfg.task, cfg.eval_samples, derive_seed(cfg.seed, "pretrain-eval"));
  ModelConfig mc;
  mc.backbone = backbone.cfg;
  mc.kind = AdapterKind::None;
  AdaptedModel eval_model = AdaptedModel::build(mc, 0);
  copy_parameter_values(backbone.parameters(), eval_model.backbone.parameters());
  result.final_em = evaluate(eval_model, eval_set, RoutingKind::RepAverage);
  return result;
}

std::vector<int> greedy_decode(AdaptedModel& model, const std::vector<int>& input,
                               RoutingKind infer_mode, int max_answer_len) {
  Tape tape;
  StepContext st(tape);
  ModelStep step = ModelStep::inference(model, tape, infer_mode);
  AdapterHook hook = [&](StepContext& ctx, int h, int layer) {
    return step.apply_adapter(ctx, layer, h, 0).out;
  };
  const int enc = model.backbone.encode(st, input, hook);

  std::vector<int> decoded;
  std::vector<int> dec_tokens = {vocab::kBos};
  for (int t = 0; t <= max_answer_len; ++t) {
    const int dec = model.backbone.decode(st, dec_tokens, enc, hook);
    const int logits = model.backbone.lm_logits(st, dec);
    const int tok = argmax_row(tape.value(logits), static_cast<int>(dec_tokens.size()) - 1);
    if (tok == vocab::kEos) break;
    decoded.push_back(tok);
    dec_tokens.push_back(tok);
    if (static_cast<int>(dec_tokens.size()) >= model.cfg.backbone.max_len) break;
  }
  return decoded;
}

double evaluate(AdaptedModel& model, const std::vector<Sample>& samples, RoutingKind infer_mode,
                int max_answer_len) {
  return evaluate_with_decoder(samples, [&](const Sample& s) {
    return greedy_decode(model, s.input, infer_mode, max_answer_len);
  });
}

double evaluate_with_decoder(const std::vector<Sample>& samples,
                             const std::function<std::vector<int>(const Sample&)>& decode) {
  if (samples.empty()) throw ProtocolError("evaluate: empty sample list");
  int hits = 0;
  for (const auto& s : samples) {
    if (decode(s) == s.answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace {

struct StepLog {
  double nll = 0.0;
  double cosine = 0.0;
  double mi = 0.0;
  double l_ra = 0.0;
  double total = 0.0;
};

struct Trainer {
  AdaptedModel& model;
  std::vector<Critic>& critics;
  const RegConfig& reg;
  AdamW& opt;
  const std::vector<ParamPtr>& trainable;
  Rng& neg_rng;

  StepLog step(const std::vector<const Sample*>& batch) {
    Tape tape;
    StepContext st(tape);
    const int n_b = static_cast<int>(batch.size());
    std::vector<int> enc_lengths, dec_lengths;
    for (const Sample* s : batch) {
      enc_lengths.push_back(static_cast<int>(s->input.size()));
      dec_lengths.push_back(static_cast<int>(s->answer.size()) + 1);
    }
    ModelStep mstep = ModelStep::training(model, tape, enc_lengths, dec_lengths);

    const int n_layers = model.layer_count();
    std::vector<std::vector<int>> h_nodes(static_cast<std::size_t>(n_layers));
    std::vector<std::vector<int>> delta_nodes(static_cast<std::size_t>(n_layers));
    std::vector<int> enc_final, dec_final;

    int nll = -1;
    for (int s_idx = 0; s_idx < n_b; ++s_idx) {
      const Sample& sample = *batch[static_cast<std::size_t>(s_idx)];
      AdapterHook hook = [&](StepContext& ctx, int h, int layer) {
        const auto fwd = mstep.apply_adapter(ctx, layer, h, s_idx);
        if (fwd.delta >= 0) {
          h_nodes[static_cast<std::size_t>(layer - 1)].push_back(h);
          delta_nodes[static_cast<std::size_t>(layer - 1)].push_back(fwd.delta);
        }
        return fwd.out;
      };
      const int enc = model.backbone.encode(st, sample.input, hook);
      const int dec = model.backbone.decode(st, decoder_input(sample), enc, hook);
      const int logits = model.backbone.lm_logits(st, dec);
      const int ce = tape.cross_entropy_with_logits(logits, decoder_targets(sample));
      nll = nll < 0 ? ce : tape.add(nll, ce);
      enc_final.push_back(enc);
      dec_final.push_back(dec);
    }

    StepLog log;
    int loss = nll;
    int l_ra = -1, cos_node = -1, mi_node = -1;
    if (reg.alpha > 0.0) {
      std::vector<LayerReps> reps;
      std::vector<std::vector<int>> row_samples;
      const int half = n_layers / 2;
      for (int l = 0; l < n_layers; ++l) {
        LayerReps r;
        r.za = tape.concat_rows(delta_nodes[static_cast<std::size_t>(l)]);
        r.z = tape.concat_rows(h_nodes[static_cast<std::size_t>(l)]);
        r.encoder_side = l < half;
        reps.push_back(r);
        std::vector<int> rows;
        const auto& lens = l < half ? enc_lengths : dec_lengths;
        for (int s_idx = 0; s_idx < n_b; ++s_idx) {
          for (int t = 0; t < lens[static_cast<std::size_t>(s_idx)]; ++t) rows.push_back(s_idx);
        }
        row_samples.push_back(std::move(rows));
      }
      std::vector<int> enc_means, dec_means;
      for (int s_idx = 0; s_idx < n_b; ++s_idx) {
        enc_means.push_back(tape.mean_over_rows(enc_final[static_cast<std::size_t>(s_idx)]));
        dec_means.push_back(tape.mean_over_rows(dec_final[static_cast<std::size_t>(s_idx)]));
      }
      const int hbar_enc = tape.concat_rows(enc_means);
      const int hbar_dec = tape.concat_rows(dec_means);
      const auto offsets = draw_negative_offsets(neg_rng, n_b, reg.negatives_per_positive);
      const auto result = redundancy_loss_rows(tape, reps, row_samples, critics, hbar_enc,
                                               hbar_dec, offsets, reg);
      l_ra = result.l_ra;
      cos_node = result.cosine_mean;
      mi_node = result.mi_mean;
      loss = total_loss_from_nll(tape, nll, l_ra, reg.alpha);
    }

    log.nll = tape.value(nll)(0, 0);
    if (l_ra >= 0) {
      log.cosine = tape.value(cos_node)(0, 0);
      log.mi = tape.value(mi_node)(0, 0);
      log.l_ra = tape.value(l_ra)(0, 0);
    }
    log.total = tape.value(loss)(0, 0);

    tape.backward(loss);
    opt.step(trainable);
    zero_gradients(trainable);
    return log;
  }
};

void write_adapt_artifacts(const std::string& out_dir, const AdaptConfig& cfg,
                           const AdaptResult& result, const std::vector<StepLog>& steps,
                           AdaptedModel& model, const std::vector<ParamPtr>& training_state) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  json config;
  config["seed"] = cfg.seed;
  config["n_d"] = cfg.n_d;
  config["batch_size"] = cfg.batch_size;
  config["max_epochs"] = cfg.max_epochs;
  config["patience"] = cfg.patience;
  config["lr"] = cfg.lr;
  config["weight_decay"] = cfg.weight_decay;
  config["adapter"] = adapter_kind_name(cfg.kind);
  config["phm"] = {{"n", cfg.phm.n}, {"d", cfg.phm.d}, {"d_r", cfg.phm.d_r}, {"d_k", cfg.phm.d_k}};
  config["n_experts"] = cfg.n_experts;
  config["routing"] = routing_name(cfg.routing);
  config["pfeiffer_d_r"] = cfg.pfeiffer_d_r;
  config["reg"] = {{"alpha", cfg.reg.alpha},
                   {"offdiag_mode", offdiag_mode_name(cfg.reg.offdiag_mode)},
                   {"critic", critic_kind_name(cfg.reg.critic_kind)},
                   {"negatives_per_positive", cfg.reg.negatives_per_positive},
                   {"stop_gradient_targets", cfg.reg.stop_gradient_targets}};
  config["task"] = {{"kind", task_name(cfg.task.kind)},
                    {"kv_pairs", cfg.task.kv_pairs},
                    {"min_payload", cfg.task.min_payload},
                    {"max_payload", cfg.task.max_payload}};
  config["data_seed"] = cfg.data_seed;
  config["pool_size"] = cfg.pool_size;
  config["test_samples"] = cfg.test_samples;
  std::ofstream cf(out_dir + "/config.json", std::ios::trunc);
  cf << config.dump(2) << '\n';

  std::ofstream mf(out_dir + "/metrics.csv", std::ios::trunc);
  mf << "epoch,train_nll,l_ra,dev_score\n";
  mf.precision(12);
  for (const auto& row : result.metrics) {
    mf << row.epoch << ',' << row.train_nll << ',' << row.l_ra << ',' << row.dev_score << '\n';
  }

  std::ofstream sf(out_dir + "/train_steps.csv", std::ios::trunc);
  sf << "step,nll,cosine_term,mi_term,l_ra,total\n";
  sf.precision(12);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    sf << i << ',' << steps[i].nll << ',' << steps[i].cosine << ',' << steps[i].mi << ','
       << steps[i].l_ra << ',' << steps[i].total << '\n';
  }

  save_parameters(out_dir + "/best.ckpt", training_state);
  model.save(out_dir + "/final_merged.ckpt");

  json rj;
  rj["test_em"] = result.test_em;
  rj["zero_shot_em"] = result.zero_shot_em;
  rj["best_dev_em"] = result.best_dev;
  rj["best_epoch"] = result.best_epoch;
  rj["epochs_run"] = result.epochs_run;
  rj["stopped_early"] = result.stopped_early;
  rj["seed"] = cfg.seed;
  rj["n_d"] = cfg.n_d;
  rj["method"] = adapter_kind_name(cfg.kind);
  rj["alpha"] = cfg.reg.alpha;
  rj["adapter_params"] = result.adapter_params;
  rj["critic_params"] = result.critic_params;
  rj["wall_seconds"] = result.wall_seconds;
  std::ofstream rf(out_dir + "/result.json", std::ios::trunc);
  rf << rj.dump(2) << '\n';
}

}  // namespace

AdaptResult adapt(const ToyBackbone& pretrained, const AdaptConfig& cfg) {
  const auto pool = generate_synthetic(cfg.task, cfg.pool_size, cfg.data_seed);
  const auto split = make_lowresource_splits(pool, cfg.n_d, cfg.seed);
  const auto test_set =
      generate_synthetic(cfg.task, cfg.test_samples, derive_seed(cfg.data_seed, "test-data"));
  return adapt(pretrained, cfg, split, test_set);
}

AdaptResult adapt(const ToyBackbone& pretrained, const AdaptConfig& cfg,
                  const LowResourceSplit& split, const std::vector<Sample>& test_set) {
  const auto wall_start = std::chrono::steady_clock::now();
  if (cfg.kind == AdapterKind::None) {
    throw ConfigError("adapt: choose an adapter kind to tune");
  }
  if (static_cast<int>(split.train.size()) != cfg.n_d ||
      static_cast<int>(split.dev.size()) != cfg.n_d) {
    throw ProtocolError("adapt: split sizes do not match N_D");
  }
  if (cfg.max_epochs < 1 || cfg.patience < 1 || cfg.batch_size < 1) {
    throw ConfigError("adapt: epochs, patience and batch size must be positive");
  }

  ModelConfig mc;
  mc.backbone = pretrained.cfg;
  mc.kind = cfg.kind;
  mc.phm = cfg.phm;
  mc.phm.d = pretrained.cfg.d;
  mc.n_experts = cfg.n_experts;
  mc.routing = cfg.routing;
  mc.activation = cfg.activation;
  mc.adapter_d_r = cfg.pfeiffer_d_r;
  AdaptedModel model = AdaptedModel::build(mc, cfg.seed);
  copy_parameter_values(pretrained.parameters(), model.backbone.parameters());
  model.backbone.set_trainable(false);

  AdaptResult result;
  result.backbone_checksum_before = model.backbone.checksum();

  std::vector<Critic> critics;
  Rng critic_rng(derive_seed(cfg.seed, "critic-init"));
  if (cfg.reg.alpha > 0.0) {
    cfg.reg.validate();
    for (int l = 1; l <= model.layer_count(); ++l) {
      critics.push_back(Critic::build(cfg.reg.critic_kind, pretrained.cfg.d,
                                      "critic/layer" + std::to_string(l), critic_rng));
    }
  }

  std::vector<ParamPtr> trainable = model.adapter_parameters();
  result.adapter_params = census(trainable);
  for (const auto& c : critics) {
    for (const auto& p : c.parameters()) trainable.push_back(p);
  }
  result.critic_params = census(trainable) - result.adapter_params;

  // Zero-shot reference on the frozen backbone alone.
  {
    ModelConfig zc;
    zc.backbone = pretrained.cfg;
    zc.kind = AdapterKind::None;
    AdaptedModel zero = AdaptedModel::build(zc, 0);
    copy_parameter_values(pretrained.parameters(), zero.backbone.parameters());
    result.zero_shot_em = evaluate(zero, test_set, RoutingKind::RepAverage);
  }

  AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng shuffle_rng(derive_seed(cfg.seed, "adapt-shuffle"));
  Rng neg_rng(derive_seed(cfg.seed, "adapt-negatives"));
  Trainer trainer{model, critics, cfg.reg, opt, trainable, neg_rng};

  std::vector<StepLog> step_logs;
  std::vector<Matrix> best_snapshot;
  result.best_dev = -1.0;
  int global_step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffled_indices(cfg.n_d, shuffle_rng);
    double epoch_nll = 0.0, epoch_lra = 0.0;
    int batches = 0;
    for (int start = 0; start < cfg.n_d; start += cfg.batch_size) {
      std::vector<const Sample*> batch;
      for (int i = start; i < std::min(start + cfg.batch_size, cfg.n_d); ++i) {
        batch.push_back(&split.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      }
      // The JSD negatives need a second sample in the batch.
      if (cfg.reg.alpha > 0.0 && batch.size() < 2) {
        if (epoch == 1 && start == 0) {
          throw ProtocolError("adapt: regularized training needs batches of at least 2 samples");
        }
        continue;
      }
      const StepLog log = trainer.step(batch);
      if (!std::isfinite(log.total)) {
        throw TrainingError("adapt: loss diverged at step " + std::to_string(global_step));
      }
      step_logs.push_back(log);
      epoch_nll += log.nll;
      epoch_lra += log.l_ra;
      ++batches;
      ++global_step;
    }

    const double dev_score = evaluate(model, split.dev, RoutingKind::RepAverage);
    EpochRow row;
    row.epoch = epoch;
    row.train_nll = batches > 0 ? epoch_nll / batches : 0.0;
    row.l_ra = batches > 0 ? epoch_lra / batches : 0.0;
    row.dev_score = dev_score;
    result.metrics.push_back(row);
    result.epochs_run = epoch;

    if (dev_score > result.best_dev) {
      result.best_dev = dev_score;
      result.best_epoch = epoch;
      best_snapshot.clear();
      for (const auto& p : trainable) best_snapshot.push_back(p->value);
    }
    if (epoch - result.best_epoch >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  for (std::size_t i = 0; i < trainable.size(); ++i) {
    trainable[i]->value = best_snapshot[i];
  }
  model.merge_for_inference();
  result.test_em = evaluate(model, test_set,
                            cfg.kind == AdapterKind::Mixphm ? RoutingKind::Merged
                                                            : RoutingKind::RepAverage);

  result.backbone_checksum_after = model.backbone.checksum();
  if (result.backbone_checksum_after != result.backbone_checksum_before) {
    throw TrainingError("adapt: frozen-backbone violation, checksum changed during adaptation");
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (!cfg.out_dir.empty()) {
    write_adapt_artifacts(cfg.out_dir, cfg, result, step_logs, model, trainable);
  }
  return result;
}

ActivationDump collect_dump(AdaptedModel& model, const std::vector<Sample>& samples,
                            RoutingKind infer_mode) {
  ActivationDump dump;
  for (std::size_t s_idx = 0; s_idx < samples.size(); ++s_idx) {
    const Sample& sample = samples[s_idx];
    Tape tape;
    StepContext st(tape);
    ModelStep step = ModelStep::inference(model, tape, infer_mode);
    std::vector<std::pair<int, int>> captured(static_cast<std::size_t>(model.layer_count()),
                                              {-1, -1});
    AdapterHook hook = [&](StepContext& ctx, int h, int layer) {
      const auto fwd = step.apply_adapter(ctx, layer, h, 0);
      captured[static_cast<std::size_t>(layer - 1)] = {h, fwd.delta};
      return fwd.out;
    };
    const int enc = model.backbone.encode(st, sample.input, hook);
    const int dec = model.backbone.decode(st, decoder_input(sample), enc, hook);
    const int half = model.layer_count() / 2;
    for (int l = 0; l < model.layer_count(); ++l) {
      const auto [h_node, delta_node] = captured[static_cast<std::size_t>(l)];
      if (h_node < 0) continue;
      DumpRecord rec;
      rec.sample = static_cast<int>(s_idx);
      rec.layer = l + 1;
      rec.h = tape.value(h_node);
      rec.ha = tape.value(delta_node);
      rec.htilde = tape.value(l < half ? enc : dec);
      dump.records.push_back(std::move(rec));
    }
  }
  return dump;
}

}  // namespace mixphm
