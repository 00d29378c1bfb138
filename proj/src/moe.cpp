// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/moe.hpp"

#include <cmath>

#include "mixphm/errors.hpp"

namespace mixphm {

const char* routing_name(RoutingKind k) {
  switch (k) {
    case RoutingKind::BatchRandom: return "batch-random";
    case RoutingKind::TokenRandom: return "token-random";
    case RoutingKind::SentenceRandom: return "sentence-random";
    case RoutingKind::RepAverage: return "rep-average";
    case RoutingKind::Merged: return "merged";
  }
  return "?";
}

RoutingKind routing_from_name(const std::string& name) {
  if (name == "batch-random") return RoutingKind::BatchRandom;
  if (name == "token-random") return RoutingKind::TokenRandom;
  if (name == "sentence-random") return RoutingKind::SentenceRandom;
  if (name == "rep-average") return RoutingKind::RepAverage;
  if (name == "merged") return RoutingKind::Merged;
  throw ConfigError("unknown routing kind '" + name + "'");
}

Assignment route(const std::vector<int>& tokens_per_sample, RoutingKind kind, int n_experts,
                 Rng& rng, bool training) {
  if (n_experts < 1) throw ConfigError("route: need at least one expert");
  if (tokens_per_sample.empty()) throw ProtocolError("route: empty batch");

  Assignment a;
  a.kind = kind;
  switch (kind) {
    case RoutingKind::BatchRandom:
      if (!training) throw ModeError("route: batch-random routing is training-only");
      a.batch_expert = rng.next_int(n_experts);
      break;
    case RoutingKind::SentenceRandom:
      if (!training) throw ModeError("route: sentence-random routing is training-only");
      for (std::size_t s = 0; s < tokens_per_sample.size(); ++s) {
        a.per_sample.push_back(rng.next_int(n_experts));
      }
      break;
    case RoutingKind::TokenRandom: {
      if (!training) throw ModeError("route: token-random routing is training-only");
      for (int n_t : tokens_per_sample) {
        std::vector<int> row;
        row.reserve(static_cast<std::size_t>(n_t));
        for (int t = 0; t < n_t; ++t) row.push_back(rng.next_int(n_experts));
        a.per_token.push_back(std::move(row));
      }
      break;
    }
    case RoutingKind::RepAverage:
      break;  // every expert participates; nothing to draw
    case RoutingKind::Merged:
      if (training) throw ModeError("route: merged mode is inference-only");
      break;
  }
  return a;
}

Assignment route(int n_b, int n_t, RoutingKind kind, int n_experts, Rng& rng, bool training) {
  if (n_b < 1 || n_t < 1) throw ProtocolError("route: batch shape must be positive");
  return route(std::vector<int>(static_cast<std::size_t>(n_b), n_t), kind, n_experts, rng,
               training);
}

namespace {

// Mean across experts computed as x0 + sum(xi - x0)/N, which is exact when
// the inputs are identical and numerically stable otherwise.
Matrix factor_mean(const std::vector<ExpertWeights>& experts, int j, bool t_side) {
  auto pick = [&](int i) -> const Matrix& {
    const LowRankFactorPair& pair = experts[static_cast<std::size_t>(i)].up[static_cast<std::size_t>(j)];
    return t_side ? pair.t->value : pair.u->value;
  };
  Matrix out = pick(0);
  if (experts.size() == 1) return out;
  Matrix acc = Matrix::zeros(out.rows, out.cols);
  for (std::size_t i = 1; i < experts.size(); ++i) {
    add_in_place(acc, sub(pick(static_cast<int>(i)), out));
  }
  add_in_place(out, scale(acc, 1.0 / static_cast<double>(experts.size())));
  return out;
}

}  // namespace

const ExpertWeights& merge_experts(MixPHMLayer& layer) {
  if (layer.merged_mode) return *layer.merged;  // idempotent
  ExpertWeights merged;
  const std::string prefix = "mixphm/layer" + std::to_string(layer.index) + "/merged/up/";
  for (int j = 0; j < layer.config.n; ++j) {
    LowRankFactorPair pair;
    pair.t = make_param(prefix + "T" + std::to_string(j), factor_mean(layer.experts, j, true),
                        /*trainable=*/false);
    pair.u = make_param(prefix + "U" + std::to_string(j), factor_mean(layer.experts, j, false),
                        /*trainable=*/false);
    merged.up.push_back(std::move(pair));
  }
  layer.merged = std::move(merged);
  layer.merged_mode = true;
  layer.routing = RoutingKind::Merged;
  return *layer.merged;
}

namespace {

void ensure_layer_leaves(Tape& tape, const MixPHMLayer& layer,
                         MixPHMStepState::PerLayer& cache) {
  if (!cache.s_nodes.empty()) return;
  const int n = layer.config.n;
  const int s_leaf = tape.leaf(layer.s_global);
  for (int j = 0; j < n; ++j) {
    // Column selector pulling the j-th n x n block out of the n x n^2 rule
    // tensor, so the single S parameter feeds every Kronecker summand.
    Matrix sel(n * n, n);
    for (int c = 0; c < n; ++c) sel(j * n + c, c) = 1.0;
    cache.s_nodes.push_back(tape.matmul(s_leaf, tape.constant(std::move(sel))));
  }
  std::vector<int> down_t, down_u;
  for (const auto& pair : layer.down) {
    down_t.push_back(tape.leaf(pair.t));
    down_u.push_back(tape.leaf(pair.u));
  }
  cache.w_dn = lowrank_phm_weight_node(tape, cache.s_nodes, down_t, down_u);
  cache.w_up.assign(static_cast<std::size_t>(layer.n_experts), -1);
}

int expert_up_node(Tape& tape, const MixPHMLayer& layer, MixPHMStepState::PerLayer& cache,
                   int expert) {
  ensure_layer_leaves(tape, layer, cache);
  int& slot = cache.w_up[static_cast<std::size_t>(expert)];
  if (slot >= 0) return slot;
  std::vector<int> up_t, up_u;
  for (const auto& pair : layer.experts[static_cast<std::size_t>(expert)].up) {
    up_t.push_back(tape.leaf(pair.t));
    up_u.push_back(tape.leaf(pair.u));
  }
  slot = lowrank_phm_weight_node(tape, cache.s_nodes, up_t, up_u);
  return slot;
}

int merged_up_node(Tape& tape, const MixPHMLayer& layer, MixPHMStepState::PerLayer& cache) {
  ensure_layer_leaves(tape, layer, cache);
  if (cache.merged_up >= 0) return cache.merged_up;
  std::vector<int> up_t, up_u;
  for (const auto& pair : layer.merged->up) {
    up_t.push_back(tape.leaf(pair.t));
    up_u.push_back(tape.leaf(pair.u));
  }
  cache.merged_up = lowrank_phm_weight_node(tape, cache.s_nodes, up_t, up_u);
  return cache.merged_up;
}

ResidualForward expert_delta(Tape& tape, int h, const MixPHMLayer& layer,
                             MixPHMStepState::PerLayer& cache, int expert) {
  if (expert < 0 || expert >= layer.n_experts) {
    throw RoutingError("mixphm_forward: expert index " + std::to_string(expert) +
                       " out of range for " + std::to_string(layer.n_experts) + " experts");
  }
  const int w_up = expert_up_node(tape, layer, cache, expert);
  return adapter_forward(tape, h, cache.w_dn, w_up, layer.activation);
}

}  // namespace

ResidualForward mixphm_forward(Tape& tape, int h, const MixPHMLayer& layer,
                               const Assignment& assignment, MixPHMStepState::PerLayer& cache,
                               int sample_index) {
  if (layer.merged_mode && assignment.kind != RoutingKind::Merged &&
      assignment.kind != RoutingKind::RepAverage) {
    throw ModeError("mixphm_forward: merged layer only accepts merged/rep-average assignments");
  }
  switch (assignment.kind) {
    case RoutingKind::Merged: {
      if (!layer.merged_mode) {
        throw ModeError("mixphm_forward: merged assignment before merge_experts");
      }
      ensure_layer_leaves(tape, layer, cache);
      const int w_up = merged_up_node(tape, layer, cache);
      return adapter_forward(tape, h, cache.w_dn, w_up, layer.activation);
    }
    case RoutingKind::BatchRandom:
      return expert_delta(tape, h, layer, cache, assignment.batch_expert);
    case RoutingKind::SentenceRandom: {
      if (sample_index < 0 || static_cast<std::size_t>(sample_index) >= assignment.per_sample.size()) {
        throw RoutingError("mixphm_forward: sample index outside sentence assignment");
      }
      return expert_delta(tape, h, layer, cache,
                          assignment.per_sample[static_cast<std::size_t>(sample_index)]);
    }
    case RoutingKind::TokenRandom: {
      if (sample_index < 0 || static_cast<std::size_t>(sample_index) >= assignment.per_token.size()) {
        throw RoutingError("mixphm_forward: sample index outside token assignment");
      }
      const std::vector<int>& tok = assignment.per_token[static_cast<std::size_t>(sample_index)];
      const int n_rows = tape.value(h).rows;  // copy: node pushes invalidate value() refs
      if (static_cast<int>(tok.size()) != n_rows) {
        throw RoutingError("mixphm_forward: token assignment covers " +
                           std::to_string(tok.size()) + " rows, input has " +
                           std::to_string(n_rows));
      }
      ensure_layer_leaves(tape, layer, cache);
      int delta = -1;
      for (int e = 0; e < layer.n_experts; ++e) {
        bool used = false;
        Matrix mask = Matrix::zeros(n_rows, n_rows);
        for (int r = 0; r < n_rows; ++r) {
          const int te = tok[static_cast<std::size_t>(r)];
          if (te < 0 || te >= layer.n_experts) {
            throw RoutingError("mixphm_forward: expert index " + std::to_string(te) +
                               " out of range for " + std::to_string(layer.n_experts) +
                               " experts");
          }
          if (te == e) {
            mask(r, r) = 1.0;
            used = true;
          }
        }
        if (!used) continue;
        const auto fwd = expert_delta(tape, h, layer, cache, e);
        const int masked = tape.matmul(tape.constant(std::move(mask)), fwd.delta);
        delta = delta < 0 ? masked : tape.add(delta, masked);
      }
      return {tape.add(h, delta), delta};
    }
    case RoutingKind::RepAverage: {
      ensure_layer_leaves(tape, layer, cache);
      int sum = -1;
      for (int e = 0; e < layer.n_experts; ++e) {
        const auto fwd = expert_delta(tape, h, layer, cache, e);
        sum = sum < 0 ? fwd.delta : tape.add(sum, fwd.delta);
      }
      const int delta = tape.scale(sum, 1.0 / layer.n_experts);
      return {tape.add(h, delta), delta};
    }
  }
  throw RoutingError("mixphm_forward: unhandled assignment kind");
}

MixPHMStack MixPHMStack::build(int n_layers, const PHMConfig& config, int n_experts,
                               RoutingKind routing, Activation activation, std::uint64_t seed) {
  config.validate();
  if (n_layers < 1) throw ConfigError("MixPHMStack: need at least one layer");
  if (n_experts < 1) throw ConfigError("MixPHMStack: need at least one expert");
  if (routing == RoutingKind::Merged) {
    throw ConfigError("MixPHMStack: cannot build directly in merged mode");
  }

  MixPHMStack stack;
  stack.config = config;
  stack.n_experts = n_experts;
  stack.routing = routing;
  stack.activation = activation;

  Rng init(derive_seed(seed, "mixphm-init"));
  const int n = config.n;
  // Rule entries at variance 1/n; down factors small; up U factors zero so
  // every expert starts as the identity map on the frozen stream.
  stack.s_global = make_param("mixphm/S_global",
                              random_normal(n, n * n, init, 1.0 / std::sqrt(n)));

  for (int l = 1; l <= n_layers; ++l) {
    MixPHMLayer layer;
    layer.index = l;
    layer.config = config;
    layer.n_experts = n_experts;
    layer.routing = routing;
    layer.activation = activation;
    layer.s_global = stack.s_global;
    layer.rng = Rng(derive_seed(seed, "mixphm-routing", static_cast<std::uint64_t>(l)));
    const std::string lp = "mixphm/layer" + std::to_string(l);
    for (int j = 0; j < n; ++j) {
      LowRankFactorPair pair;
      pair.t = make_param(lp + "/down/T" + std::to_string(j),
                          random_normal(config.d / n, config.d_k, init, 0.02));
      pair.u = make_param(lp + "/down/U" + std::to_string(j),
                          random_normal(config.d_r / n, config.d_k, init, 0.02));
      layer.down.push_back(std::move(pair));
    }
    for (int i = 0; i < n_experts; ++i) {
      ExpertWeights expert;
      for (int j = 0; j < n; ++j) {
        LowRankFactorPair pair;
        pair.t = make_param(lp + "/expert" + std::to_string(i) + "/up/T" + std::to_string(j),
                            random_normal(config.d_r / n, config.d_k, init, 0.02));
        pair.u = make_param(lp + "/expert" + std::to_string(i) + "/up/U" + std::to_string(j),
                            Matrix::zeros(config.d / n, config.d_k));
        expert.up.push_back(std::move(pair));
      }
      layer.experts.push_back(std::move(expert));
    }
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

std::vector<ParamPtr> MixPHMStack::parameters() const {
  std::vector<ParamPtr> out;
  out.push_back(s_global);
  for (const auto& layer : layers) {
    for (const auto& pair : layer.down) {
      out.push_back(pair.t);
      out.push_back(pair.u);
    }
    for (const auto& expert : layer.experts) {
      for (const auto& pair : expert.up) {
        out.push_back(pair.t);
        out.push_back(pair.u);
      }
    }
  }
  return out;
}

MixPHMStepState MixPHMStack::begin_step(Tape& tape) const {
  MixPHMStepState step;
  step.tape = &tape;
  step.layers.resize(layers.size());
  return step;
}

std::vector<Assignment> MixPHMStack::route_step(const std::vector<int>& tokens_per_sample,
                                                bool training) {
  std::vector<Assignment> out;
  out.reserve(layers.size());
  for (auto& layer : layers) {
    out.push_back(route(tokens_per_sample, layer.routing, layer.n_experts, layer.rng, training));
  }
  return out;
}

ResidualForward MixPHMStack::forward_layer(MixPHMStepState& step, int layer_pos, int h,
                                           const Assignment& assignment,
                                           int sample_index) const {
  if (layer_pos < 0 || static_cast<std::size_t>(layer_pos) >= layers.size()) {
    throw ContractError("MixPHMStack: layer position out of range");
  }
  return mixphm_forward(*step.tape, h, layers[static_cast<std::size_t>(layer_pos)], assignment,
                        step.layers[static_cast<std::size_t>(layer_pos)], sample_index);
}

void MixPHMStack::merge_all() {
  for (auto& layer : layers) merge_experts(layer);
  routing = RoutingKind::Merged;
}

bool MixPHMStack::merged() const {
  for (const auto& layer : layers) {
    if (!layer.merged_mode) return false;
  }
  return !layers.empty();
}

void MixPHMStack::set_routing(RoutingKind kind) {
  if (kind == RoutingKind::Merged && !merged()) {
    throw ModeError("MixPHMStack: call merge_all before switching to merged routing");
  }
  routing = kind;
  for (auto& layer : layers) layer.routing = kind;
}

namespace {

void check_count_dims(int L, int n_experts, int d, int d_r, int d_k, int n) {
  if (L < 1) throw ConfigError("param count: L must be >= 1");
  if (n_experts < 1) throw ConfigError("param count: N_e must be >= 1");
  PHMConfig{.n = n, .d = d, .d_r = d_r, .d_k = d_k}.validate();
}

}  // namespace

long long mixphm_param_count(int L, int n_experts, int d, int d_r, int d_k, int n) {
  check_count_dims(L, n_experts, d, d_r, d_k, n);
  return 2LL * L * d_k * (d + d_r) * (n_experts + 1) + static_cast<long long>(n) * n * n;
}

long long dense_moe_param_count(int L, int n_experts, int d, int d_r) {
  if (L < 1 || n_experts < 1 || d < 1 || d_r < 1) {
    throw ConfigError("dense_moe_param_count: dimensions must be positive");
  }
  return 4LL * L * n_experts * d * d_r;
}

BaselineMethod baseline_method_from_name(const std::string& name) {
  if (name == "houlsby") return BaselineMethod::Houlsby;
  if (name == "pfeiffer") return BaselineMethod::Pfeiffer;
  if (name == "compacter") return BaselineMethod::Compacter;
  if (name == "lora") return BaselineMethod::Lora;
  if (name == "adamix") return BaselineMethod::Adamix;
  if (name == "mixphm" || name == "mixphm-variant") return BaselineMethod::MixphmVariant;
  throw ConfigError("unknown parameter-count method '" + name + "'");
}

long long baseline_param_count(BaselineMethod method, const BaselineDims& dims,
                               const MixphmVariantFlags& flags) {
  const long long L = dims.L;
  const long long d = dims.d;
  const long long d_r = dims.d_r;
  switch (method) {
    case BaselineMethod::Pfeiffer:
      // One bottleneck adapter after each of the 2L feed-forward layers.
      return 2 * L * (2 * d * d_r);
    case BaselineMethod::Houlsby:
      // Adapters after both the attention and feed-forward sublayers.
      return 2 * L * 2 * (2 * d * d_r);
    case BaselineMethod::Adamix:
      // N_e dense adapter experts after each feed-forward layer.
      return 2 * L * dims.n_experts * (2 * d * d_r);
    case BaselineMethod::Lora:
      // Rank-r updates on query and value weights of every attention layer:
      // L encoder self-attention plus L decoder self- and cross-attention.
      return 3 * L * 2 * (2 * d * dims.r);
    case BaselineMethod::Compacter:
      // Low-rank PHM adapters after each feed-forward layer with one rule
      // tensor shared across the model.
      check_count_dims(dims.L, 1, dims.d, dims.d_r, dims.d_k, dims.n);
      return 2 * L * 2 * dims.d_k * (d + d_r) + static_cast<long long>(dims.n) * dims.n * dims.n;
    case BaselineMethod::MixphmVariant: {
      check_count_dims(dims.L, dims.n_experts, dims.d, dims.d_r, dims.d_k, dims.n);
      const long long ne = dims.n_experts;
      const long long n3 = static_cast<long long>(dims.n) * dims.n * dims.n;
      const long long s_total = flags.share_s ? n3 : 2 * L * ne * n3;
      const long long set_size = flags.lowrank ? static_cast<long long>(dims.d_k) * (d + d_r)
                                               : d * d_r / dims.n;
      const long long down_per_layer = (flags.share_dn ? 1 : ne) * set_size;
      const long long up_per_layer = (flags.share_up ? 1 : ne) * set_size;
      return s_total + 2 * L * (down_per_layer + up_per_layer);
    }
  }
  throw ConfigError("baseline_param_count: unhandled method");
}

}  // namespace mixphm
