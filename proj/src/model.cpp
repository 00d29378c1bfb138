// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/model.hpp"

#include <fstream>

#include <json.hpp>

#include "mixphm/checkpoint.hpp"
#include "mixphm/errors.hpp"

namespace mixphm {

using nlohmann::json;

AdapterKind adapter_kind_from_name(const std::string& name) {
  if (name == "none") return AdapterKind::None;
  if (name == "mixphm") return AdapterKind::Mixphm;
  if (name == "pfeiffer") return AdapterKind::Pfeiffer;
  throw ConfigError("unknown adapter kind '" + name + "'");
}

const char* adapter_kind_name(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::None: return "none";
    case AdapterKind::Mixphm: return "mixphm";
    case AdapterKind::Pfeiffer: return "pfeiffer";
  }
  return "?";
}

void ModelConfig::validate() const {
  backbone.validate();
  if (kind == AdapterKind::Mixphm) {
    if (phm.d != backbone.d) {
      throw ConfigError("ModelConfig: PHM width " + std::to_string(phm.d) +
                        " must equal backbone width " + std::to_string(backbone.d));
    }
    phm.validate();
    if (n_experts < 1) throw ConfigError("ModelConfig: need at least one expert");
  }
  if (kind == AdapterKind::Pfeiffer && adapter_d_r < 1) {
    throw ConfigError("ModelConfig: adapter bottleneck must be positive");
  }
}

AdaptedModel::AdaptedModel(const ModelConfig& config, std::uint64_t seed)
    : cfg(config), backbone(config.backbone, seed) {}

AdaptedModel AdaptedModel::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  AdaptedModel model(config, seed);
  if (config.kind == AdapterKind::Mixphm) {
    model.stack = MixPHMStack::build(2 * config.backbone.L, config.phm, config.n_experts,
                                     config.routing, config.activation, seed);
  } else if (config.kind == AdapterKind::Pfeiffer) {
    Rng rng(derive_seed(seed, "adapter-init"));
    for (int l = 1; l <= 2 * config.backbone.L; ++l) {
      AdapterWeights w;
      const std::string prefix = "adapter/layer" + std::to_string(l);
      w.w_dn = make_param(prefix + "/W_dn",
                          random_normal(config.backbone.d, config.adapter_d_r, rng, 0.02));
      // Zero up-projection: the adapter starts as the identity map.
      w.w_up = make_param(prefix + "/W_up",
                          Matrix::zeros(config.adapter_d_r, config.backbone.d));
      w.activation = config.activation;
      model.plain.push_back(std::move(w));
    }
  }
  if (config.kind != AdapterKind::None) {
    model.backbone.set_trainable(false);
  }
  return model;
}

std::vector<ParamPtr> AdaptedModel::adapter_parameters() const {
  if (cfg.kind == AdapterKind::Mixphm) return stack->parameters();
  std::vector<ParamPtr> out;
  for (const auto& w : plain) {
    out.push_back(w.w_dn);
    out.push_back(w.w_up);
  }
  return out;
}

std::vector<ParamPtr> AdaptedModel::all_parameters() const {
  auto out = backbone.parameters();
  for (const auto& p : adapter_parameters()) out.push_back(p);
  return out;
}

void AdaptedModel::merge_for_inference() {
  if (cfg.kind == AdapterKind::Mixphm) stack->merge_all();
}

bool AdaptedModel::merged() const {
  return cfg.kind == AdapterKind::Mixphm ? stack->merged() : true;
}

void AdaptedModel::save(const std::string& path) const {
  save_parameters(path, all_parameters());
  json sidecar;
  sidecar["format"] = 1;
  sidecar["backbone"] = {{"L", cfg.backbone.L},         {"d", cfg.backbone.d},
                         {"heads", cfg.backbone.heads}, {"d_ff", cfg.backbone.d_ff},
                         {"vocab", cfg.backbone.vocab}, {"max_len", cfg.backbone.max_len}};
  json adapter;
  adapter["kind"] = adapter_kind_name(cfg.kind);
  if (cfg.kind == AdapterKind::Mixphm) {
    adapter["n"] = cfg.phm.n;
    adapter["d_r"] = cfg.phm.d_r;
    adapter["d_k"] = cfg.phm.d_k;
    adapter["n_experts"] = cfg.n_experts;
    adapter["routing"] = routing_name(cfg.routing);
    adapter["activation"] = cfg.activation == Activation::Gelu ? "gelu" : "relu";
    adapter["merged"] = merged();
  } else if (cfg.kind == AdapterKind::Pfeiffer) {
    adapter["d_r"] = cfg.adapter_d_r;
    adapter["activation"] = cfg.activation == Activation::Gelu ? "gelu" : "relu";
  }
  sidecar["adapter"] = adapter;
  std::ofstream f(path + ".json", std::ios::trunc);
  if (!f) throw IoError("model sidecar: cannot open " + path + ".json");
  f << sidecar.dump(2) << '\n';
}

AdaptedModel AdaptedModel::load(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw IoError("model sidecar: missing file " + path + ".json");
  json sidecar;
  try {
    f >> sidecar;
  } catch (const json::exception& e) {
    throw IoError("model sidecar: parse failure in " + path + ".json: " + e.what());
  }

  ModelConfig cfg;
  const auto& bb = sidecar.at("backbone");
  cfg.backbone.L = bb.at("L").get<int>();
  cfg.backbone.d = bb.at("d").get<int>();
  cfg.backbone.heads = bb.at("heads").get<int>();
  cfg.backbone.d_ff = bb.at("d_ff").get<int>();
  cfg.backbone.vocab = bb.at("vocab").get<int>();
  cfg.backbone.max_len = bb.at("max_len").get<int>();

  const auto& ad = sidecar.at("adapter");
  cfg.kind = adapter_kind_from_name(ad.at("kind").get<std::string>());
  bool was_merged = false;
  if (cfg.kind == AdapterKind::Mixphm) {
    cfg.phm.n = ad.at("n").get<int>();
    cfg.phm.d = cfg.backbone.d;
    cfg.phm.d_r = ad.at("d_r").get<int>();
    cfg.phm.d_k = ad.at("d_k").get<int>();
    cfg.n_experts = ad.at("n_experts").get<int>();
    cfg.routing = routing_from_name(ad.at("routing").get<std::string>());
    const RoutingKind stored = cfg.routing;
    if (stored == RoutingKind::Merged) cfg.routing = RoutingKind::BatchRandom;  // rebuilt below
    cfg.activation =
        ad.at("activation").get<std::string>() == "relu" ? Activation::Relu : Activation::Gelu;
    was_merged = ad.at("merged").get<bool>();
  } else if (cfg.kind == AdapterKind::Pfeiffer) {
    cfg.adapter_d_r = ad.at("d_r").get<int>();
    cfg.activation =
        ad.at("activation").get<std::string>() == "relu" ? Activation::Relu : Activation::Gelu;
  }

  AdaptedModel model = build(cfg, /*seed=*/0);
  load_parameters(path, model.all_parameters());
  if (was_merged) model.merge_for_inference();  // re-derives merged factors
  return model;
}

ModelStep ModelStep::training(AdaptedModel& model, Tape& tape,
                              const std::vector<int>& enc_lengths,
                              const std::vector<int>& dec_lengths) {
  ModelStep step(model, tape);
  if (model.cfg.kind == AdapterKind::Mixphm) {
    step.stack_state_ = model.stack->begin_step(tape);
    auto& layers = model.stack->layers;
    const std::size_t half = layers.size() / 2;
    step.assignments_.reserve(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lens = l < half ? enc_lengths : dec_lengths;
      step.assignments_.push_back(route(lens, layers[l].routing, layers[l].n_experts,
                                        layers[l].rng, /*training=*/true));
    }
  }
  return step;
}

ModelStep ModelStep::inference(AdaptedModel& model, Tape& tape, RoutingKind mode) {
  if (mode != RoutingKind::Merged && mode != RoutingKind::RepAverage) {
    throw ModeError("ModelStep::inference: evaluation requires merged or rep-average mode");
  }
  ModelStep step(model, tape);
  if (model.cfg.kind == AdapterKind::Mixphm) {
    step.stack_state_ = model.stack->begin_step(tape);
    Assignment a;
    a.kind = mode;
    step.assignments_.assign(model.stack->layers.size(), a);
  }
  return step;
}

ResidualForward ModelStep::apply_adapter(StepContext& st, int layer_index, int h,
                                         int sample_index) {
  switch (model.cfg.kind) {
    case AdapterKind::None:
      return {h, -1};
    case AdapterKind::Mixphm:
      return model.stack->forward_layer(stack_state_, layer_index - 1, h,
                                        assignments_[static_cast<std::size_t>(layer_index - 1)],
                                        sample_index);
    case AdapterKind::Pfeiffer: {
      const auto& w = model.plain[static_cast<std::size_t>(layer_index - 1)];
      return adapter_forward(tape, h, st.leaf(w.w_dn), st.leaf(w.w_up), w.activation);
    }
  }
  throw ContractError("apply_adapter: unhandled adapter kind");
}

}  // namespace mixphm
