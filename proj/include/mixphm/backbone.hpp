// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "mixphm/parameter.hpp"
#include "mixphm/tape.hpp"

namespace mixphm {

struct BackboneConfig {
  int L = 2;        // blocks per stack
  int d = 32;       // model width
  int heads = 4;
  int d_ff = 64;
  int vocab = 64;
  int max_len = 24;

  void validate() const;
};

// Per-training-step context: parameter leaves are created once per step so
// gradient contributions from repeated uses accumulate on a single node.
struct StepContext {
  Tape& tape;

  explicit StepContext(Tape& t) : tape(t) {}
  int leaf(const ParamPtr& p);

 private:
  std::unordered_map<const Parameter*, int> leaves_;
};

// Adapter insertion point: called after each feed-forward sublayer with the
// residual stream and the 1-based layer index in [1, 2L]; returns the
// updated stream. An empty hook leaves the stream untouched.
using AdapterHook = std::function<int(StepContext&, int h, int layer_index)>;

// Tiny trainable pre-norm encoder-decoder transformer over 2-D matrices,
// one sample at a time. The output head is tied to the token embedding.
class ToyBackbone {
 public:
  BackboneConfig cfg;

  struct AttnParams {
    ParamPtr wq, wk, wv, wo;
    ParamPtr ln_gain, ln_bias;
  };
  struct FfnParams {
    ParamPtr w1, b1, w2, b2;
    ParamPtr ln_gain, ln_bias;
  };
  struct EncBlock {
    AttnParams attn;
    FfnParams ffn;
  };
  struct DecBlock {
    AttnParams self_attn;
    AttnParams cross_attn;
    FfnParams ffn;
  };

  ParamPtr embed;    // vocab x d, tied with the output head
  ParamPtr enc_pos;  // max_len x d
  ParamPtr dec_pos;
  std::vector<EncBlock> enc;
  std::vector<DecBlock> dec;
  ParamPtr enc_final_gain, enc_final_bias;
  ParamPtr dec_final_gain, dec_final_bias;

  ToyBackbone(const BackboneConfig& config, std::uint64_t seed);

  // Registry in fixed construction order.
  std::vector<ParamPtr> parameters() const;
  void set_trainable(bool trainable);
  std::uint64_t checksum() const;

  // Final encoder output (n_t x d, layer-normed). Adapter layer indices for
  // the encoder side are 1..L.
  int encode(StepContext& st, const std::vector<int>& tokens, const AdapterHook& hook) const;
  // Final decoder output; decoder-side adapter layers are L+1..2L.
  int decode(StepContext& st, const std::vector<int>& tokens, int encoder_out,
             const AdapterHook& hook) const;
  // Tied-embedding logits, n_t x vocab.
  int lm_logits(StepContext& st, int decoder_out) const;

 private:
  int embed_sequence(StepContext& st, const std::vector<int>& tokens, bool decoder_side) const;
  int attention(StepContext& st, const AttnParams& p, int x_q, int x_kv, bool causal) const;
  int ffn(StepContext& st, const FfnParams& p, int x) const;
  int layer_normed(StepContext& st, int x, const ParamPtr& gain, const ParamPtr& bias) const;
};

}  // namespace mixphm
