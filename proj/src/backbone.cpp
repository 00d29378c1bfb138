// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/backbone.hpp"

#include <cmath>
#include <string>

#include "mixphm/errors.hpp"
#include "mixphm/rng.hpp"

namespace mixphm {

void BackboneConfig::validate() const {
  if (L < 1 || d < 1 || heads < 1 || d_ff < 1 || vocab < 2 || max_len < 1) {
    throw ConfigError("BackboneConfig: dimensions must be positive (vocab >= 2)");
  }
  if (d % heads != 0) {
    throw ConfigError("BackboneConfig: heads=" + std::to_string(heads) + " must divide d=" +
                      std::to_string(d));
  }
  if (d_ff < d) throw ConfigError("BackboneConfig: d_ff must be >= d");
}

int StepContext::leaf(const ParamPtr& p) {
  const auto it = leaves_.find(p.get());
  if (it != leaves_.end()) return it->second;
  const int id = tape.leaf(*p);
  leaves_.emplace(p.get(), id);
  return id;
}

namespace {

ParamPtr weight(const std::string& name, int rows, int cols, Rng& rng) {
  // Xavier-style scale; at toy widths the GPT-2 0.02 constant is too cold
  // to pretrain quickly.
  const double stddev = std::sqrt(2.0 / (rows + cols));
  return make_param(name, random_normal(rows, cols, rng, stddev));
}

}  // namespace

ToyBackbone::ToyBackbone(const BackboneConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  Rng rng(derive_seed(seed, "backbone-init"));
  const int d = cfg.d;

  embed = make_param("backbone/embed", random_normal(cfg.vocab, d, rng, 0.1));
  enc_pos = make_param("backbone/enc/pos", random_normal(cfg.max_len, d, rng, 0.05));
  dec_pos = make_param("backbone/dec/pos", random_normal(cfg.max_len, d, rng, 0.05));

  auto make_attn = [&](const std::string& prefix) {
    AttnParams p;
    p.wq = weight(prefix + "/Wq", d, d, rng);
    p.wk = weight(prefix + "/Wk", d, d, rng);
    p.wv = weight(prefix + "/Wv", d, d, rng);
    p.wo = weight(prefix + "/Wo", d, d, rng);
    p.ln_gain = make_param(prefix + "/ln_gain", Matrix::full(1, d, 1.0));
    p.ln_bias = make_param(prefix + "/ln_bias", Matrix::zeros(1, d));
    return p;
  };
  auto make_ffn = [&](const std::string& prefix) {
    FfnParams p;
    p.w1 = weight(prefix + "/W1", d, cfg.d_ff, rng);
    p.b1 = make_param(prefix + "/b1", Matrix::zeros(1, cfg.d_ff));
    p.w2 = weight(prefix + "/W2", cfg.d_ff, d, rng);
    p.b2 = make_param(prefix + "/b2", Matrix::zeros(1, d));
    p.ln_gain = make_param(prefix + "/ln_gain", Matrix::full(1, d, 1.0));
    p.ln_bias = make_param(prefix + "/ln_bias", Matrix::zeros(1, d));
    return p;
  };

  for (int b = 0; b < cfg.L; ++b) {
    const std::string bp = "backbone/enc" + std::to_string(b);
    enc.push_back({make_attn(bp + "/attn"), make_ffn(bp + "/ffn")});
  }
  for (int b = 0; b < cfg.L; ++b) {
    const std::string bp = "backbone/dec" + std::to_string(b);
    dec.push_back(
        {make_attn(bp + "/self_attn"), make_attn(bp + "/cross_attn"), make_ffn(bp + "/ffn")});
  }
  enc_final_gain = make_param("backbone/enc/final_ln_gain", Matrix::full(1, d, 1.0));
  enc_final_bias = make_param("backbone/enc/final_ln_bias", Matrix::zeros(1, d));
  dec_final_gain = make_param("backbone/dec/final_ln_gain", Matrix::full(1, d, 1.0));
  dec_final_bias = make_param("backbone/dec/final_ln_bias", Matrix::zeros(1, d));
}

std::vector<ParamPtr> ToyBackbone::parameters() const {
  std::vector<ParamPtr> out = {embed, enc_pos, dec_pos};
  auto push_attn = [&out](const AttnParams& p) {
    out.insert(out.end(), {p.wq, p.wk, p.wv, p.wo, p.ln_gain, p.ln_bias});
  };
  auto push_ffn = [&out](const FfnParams& p) {
    out.insert(out.end(), {p.w1, p.b1, p.w2, p.b2, p.ln_gain, p.ln_bias});
  };
  for (const auto& block : enc) {
    push_attn(block.attn);
    push_ffn(block.ffn);
  }
  for (const auto& block : dec) {
    push_attn(block.self_attn);
    push_attn(block.cross_attn);
    push_ffn(block.ffn);
  }
  out.insert(out.end(),
             {enc_final_gain, enc_final_bias, dec_final_gain, dec_final_bias});
  return out;
}

void ToyBackbone::set_trainable(bool trainable) {
  for (const auto& p : parameters()) p->trainable = trainable;
}

std::uint64_t ToyBackbone::checksum() const { return value_checksum(parameters()); }

int ToyBackbone::embed_sequence(StepContext& st, const std::vector<int>& tokens,
                                bool decoder_side) const {
  const int n_t = static_cast<int>(tokens.size());
  if (n_t < 1) throw ProtocolError("backbone: empty token sequence");
  if (n_t > cfg.max_len) {
    throw ProtocolError("backbone: sequence of " + std::to_string(n_t) +
                        " tokens exceeds max_len " + std::to_string(cfg.max_len));
  }
  Matrix onehot = Matrix::zeros(n_t, cfg.vocab);
  Matrix pos_sel = Matrix::zeros(n_t, cfg.max_len);
  for (int t = 0; t < n_t; ++t) {
    const int tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= cfg.vocab) {
      throw ProtocolError("backbone: token id " + std::to_string(tok) + " outside vocab");
    }
    onehot(t, tok) = 1.0;
    pos_sel(t, t) = 1.0;
  }
  Tape& tape = st.tape;
  const int tok_emb = tape.matmul(tape.constant(std::move(onehot)), st.leaf(embed));
  const int pos_emb = tape.matmul(tape.constant(std::move(pos_sel)),
                                  st.leaf(decoder_side ? dec_pos : enc_pos));
  return tape.add(tok_emb, pos_emb);
}

int ToyBackbone::layer_normed(StepContext& st, int x, const ParamPtr& gain,
                              const ParamPtr& bias) const {
  return st.tape.layer_norm(x, st.leaf(gain), st.leaf(bias));
}

int ToyBackbone::attention(StepContext& st, const AttnParams& p, int x_q, int x_kv,
                           bool causal) const {
  Tape& tape = st.tape;
  const int d = cfg.d;
  const int dh = d / cfg.heads;
  const int n_q = tape.value(x_q).rows;
  const int n_k = tape.value(x_kv).rows;

  const int q = tape.matmul(x_q, st.leaf(p.wq));
  const int k = tape.matmul(x_kv, st.leaf(p.wk));
  const int v = tape.matmul(x_kv, st.leaf(p.wv));

  int merged = -1;
  for (int h = 0; h < cfg.heads; ++h) {
    Matrix sel = Matrix::zeros(d, dh);
    for (int c = 0; c < dh; ++c) sel(h * dh + c, c) = 1.0;
    const int sel_node = tape.constant(std::move(sel));
    const int qh = tape.matmul(q, sel_node);
    const int kh = tape.matmul(k, sel_node);
    const int vh = tape.matmul(v, sel_node);
    int scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dh));
    if (causal) {
      Matrix mask = Matrix::zeros(n_q, n_k);
      for (int i = 0; i < n_q; ++i)
        for (int j = i + 1; j < n_k; ++j) mask(i, j) = -1e9;
      scores = tape.add(scores, tape.constant(std::move(mask)));
    }
    const int probs = tape.row_softmax(scores);
    const int oh = tape.matmul(probs, vh);
    const int scattered = tape.matmul(oh, tape.transpose(sel_node));
    merged = merged < 0 ? scattered : tape.add(merged, scattered);
  }
  return tape.matmul(merged, st.leaf(p.wo));
}

int ToyBackbone::ffn(StepContext& st, const FfnParams& p, int x) const {
  Tape& tape = st.tape;
  const int hidden = tape.gelu(tape.add(tape.matmul(x, st.leaf(p.w1)), st.leaf(p.b1)));
  return tape.add(tape.matmul(hidden, st.leaf(p.w2)), st.leaf(p.b2));
}

int ToyBackbone::encode(StepContext& st, const std::vector<int>& tokens,
                        const AdapterHook& hook) const {
  Tape& tape = st.tape;
  int x = embed_sequence(st, tokens, /*decoder_side=*/false);
  for (int b = 0; b < cfg.L; ++b) {
    const EncBlock& block = enc[static_cast<std::size_t>(b)];
    const int normed = layer_normed(st, x, block.attn.ln_gain, block.attn.ln_bias);
    x = tape.add(x, attention(st, block.attn, normed, normed, /*causal=*/false));
    const int ffn_in = layer_normed(st, x, block.ffn.ln_gain, block.ffn.ln_bias);
    x = tape.add(x, ffn(st, block.ffn, ffn_in));
    if (hook) x = hook(st, x, b + 1);
  }
  return layer_normed(st, x, enc_final_gain, enc_final_bias);
}

int ToyBackbone::decode(StepContext& st, const std::vector<int>& tokens, int encoder_out,
                        const AdapterHook& hook) const {
  Tape& tape = st.tape;
  int x = embed_sequence(st, tokens, /*decoder_side=*/true);
  for (int b = 0; b < cfg.L; ++b) {
    const DecBlock& block = dec[static_cast<std::size_t>(b)];
    const int self_in = layer_normed(st, x, block.self_attn.ln_gain, block.self_attn.ln_bias);
    x = tape.add(x, attention(st, block.self_attn, self_in, self_in, /*causal=*/true));
    const int cross_in =
        layer_normed(st, x, block.cross_attn.ln_gain, block.cross_attn.ln_bias);
    x = tape.add(x, attention(st, block.cross_attn, cross_in, encoder_out, /*causal=*/false));
    const int ffn_in = layer_normed(st, x, block.ffn.ln_gain, block.ffn.ln_bias);
    x = tape.add(x, ffn(st, block.ffn, ffn_in));
    if (hook) x = hook(st, x, cfg.L + b + 1);
  }
  return layer_normed(st, x, dec_final_gain, dec_final_bias);
}

int ToyBackbone::lm_logits(StepContext& st, int decoder_out) const {
  return st.tape.matmul(decoder_out, st.tape.transpose(st.leaf(embed)));
}

}  // namespace mixphm
