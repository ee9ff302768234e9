#include "hisa/model.hpp"

#include <algorithm>
#include <cmath>

#include "hisa/errors.hpp"

namespace hisa {

namespace {

Tensor on_tape(Tape& tape, Parameter& p, bool frozen) {
  return frozen ? tape.frozen_leaf(p) : tape.leaf(p);
}

}  // namespace

// --- MhaParamSet ------------------------------------------------------------

MhaParamSet::MhaParamSet(const std::string& prefix, int d_model, int heads)
    : wq(prefix + ".wq", {d_model, d_model}),
      wk(prefix + ".wk", {d_model, d_model}),
      wv(prefix + ".wv", {d_model, d_model}),
      wo(prefix + ".wo", {d_model, d_model}),
      num_heads(heads) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("attention dimension " + std::to_string(d_model) +
                      " is not divisible into " + std::to_string(heads) + " heads");
  }
}

void MhaParamSet::init(Rng& rng) {
  wq.init_xavier_uniform(rng);
  wk.init_xavier_uniform(rng);
  wv.init_xavier_uniform(rng);
  wo.init_xavier_uniform(rng);
}

MhaWeights MhaParamSet::weights(Tape& tape, bool frozen) {
  return {on_tape(tape, wq, frozen), on_tape(tape, wk, frozen), on_tape(tape, wv, frozen),
          on_tape(tape, wo, frozen), num_heads};
}

void MhaParamSet::collect(std::vector<Parameter*>& out) {
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  out.push_back(&wo);
}

// --- AffineParamSet ---------------------------------------------------------

AffineParamSet::AffineParamSet(const std::string& prefix, int in_dim, int out_dim)
    : w(prefix + ".w", {in_dim, out_dim}), b(prefix + ".b", {out_dim}) {}

void AffineParamSet::init(Rng& rng) {
  w.init_xavier_uniform(rng);
  b.fill(0);
}

AffineWeights AffineParamSet::weights(Tape& tape, bool frozen) {
  return {on_tape(tape, w, frozen), on_tape(tape, b, frozen)};
}

void AffineParamSet::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// --- NormParamSet -----------------------------------------------------------

NormParamSet::NormParamSet(const std::string& prefix, int dim)
    : gamma(prefix + ".gamma", {dim}), beta(prefix + ".beta", {dim}) {
  gamma.fill(1);
}

NormWeights NormParamSet::weights(Tape& tape, bool frozen) {
  return {on_tape(tape, gamma, frozen), on_tape(tape, beta, frozen)};
}

void NormParamSet::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// --- FfnParamSet ------------------------------------------------------------

FfnParamSet::FfnParamSet(const std::string& prefix, int d_model, int d_ff)
    : hidden(prefix + ".hidden", d_model, d_ff), out(prefix + ".out", d_ff, d_model) {}

void FfnParamSet::init(Rng& rng) {
  hidden.init(rng);
  out.init(rng);
}

FfnWeights FfnParamSet::weights(Tape& tape, bool frozen) {
  return {hidden.weights(tape, frozen), out.weights(tape, frozen)};
}

void FfnParamSet::collect(std::vector<Parameter*>& out_list) {
  hidden.collect(out_list);
  out.collect(out_list);
}

// --- EncoderLayerParams -----------------------------------------------------

EncoderLayerParams::EncoderLayerParams(const std::string& prefix, int d_model, int heads, int d_ff)
    : self_attn(prefix + ".self", d_model, heads),
      norm_self(prefix + ".norm_self", d_model),
      ffn(prefix + ".ffn", d_model, d_ff),
      norm_ffn(prefix + ".norm_ffn", d_model) {}

void EncoderLayerParams::init(Rng& rng) {
  self_attn.init(rng);
  ffn.init(rng);
}

void EncoderLayerParams::collect(std::vector<Parameter*>& out) {
  self_attn.collect(out);
  norm_self.collect(out);
  ffn.collect(out);
  norm_ffn.collect(out);
}

// --- DecoderLayerParams -----------------------------------------------------

DecoderLayerParams::DecoderLayerParams(const std::string& prefix, int d_model, int heads, int d_ff)
    : self_attn(prefix + ".self", d_model, heads),
      norm_self(prefix + ".norm_self", d_model),
      f_w(prefix + ".f_w", d_model, d_model),
      word_attn(prefix + ".word", d_model, heads),
      norm_word(prefix + ".norm_word", d_model),
      utt_self_attn(prefix + ".utt", d_model, heads),
      norm_utt(prefix + ".norm_utt", d_model),
      f_u(prefix + ".f_u", d_model, d_model),
      word_utt_attn(prefix + ".cross", d_model, heads),
      f_l(prefix + ".f_l", d_model, d_model),
      norm_cross(prefix + ".norm_cross", d_model),
      ffn(prefix + ".ffn", d_model, d_ff),
      norm_ffn(prefix + ".norm_ffn", d_model),
      gate(prefix + ".gate", {2 * d_model, d_model}) {}

void DecoderLayerParams::init(Rng& rng) {
  self_attn.init(rng);
  f_w.init(rng);
  word_attn.init(rng);
  utt_self_attn.init(rng);
  f_u.init(rng);
  word_utt_attn.init(rng);
  f_l.init(rng);
  ffn.init(rng);
  gate.init_xavier_uniform(rng);
}

void DecoderLayerParams::collect(std::vector<Parameter*>& out) {
  self_attn.collect(out);
  norm_self.collect(out);
  f_w.collect(out);
  word_attn.collect(out);
  norm_word.collect(out);
  utt_self_attn.collect(out);
  norm_utt.collect(out);
  f_u.collect(out);
  word_utt_attn.collect(out);
  f_l.collect(out);
  norm_cross.collect(out);
  ffn.collect(out);
  norm_ffn.collect(out);
  out.push_back(&gate);
}

// --- HisaConfig -------------------------------------------------------------

void HisaConfig::validate() const {
  if (vocab_size < 5) {
    throw ConfigError("vocabulary must hold the four reserved tokens plus content");
  }
  if (d_model < 1) throw ConfigError("model dimension must be positive");
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("model dimension " + std::to_string(d_model) +
                      " is not divisible into " + std::to_string(num_heads) + " heads");
  }
  if (enc_layers < 0) throw ConfigError("encoder layer count cannot be negative");
  if (dec_layers < 1) throw ConfigError("decoder needs at least one layer");
  if (max_utterance_len < 1 || max_context_utterances < 1 || max_target_len < 1) {
    throw ConfigError("length limits must be positive");
  }
}

// --- HisaModel --------------------------------------------------------------

HisaModel::HisaModel(const HisaConfig& cfg, Rng& init_rng)
    : config(cfg),
      we("we", {cfg.vocab_size, cfg.d_model}),
      out_proj("out", cfg.d_model, cfg.vocab_size) {
  config.validate();
  wpe = PositionalEncoding::sinusoidal(
      std::max(config.max_utterance_len, config.max_target_len + 1), config.d_model);
  upe = PositionalEncoding::sinusoidal(config.max_context_utterances, config.d_model);
  for (int i = 0; i < config.enc_layers; ++i) {
    encoder.emplace_back("enc" + std::to_string(i), config.d_model, config.num_heads,
                         config.ffn_dim());
  }
  for (int i = 0; i < config.dec_layers; ++i) {
    decoder.emplace_back("dec" + std::to_string(i), config.d_model, config.num_heads,
                         config.ffn_dim());
  }
  we.init_normal(init_rng, Scalar(1) / std::sqrt(static_cast<Scalar>(config.d_model)));
  for (auto& layer : encoder) layer.init(init_rng);
  for (auto& layer : decoder) layer.init(init_rng);
  out_proj.init(init_rng);
}

std::vector<Parameter*> HisaModel::parameters() {
  std::vector<Parameter*> out;
  out.push_back(&we);
  for (auto& layer : encoder) layer.collect(out);
  for (auto& layer : decoder) layer.collect(out);
  out_proj.collect(out);
  return out;
}

std::int64_t HisaModel::parameter_count() {
  std::int64_t total = 0;
  for (Parameter* p : parameters()) total += p->size();
  return total;
}

Parameter* HisaModel::find(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void HisaModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace hisa
