// Parameter ownership and model assembly. Parameters live here, outside any
// tape; a forward pass places them on a tape via the weights() methods and
// gradients flow back into Parameter::grad.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hisa/attention.hpp"
#include "hisa/rng.hpp"
#include "hisa/tensor.hpp"

namespace hisa {

struct MhaParamSet {
  Parameter wq, wk, wv, wo;
  int num_heads = 1;

  MhaParamSet(const std::string& prefix, int d_model, int heads);
  void init(Rng& rng);
  MhaWeights weights(Tape& tape, bool frozen = false);
  void collect(std::vector<Parameter*>& out);
};

struct AffineParamSet {
  Parameter w, b;

  AffineParamSet(const std::string& prefix, int in_dim, int out_dim);
  void init(Rng& rng);
  AffineWeights weights(Tape& tape, bool frozen = false);
  void collect(std::vector<Parameter*>& out);
};

struct NormParamSet {
  Parameter gamma, beta;

  NormParamSet(const std::string& prefix, int dim);  // gamma 1, beta 0
  NormWeights weights(Tape& tape, bool frozen = false);
  void collect(std::vector<Parameter*>& out);
};

struct FfnParamSet {
  AffineParamSet hidden, out;

  FfnParamSet(const std::string& prefix, int d_model, int d_ff);
  void init(Rng& rng);
  FfnWeights weights(Tape& tape, bool frozen = false);
  void collect(std::vector<Parameter*>& out);
};

struct EncoderLayerParams {
  MhaParamSet self_attn;
  NormParamSet norm_self;
  FfnParamSet ffn;
  NormParamSet norm_ffn;

  EncoderLayerParams(const std::string& prefix, int d_model, int heads, int d_ff);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct DecoderLayerParams {
  MhaParamSet self_attn;       // causal self-attention over the prefix
  NormParamSet norm_self;
  AffineParamSet f_w;          // query transform feeding word-word attention
  MhaParamSet word_attn;       // attends into each utterance encoding
  NormParamSet norm_word;
  MhaParamSet utt_self_attn;   // self-attention across utterance summaries
  NormParamSet norm_utt;
  AffineParamSet f_u;          // query transform feeding word-utterance attention
  MhaParamSet word_utt_attn;   // attends over the utterance axis
  AffineParamSet f_l;          // output transform after word-utterance attention
  NormParamSet norm_cross;
  FfnParamSet ffn;
  NormParamSet norm_ffn;
  Parameter gate;              // (2*d_model, d_model), right-multiplied

  DecoderLayerParams(const std::string& prefix, int d_model, int heads, int d_ff);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct HisaConfig {
  int vocab_size = 0;
  int d_model = 512;
  int d_ff = 0;  // 0 means 4 * d_model
  int num_heads = 8;
  int enc_layers = 4;
  int dec_layers = 2;
  int max_utterance_len = 30;
  int max_context_utterances = 10;
  int max_target_len = 30;

  int ffn_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  void validate() const;
};

struct HisaModel {
  HisaConfig config;
  Parameter we;  // shared word embeddings (|V|, d_model)
  PositionalEncoding wpe;
  PositionalEncoding upe;
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  AffineParamSet out_proj;  // (d_model, |V|) plus bias

  HisaModel(const HisaConfig& cfg, Rng& init_rng);

  /// Every trainable parameter, in a stable construction order.
  std::vector<Parameter*> parameters();

  std::int64_t parameter_count();

  /// Lookup by name; null when absent.
  Parameter* find(const std::string& name);

  void zero_grad();
};

}  // namespace hisa
