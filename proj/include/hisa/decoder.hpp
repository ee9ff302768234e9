// The hierarchical decoder: each layer runs five residual-wrapped sub-layers
// (causal self-attention, word-level attention into each utterance,
// utterance-level self-attention, word-utterance attention, feed-forward)
// and fuses the word-level and utterance-level streams through a sigmoid
// gate. Utterance-selection weights are capturable per layer and, for the
// deepest layer, kept on-tape so a divergence loss can reach them.
#pragma once

#include <vector>

#include "hisa/encoder.hpp"
#include "hisa/model.hpp"
#include "hisa/trace.hpp"

namespace hisa {

struct DecodeResult {
  Tensor logits;  // [T, |V|]
  /// Deepest layer's word-utterance attention weights, one [T, n] tensor per
  /// head, still differentiable.
  std::vector<Tensor> final_utt_weights;
};

/// One decoder layer. `layer_trace` (optional) receives value copies of this
/// layer's attention weights; `utt_weight_tensors` (optional) receives the
/// on-tape [T, n] word-utterance weight handles per head.
Tensor decoder_layer(Tape& tape, const Tensor& d_prev, const EncodedContext& ctx,
                     DecoderLayerParams& params, const PositionalEncoding& upe,
                     const ForwardOptions& opts, LayerTrace* layer_trace = nullptr,
                     std::vector<Tensor>* utt_weight_tensors = nullptr);

/// Embeds a BOS-led prefix, runs every decoder layer, and projects to
/// vocabulary logits. Softmax of row t is P(y_t | y_<t, context).
DecodeResult decode_forward(Tape& tape, const std::vector<int>& prefix_ids,
                            const EncodedContext& ctx, HisaModel& model,
                            const ForwardOptions& opts = {});

/// Utterance-selection estimate: head- and time-averaged word-utterance
/// weights of the deepest captured layer. Length-n distribution.
std::vector<Scalar> extract_q_distribution(const AttentionTrace& trace);

/// Same average built from the on-tape handles, for differentiable use.
Tensor extract_q_tensor(Tape& tape, const std::vector<Tensor>& final_utt_weights);

}  // namespace hisa
