// Context encoding: each utterance runs independently through the encoder
// stack, so E_i depends only on X_i and the shared parameters.
#pragma once

#include <cstdint>
#include <vector>

#include "hisa/model.hpp"
#include "hisa/trace.hpp"

namespace hisa {

struct EncodedContext {
  std::vector<Tensor> utterances;               // E_i, each [L_i, d_model]
  std::vector<std::vector<int>> tokens;         // token ids per utterance
  std::vector<std::vector<std::uint8_t>> real;  // 1 = real token, 0 = padding

  int n() const { return static_cast<int>(utterances.size()); }
};

/// Token embedding plus word-position rows; row j = WE[token_j] + WPE[j].
Tensor embed_utterance(Tape& tape, const std::vector<int>& tokens, HisaModel& model,
                       const ForwardOptions& opts = {});

/// Full encoder stack over one utterance. `real` marks non-padding positions
/// (empty means all real); padded positions are hidden as attention keys.
Tensor encode_utterance(Tape& tape, const std::vector<int>& tokens,
                        const std::vector<std::uint8_t>& real, HisaModel& model,
                        const ForwardOptions& opts = {});

/// Encodes every utterance of a context independently, preserving order.
EncodedContext encode_context(Tape& tape, const std::vector<std::vector<int>>& utterances,
                              HisaModel& model, const ForwardOptions& opts = {});

}  // namespace hisa
