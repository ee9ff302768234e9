// Attention-weight capture and the option bundle threaded through forward
// passes. Traces hold plain value copies (safe to keep after the tape dies);
// the on-tape weight handles needed for differentiable supervision travel
// separately through DecodeResult.
#pragma once

#include <optional>
#include <vector>

#include "hisa/rng.hpp"
#include "hisa/tensor.hpp"

namespace hisa {

struct WeightMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<Scalar> data;

  WeightMatrix() = default;
  WeightMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0) {}

  Scalar at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  Scalar& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// One decoder layer's captured weights.
struct LayerTrace {
  int layer_index = -1;
  /// Word-level attention into each utterance: [utterance][head], each [T, L_i].
  std::vector<std::vector<WeightMatrix>> word_weights;
  /// Word-utterance attention over the utterance axis: [head], each [T, n].
  std::vector<WeightMatrix> utt_weights;
};

struct AttentionTrace {
  std::vector<LayerTrace> layers;
  int total_layers = 0;

  /// The deepest captured layer (the one the supervision reads).
  const LayerTrace& final_layer() const;
};

struct ForwardOptions {
  /// Read parameters without binding gradients (inference).
  bool frozen = false;

  /// Capture sink; null disables capture entirely.
  AttentionTrace* trace = nullptr;
  /// Capture every decoder layer instead of only the deepest one.
  bool trace_all_layers = false;
  /// Also capture the (larger) word-level weights, not just utterance-level.
  bool trace_word_level = true;

  /// Optional regularization hook; 0 keeps forward passes deterministic.
  Scalar dropout_rate = 0;
  Rng* dropout_rng = nullptr;

  /// Test-only switches. Not reachable from the command line.
  bool use_utterance_positions = true;
  std::optional<Scalar> forced_gate;
};

}  // namespace hisa
