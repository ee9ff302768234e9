// Shared sublayer vocabulary: multi-head attention, sinusoidal position
// tables, the position-wise feed-forward block, and post-norm residual
// wrapping. Everything here operates on tape tensors; parameter ownership
// lives in model.hpp.
#pragma once

#include <functional>
#include <vector>

#include "hisa/tensor.hpp"

namespace hisa {

// Weight handles already placed on a tape. Projections are right-multipliers:
// a [T, d] activation times a (d, d) matrix.
struct MhaWeights {
  Tensor wq, wk, wv, wo;
  int num_heads = 1;
};

struct AffineWeights {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
};

struct NormWeights {
  Tensor gamma, beta;
};

struct FfnWeights {
  AffineWeights hidden, out;
};

Tensor apply_affine(const AffineWeights& p, const Tensor& x);

Tensor apply_layer_norm(const NormWeights& p, const Tensor& x);

/// Visibility mask for autoregressive decoding: (i, j) visible iff j <= i.
BoolMask causal_mask(int t);

/// Scaled dot-product attention with num_heads parallel heads, concatenated
/// and output-projected. `mask` (if given) is [T_q, T_k] visibility; a row
/// with no visible key is an error. `capture` (if given) receives one
/// [T_q, T_k] post-softmax weight tensor per head, in head order.
Tensor mha(const MhaWeights& p, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
           const BoolMask* mask = nullptr, std::vector<Tensor>* capture = nullptr);

/// Two affine maps with a rectifier between, applied position-wise.
Tensor ffn(const FfnWeights& p, const Tensor& x);

/// Post-norm residual: layer_norm(x + f(x)).
Tensor sublayer_wrap(const NormWeights& norm, const Tensor& x,
                     const std::function<Tensor(const Tensor&)>& f);

/// Fixed sinusoidal position table. Row 0 is [0, 1, 0, 1, ...]; row p
/// interleaves sin(p / 10000^(2i/d)) and cos(p / 10000^(2i/d)).
struct PositionalEncoding {
  int max_positions = 0;
  int d_model = 0;
  std::vector<Scalar> table;  // row-major (max_positions, d_model)

  static PositionalEncoding sinusoidal(int max_positions, int d_model);

  /// Bounds-checked copy of one row.
  std::vector<Scalar> row(int position) const;
};

/// Stacks the requested rows into a constant [len(positions), d_model] tensor.
Tensor positional_encode(Tape& tape, const PositionalEncoding& table,
                         const std::vector<int>& positions);

}  // namespace hisa
