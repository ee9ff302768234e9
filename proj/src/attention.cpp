#include "hisa/attention.hpp"

#include <cmath>
#include <string>

#include "hisa/errors.hpp"

namespace hisa {

Tensor apply_affine(const AffineWeights& p, const Tensor& x) {
  return add_row_vector(matmul(x, p.w), p.b);
}

Tensor apply_layer_norm(const NormWeights& p, const Tensor& x) {
  return layer_norm(x, p.gamma, p.beta);
}

BoolMask causal_mask(int t) {
  if (t < 1) throw ValueError("causal_mask: length must be at least 1");
  BoolMask m(t, t);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

Tensor mha(const MhaWeights& p, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
           const BoolMask* mask, std::vector<Tensor>* capture) {
  const int d = q_in.dim(1);
  if (k_in.dim(1) != d || v_in.dim(1) != d) {
    throw ShapeError("mha: query, key, and value must share the model dimension");
  }
  if (k_in.dim(0) != v_in.dim(0)) {
    throw ShapeError("mha: key and value lengths differ, " + shape_str(k_in.shape()) + " vs " +
                     shape_str(v_in.shape()));
  }
  if (p.num_heads < 1 || d % p.num_heads != 0) {
    throw ShapeError("mha: model dimension " + std::to_string(d) +
                     " is not divisible into " + std::to_string(p.num_heads) + " heads");
  }
  const int tq = q_in.dim(0);
  const int tk = k_in.dim(0);
  if (mask != nullptr && (mask->rows != tq || mask->cols != tk)) {
    throw ShapeError("mha: mask " + std::to_string(mask->rows) + "x" +
                     std::to_string(mask->cols) + " does not match attention shape " +
                     std::to_string(tq) + "x" + std::to_string(tk));
  }
  const int dk = d / p.num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));

  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(k_in, p.wk);
  Tensor v = matmul(v_in, p.wv);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(p.num_heads));
  for (int h = 0; h < p.num_heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, dk);
    Tensor kh = slice_cols(k, h * dk, dk);
    Tensor vh = slice_cols(v, h * dk, dk);
    Tensor scores = affine(matmul(qh, transpose(kh)), scale, 0);
    Tensor weights = mask != nullptr ? masked_softmax(scores, *mask) : softmax(scores, 1);
    if (capture != nullptr) capture->push_back(weights);
    head_outputs.push_back(matmul(weights, vh));
  }
  Tensor merged = p.num_heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return matmul(merged, p.wo);
}

Tensor ffn(const FfnWeights& p, const Tensor& x) {
  return apply_affine(p.out, relu(apply_affine(p.hidden, x)));
}

Tensor sublayer_wrap(const NormWeights& norm, const Tensor& x,
                     const std::function<Tensor(const Tensor&)>& f) {
  return apply_layer_norm(norm, add(x, f(x)));
}

PositionalEncoding PositionalEncoding::sinusoidal(int max_positions, int d_model) {
  if (max_positions < 1 || d_model < 1) {
    throw ValueError("sinusoidal table needs positive extent and dimension");
  }
  PositionalEncoding pe;
  pe.max_positions = max_positions;
  pe.d_model = d_model;
  pe.table.assign(static_cast<std::size_t>(max_positions) * d_model, Scalar(0));
  for (int pos = 0; pos < max_positions; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double pair = i / 2;
      const double angle = pos / std::pow(10000.0, 2.0 * pair / d_model);
      pe.table[static_cast<std::size_t>(pos) * d_model + i] =
          static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

std::vector<Scalar> PositionalEncoding::row(int position) const {
  if (position < 0 || position >= max_positions) {
    throw ValueError("position " + std::to_string(position) + " outside table of " +
                     std::to_string(max_positions) + " rows");
  }
  const std::size_t base = static_cast<std::size_t>(position) * d_model;
  return std::vector<Scalar>(table.begin() + static_cast<std::ptrdiff_t>(base),
                             table.begin() + static_cast<std::ptrdiff_t>(base + d_model));
}

Tensor positional_encode(Tape& tape, const PositionalEncoding& table,
                         const std::vector<int>& positions) {
  if (positions.empty()) throw ValueError("positional_encode: empty position list");
  std::vector<Scalar> data;
  data.reserve(positions.size() * static_cast<std::size_t>(table.d_model));
  for (int pos : positions) {
    const std::vector<Scalar> r = table.row(pos);
    data.insert(data.end(), r.begin(), r.end());
  }
  return tape.constant({static_cast<int>(positions.size()), table.d_model}, std::move(data));
}

}  // namespace hisa
