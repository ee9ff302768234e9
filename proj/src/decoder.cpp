#include "hisa/decoder.hpp"

#include <numeric>
#include <string>

#include "hisa/errors.hpp"
#include "hisa/tokens.hpp"

namespace hisa {

namespace {

Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opts) {
  if (opts.dropout_rate <= 0 || opts.dropout_rng == nullptr) return x;
  return dropout(x, opts.dropout_rate, *opts.dropout_rng);
}

WeightMatrix value_copy(const Tensor& t) {
  WeightMatrix m(t.dim(0), t.dim(1));
  m.data = t.value();
  return m;
}

/// Per-utterance visibility of encoder keys for a [T, L_i] attention.
BoolMask utterance_key_mask(int t_rows, const std::vector<std::uint8_t>& real, int len) {
  BoolMask mask(t_rows, len);
  for (int q = 0; q < t_rows; ++q) {
    for (int k = 0; k < len; ++k) {
      mask.set(q, k, real.empty() || real[static_cast<std::size_t>(k)] != 0);
    }
  }
  return mask;
}

}  // namespace

const LayerTrace& AttentionTrace::final_layer() const {
  if (layers.empty()) throw ValueError("attention trace captured no layers");
  const LayerTrace* deepest = &layers.front();
  for (const LayerTrace& l : layers) {
    if (l.layer_index > deepest->layer_index) deepest = &l;
  }
  return *deepest;
}

Tensor decoder_layer(Tape& tape, const Tensor& d_prev, const EncodedContext& ctx,
                     DecoderLayerParams& params, const PositionalEncoding& upe,
                     const ForwardOptions& opts, LayerTrace* layer_trace,
                     std::vector<Tensor>* utt_weight_tensors) {
  const int n = ctx.n();
  if (n == 0) throw ValueError("decoder layer needs a non-empty context");
  const int t_len = d_prev.dim(0);
  const int d = d_prev.dim(1);
  const bool frozen = opts.frozen;

  // (a) causal self-attention over the response prefix.
  BoolMask causal = causal_mask(t_len);
  MhaWeights self_w = params.self_attn.weights(tape, frozen);
  Tensor m = sublayer_wrap(params.norm_self.weights(tape, frozen), d_prev, [&](const Tensor& x) {
    return maybe_dropout(mha(self_w, x, x, x, &causal), opts);
  });

  // (b) word-level attention: the transformed prefix queries each utterance
  // encoding independently, yielding one summary stream per utterance.
  Tensor fw_m = apply_affine(params.f_w.weights(tape, frozen), m);
  MhaWeights word_w = params.word_attn.weights(tape, frozen);
  NormWeights norm_word = params.norm_word.weights(tape, frozen);
  std::vector<Tensor> u;  // U_i, each [T, d]
  u.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Tensor& e_i = ctx.utterances[static_cast<std::size_t>(i)];
    BoolMask key_mask = utterance_key_mask(t_len, ctx.real[static_cast<std::size_t>(i)], e_i.dim(0));
    std::vector<Tensor> capture;
    const bool want_words = layer_trace != nullptr && opts.trace_word_level;
    Tensor attended = mha(word_w, fw_m, e_i, e_i, &key_mask, want_words ? &capture : nullptr);
    u.push_back(apply_layer_norm(norm_word, add(fw_m, maybe_dropout(attended, opts))));
    if (want_words) {
      std::vector<WeightMatrix> heads;
      heads.reserve(capture.size());
      for (const Tensor& w : capture) heads.push_back(value_copy(w));
      layer_trace->word_weights.push_back(std::move(heads));
    }
  }

  // Utterance-position rows, added to every decoding position of U_i.
  std::vector<Tensor> u_tilde = u;
  if (opts.use_utterance_positions) {
    for (int i = 0; i < n; ++i) {
      Tensor upe_row = tape.constant({d}, upe.row(i));
      u_tilde[static_cast<std::size_t>(i)] =
          add_row_vector(u[static_cast<std::size_t>(i)], upe_row);
    }
  }

  // (c) utterance-level self-attention, independently per decoding position:
  // the n summaries at position t attend to each other.
  // (d) word-utterance attention: the transformed prefix row queries that
  // position's utterance summaries, localizing which utterance matters.
  Tensor fu_m = apply_affine(params.f_u.weights(tape, frozen), m);
  MhaWeights utt_w = params.utt_self_attn.weights(tape, frozen);
  NormWeights norm_utt = params.norm_utt.weights(tape, frozen);
  MhaWeights cross_w = params.word_utt_attn.weights(tape, frozen);
  AffineWeights fl = params.f_l.weights(tape, frozen);
  NormWeights norm_cross = params.norm_cross.weights(tape, frozen);

  const int heads = params.word_utt_attn.num_heads;
  // Per head, the per-position [1, n] weight rows to be stacked into [T, n].
  std::vector<std::vector<Tensor>> cross_rows(static_cast<std::size_t>(heads));
  const bool want_utt = layer_trace != nullptr || utt_weight_tensors != nullptr;

  std::vector<Tensor> c_rows;
  c_rows.reserve(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    std::vector<Tensor> stack_rows;
    stack_rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      stack_rows.push_back(slice_rows(u_tilde[static_cast<std::size_t>(i)], t, 1));
    }
    Tensor stacked = n == 1 ? stack_rows[0] : concat(stack_rows, 0);  // [n, d]
    Tensor h_t = sublayer_wrap(norm_utt, stacked, [&](const Tensor& x) {
      return maybe_dropout(mha(utt_w, x, x, x), opts);
    });

    Tensor q_t = slice_rows(fu_m, t, 1);  // [1, d]
    std::vector<Tensor> capture;
    Tensor att = mha(cross_w, q_t, h_t, h_t, nullptr, want_utt ? &capture : nullptr);
    for (int h = 0; h < heads && want_utt; ++h) {
      cross_rows[static_cast<std::size_t>(h)].push_back(capture[static_cast<std::size_t>(h)]);
    }
    Tensor transformed = maybe_dropout(apply_affine(fl, att), opts);
    c_rows.push_back(apply_layer_norm(norm_cross, add(q_t, transformed)));
  }
  Tensor c = t_len == 1 ? c_rows[0] : concat(c_rows, 0);  // [T, d]

  if (want_utt) {
    for (int h = 0; h < heads; ++h) {
      auto& rows = cross_rows[static_cast<std::size_t>(h)];
      Tensor per_head = t_len == 1 ? rows[0] : concat(rows, 0);  // [T, n]
      if (layer_trace != nullptr) layer_trace->utt_weights.push_back(value_copy(per_head));
      if (utt_weight_tensors != nullptr) utt_weight_tensors->push_back(per_head);
    }
  }

  // (e) feed-forward.
  FfnWeights f = params.ffn.weights(tape, frozen);
  Tensor fout = sublayer_wrap(params.norm_ffn.weights(tape, frozen), c, [&](const Tensor& x) {
    return maybe_dropout(ffn(f, x), opts);
  });

  // (f) fusion gate between the utterance-level stream and the last (query)
  // utterance's word-level stream.
  const Tensor& u_n = u[static_cast<std::size_t>(n - 1)];
  Tensor lambda;
  if (opts.forced_gate.has_value()) {
    lambda = tape.constant({t_len, d}, std::vector<Scalar>(
                                           static_cast<std::size_t>(t_len) * d,
                                           *opts.forced_gate));
  } else {
    Tensor gate_w = frozen ? tape.frozen_leaf(params.gate) : tape.leaf(params.gate);
    lambda = sigmoid(matmul(concat({u_n, fout}, 1), gate_w));
  }
  Tensor ones = tape.constant({t_len, d},
                              std::vector<Scalar>(static_cast<std::size_t>(t_len) * d, 1));
  return add(mul(lambda, fout), mul(sub(ones, lambda), u_n));
}

DecodeResult decode_forward(Tape& tape, const std::vector<int>& prefix_ids,
                            const EncodedContext& ctx, HisaModel& model,
                            const ForwardOptions& opts) {
  if (prefix_ids.empty()) throw ValueError("decoder prefix is empty");
  if (prefix_ids.front() != kBosId) {
    throw ValueError("decoder prefix must start with the BOS token");
  }
  if (static_cast<int>(prefix_ids.size()) > model.config.max_target_len + 1) {
    throw ValueError("decoder prefix of " + std::to_string(prefix_ids.size()) +
                     " exceeds the target length limit of " +
                     std::to_string(model.config.max_target_len + 1));
  }
  if (ctx.n() == 0) throw ValueError("cannot decode against an empty context");

  Tensor we = opts.frozen ? tape.frozen_leaf(model.we) : tape.leaf(model.we);
  std::vector<int> positions(prefix_ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(embedding_rows(we, prefix_ids), positional_encode(tape, model.wpe, positions));
  x = maybe_dropout(x, opts);

  DecodeResult result;
  const int last = static_cast<int>(model.decoder.size()) - 1;
  for (int l = 0; l <= last; ++l) {
    const bool is_last = l == last;
    LayerTrace* layer_trace = nullptr;
    if (opts.trace != nullptr && (opts.trace_all_layers || is_last)) {
      opts.trace->layers.emplace_back();
      layer_trace = &opts.trace->layers.back();
      layer_trace->layer_index = l;
    }
    x = decoder_layer(tape, x, ctx, model.decoder[static_cast<std::size_t>(l)], model.upe, opts,
                      layer_trace, is_last ? &result.final_utt_weights : nullptr);
  }
  if (opts.trace != nullptr) opts.trace->total_layers = static_cast<int>(model.decoder.size());

  result.logits = apply_affine(model.out_proj.weights(tape, opts.frozen), x);
  return result;
}

std::vector<Scalar> extract_q_distribution(const AttentionTrace& trace) {
  const LayerTrace& layer = trace.final_layer();
  if (layer.utt_weights.empty()) {
    throw ValueError("trace holds no word-utterance weights");
  }
  const int t_len = layer.utt_weights.front().rows;
  const int n = layer.utt_weights.front().cols;
  std::vector<Scalar> q(static_cast<std::size_t>(n), 0);
  for (const WeightMatrix& head : layer.utt_weights) {
    for (int t = 0; t < t_len; ++t) {
      for (int i = 0; i < n; ++i) q[static_cast<std::size_t>(i)] += head.at(t, i);
    }
  }
  const Scalar denom = static_cast<Scalar>(layer.utt_weights.size()) * t_len;
  for (auto& v : q) v /= denom;
  return q;
}

Tensor extract_q_tensor(Tape& tape, const std::vector<Tensor>& final_utt_weights) {
  if (final_utt_weights.empty()) {
    throw ValueError("no on-tape word-utterance weights were captured");
  }
  // Sum the [T, n] head matrices, then average over heads and time at once:
  // column means of the per-head average.
  Tensor total = final_utt_weights[0];
  for (std::size_t h = 1; h < final_utt_weights.size(); ++h) {
    total = add(total, final_utt_weights[h]);
  }
  const Scalar denom =
      static_cast<Scalar>(final_utt_weights.size()) * static_cast<Scalar>(total.dim(0));
  (void)tape;
  return affine(sum_axis(total, 0), Scalar(1) / denom, 0);
}

}  // namespace hisa
