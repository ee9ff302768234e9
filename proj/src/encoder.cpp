#include "hisa/encoder.hpp"

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

}  // namespace

Tensor embed_utterance(Tape& tape, const std::vector<int>& tokens, HisaModel& model,
                       const ForwardOptions& opts) {
  if (tokens.empty()) throw ValueError("cannot embed an empty utterance");
  Tensor we = opts.frozen ? tape.frozen_leaf(model.we) : tape.leaf(model.we);
  Tensor emb = embedding_rows(we, tokens);
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  return add(emb, positional_encode(tape, model.wpe, positions));
}

Tensor encode_utterance(Tape& tape, const std::vector<int>& tokens,
                        const std::vector<std::uint8_t>& real, HisaModel& model,
                        const ForwardOptions& opts) {
  const int len = static_cast<int>(tokens.size());
  if (!real.empty() && static_cast<int>(real.size()) != len) {
    throw ShapeError("padding flags cover " + std::to_string(real.size()) + " positions but " +
                     std::to_string(len) + " tokens were given");
  }
  bool any_real = real.empty();
  for (std::uint8_t r : real) any_real = any_real || r != 0;
  if (!any_real) throw ValueError("utterance consists entirely of padding");

  Tensor x = maybe_dropout(embed_utterance(tape, tokens, model, opts), opts);
  if (model.encoder.empty()) return x;

  // Padding positions stay visible as queries (their outputs are ignored
  // downstream) but never serve as keys.
  BoolMask key_mask(len, len);
  for (int q = 0; q < len; ++q) {
    for (int k = 0; k < len; ++k) {
      key_mask.set(q, k, real.empty() || real[static_cast<std::size_t>(k)] != 0);
    }
  }

  for (auto& layer : model.encoder) {
    MhaWeights attn = layer.self_attn.weights(tape, opts.frozen);
    x = sublayer_wrap(layer.norm_self.weights(tape, opts.frozen), x, [&](const Tensor& t) {
      return maybe_dropout(mha(attn, t, t, t, &key_mask), opts);
    });
    FfnWeights f = layer.ffn.weights(tape, opts.frozen);
    x = sublayer_wrap(layer.norm_ffn.weights(tape, opts.frozen), x,
                      [&](const Tensor& t) { return maybe_dropout(ffn(f, t), opts); });
  }
  return x;
}

EncodedContext encode_context(Tape& tape, const std::vector<std::vector<int>>& utterances,
                              HisaModel& model, const ForwardOptions& opts) {
  if (utterances.empty()) throw ValueError("context has no utterances");
  if (static_cast<int>(utterances.size()) > model.config.max_context_utterances) {
    throw ValueError("context has " + std::to_string(utterances.size()) +
                     " utterances, limit is " +
                     std::to_string(model.config.max_context_utterances));
  }
  EncodedContext ctx;
  for (const auto& utt : utterances) {
    std::vector<std::uint8_t> real(utt.size(), 1);
    for (std::size_t j = 0; j < utt.size(); ++j) {
      if (utt[j] == kPadId) real[j] = 0;
    }
    ctx.utterances.push_back(encode_utterance(tape, utt, real, model, opts));
    ctx.tokens.push_back(utt);
    ctx.real.push_back(std::move(real));
  }
  return ctx;
}

}  // namespace hisa
