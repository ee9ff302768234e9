#include "hisa/gds.hpp"

#include <algorithm>
#include <cmath>

#include "hisa/decoder.hpp"
#include "hisa/encoder.hpp"
#include "hisa/errors.hpp"
#include "hisa/rng.hpp"
#include "hisa/tokens.hpp"

namespace hisa {

namespace {

constexpr Scalar kQFloor = 1e-12;

// Row-wise log-sum-exp with max subtraction, shared by the value-side
// losses.
Scalar log_sum_exp_row(const std::vector<Scalar>& v, std::size_t start, std::size_t len) {
  Scalar hi = v[start];
  for (std::size_t j = 1; j < len; ++j) hi = std::max(hi, v[start + j]);
  Scalar total = 0;
  for (std::size_t j = 0; j < len; ++j) total += std::exp(v[start + j] - hi);
  return hi + std::log(total);
}

void require_logit_matrix(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("logit rows must form a matrix, got rank " + std::to_string(logits.rank()));
  }
  if (logits.dim(0) < 1) throw ValueError("logit matrix has no rows");
}

}  // namespace

SentenceEmbedder::SentenceEmbedder(int vocab_size, std::uint64_t seed, int dim)
    : vocab_size_(vocab_size), dim_(dim), seed_(seed), method_("bow") {
  if (vocab_size < 1) throw ConfigError("embedder vocab_size must be positive");
  if (dim < 1) throw ConfigError("embedder dim must be positive");
  Rng rng(seed);
  table_.resize(static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(dim));
  for (auto& x : table_) x = static_cast<Scalar>(rng.normal());
}

std::vector<Scalar> SentenceEmbedder::word_vector(int id) const {
  if (id < 0 || id >= vocab_size_) {
    throw ValueError("token id " + std::to_string(id) + " outside embedder vocabulary of size " +
                     std::to_string(vocab_size_));
  }
  const auto row = static_cast<std::size_t>(id) * static_cast<std::size_t>(dim_);
  return std::vector<Scalar>(table_.begin() + static_cast<std::ptrdiff_t>(row),
                             table_.begin() + static_cast<std::ptrdiff_t>(row + static_cast<std::size_t>(dim_)));
}

void SentenceEmbedder::set_idf(std::vector<Scalar> idf) {
  if (static_cast<int>(idf.size()) != vocab_size_) {
    throw ValueError("idf table size " + std::to_string(idf.size()) +
                     " does not match vocabulary size " + std::to_string(vocab_size_));
  }
  idf_ = std::move(idf);
  method_ = "bow-idf";
}

std::vector<Scalar> SentenceEmbedder::embed_sentence(const std::vector<int>& tokens) const {
  // Accumulating in sorted-id order makes the bag-of-words property exact:
  // any permutation of the same tokens produces bit-identical output.
  std::vector<int> ids;
  for (int id : tokens) {
    if (id == kPadId) continue;
    if (id < 0 || id >= vocab_size_) {
      throw ValueError("token id " + std::to_string(id) + " outside embedder vocabulary of size " +
                       std::to_string(vocab_size_));
    }
    ids.push_back(id);
  }
  if (ids.empty()) {
    throw ValueError("cannot embed a sentence with no non-padding tokens");
  }
  std::sort(ids.begin(), ids.end());

  std::vector<Scalar> out(static_cast<std::size_t>(dim_), 0);
  Scalar weight_total = 0;
  for (int id : ids) {
    const Scalar w = idf_.empty() ? Scalar(1) : idf_[static_cast<std::size_t>(id)];
    const auto row = static_cast<std::size_t>(id) * static_cast<std::size_t>(dim_);
    for (int j = 0; j < dim_; ++j) out[static_cast<std::size_t>(j)] += w * table_[row + static_cast<std::size_t>(j)];
    weight_total += w;
  }
  Scalar norm_sq = 0;
  for (auto& x : out) {
    x /= weight_total;
    norm_sq += x * x;
  }
  const Scalar norm = std::sqrt(norm_sq);
  if (norm > 0) {
    for (auto& x : out) x /= norm;
  }
  return out;
}

std::vector<Scalar> compute_idf(const std::vector<std::vector<int>>& documents, int vocab_size) {
  std::vector<long long> df(static_cast<std::size_t>(vocab_size), 0);
  std::vector<char> seen(static_cast<std::size_t>(vocab_size), 0);
  for (const auto& doc : documents) {
    std::fill(seen.begin(), seen.end(), 0);
    for (int id : doc) {
      if (id >= 0 && id < vocab_size && !seen[static_cast<std::size_t>(id)]) {
        seen[static_cast<std::size_t>(id)] = 1;
        ++df[static_cast<std::size_t>(id)];
      }
    }
  }
  const auto n = static_cast<Scalar>(documents.size());
  std::vector<Scalar> idf(static_cast<std::size_t>(vocab_size));
  for (std::size_t i = 0; i < idf.size(); ++i) {
    idf[i] = std::log((1 + n) / (1 + static_cast<Scalar>(df[i]))) + 1;
  }
  return idf;
}

std::vector<Scalar> selection_softmax(const std::vector<Scalar>& dots) {
  if (dots.empty()) throw ValueError("selection softmax needs at least one score");
  const Scalar hi = *std::max_element(dots.begin(), dots.end());
  std::vector<Scalar> out(dots.size());
  Scalar total = 0;
  for (std::size_t i = 0; i < dots.size(); ++i) {
    out[i] = std::exp(dots[i] - hi);
    total += out[i];
  }
  for (auto& x : out) x /= total;
  return out;
}

std::vector<Scalar> gds_target(const std::vector<std::vector<int>>& context,
                               const std::vector<int>& response, const SentenceEmbedder& embedder) {
  if (context.empty()) throw ValueError("distant-supervision target needs at least one utterance");
  std::vector<int> plain;
  for (int id : response) {
    if (id != kBosId && id != kEosId) plain.push_back(id);
  }
  const std::vector<Scalar> y = embedder.embed_sentence(plain);
  std::vector<Scalar> dots;
  dots.reserve(context.size());
  for (const auto& utterance : context) {
    const std::vector<Scalar> x = embedder.embed_sentence(utterance);
    Scalar dot = 0;
    for (std::size_t j = 0; j < y.size(); ++j) dot += x[j] * y[j];
    dots.push_back(dot);
  }
  return selection_softmax(dots);
}

void precompute_gds_targets(std::vector<DialogueExample>& examples,
                            const SentenceEmbedder& embedder) {
  for (auto& ex : examples) ex.gds_p = gds_target(ex.context, ex.response, embedder);
}

Scalar mle_loss(const Tensor& logits, const std::vector<int>& targets) {
  require_logit_matrix(logits);
  const auto t_len = static_cast<std::size_t>(logits.dim(0));
  const auto vocab = static_cast<std::size_t>(logits.dim(1));
  if (targets.size() != t_len) {
    throw ShapeError("got " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " logit rows");
  }
  const std::vector<Scalar>& v = logits.value();
  Scalar total = 0;
  long long count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const int y = targets[t];
    if (y == kPadId) continue;
    if (y < 0 || y >= static_cast<int>(vocab)) {
      throw ValueError("target id " + std::to_string(y) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    const Scalar lse = log_sum_exp_row(v, t * vocab, vocab);
    total += lse - v[t * vocab + static_cast<std::size_t>(y)];
    ++count;
  }
  if (count == 0) throw ValueError("every target position is padding");
  return total / static_cast<Scalar>(count);
}

Tensor mle_loss_graph(Tape& tape, Tensor logits, const std::vector<int>& targets) {
  require_logit_matrix(logits);
  const auto t_len = static_cast<std::size_t>(logits.dim(0));
  if (targets.size() != t_len) {
    throw ShapeError("got " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " logit rows");
  }
  long long count = 0;
  for (int y : targets) count += y != kPadId;
  if (count == 0) throw ValueError("every target position is padding");

  // Padding rows still need an in-range gather index; their weight is zero.
  std::vector<int> safe = targets;
  std::vector<Scalar> weights(t_len, 0);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (targets[t] == kPadId) {
      safe[t] = 0;
    } else {
      weights[t] = Scalar(-1) / static_cast<Scalar>(count);
    }
  }
  Tensor picked = gather_per_row(log_softmax(logits, 1), safe);
  return sum(mul(picked, tape.constant({static_cast<int>(t_len)}, weights)));
}

Scalar kl_loss(const std::vector<Scalar>& p, const std::vector<Scalar>& q) {
  if (p.size() != q.size()) {
    throw ShapeError("distribution lengths differ: " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  }
  if (p.empty()) throw ValueError("distributions must be non-empty");
  Scalar total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || q[i] < 0) throw ValueError("distribution entries must be non-negative");
    if (p[i] == 0) continue;
    total += p[i] * std::log(p[i] / std::max(q[i], kQFloor));
  }
  return total;
}

Tensor kl_loss_graph(Tape&, const std::vector<Scalar>& p, Tensor q) {
  return kl_divergence(p, q);
}

Scalar mce_loss(const Tensor& logits) {
  require_logit_matrix(logits);
  const auto t_len = static_cast<std::size_t>(logits.dim(0));
  const auto vocab = static_cast<std::size_t>(logits.dim(1));
  const std::vector<Scalar>& v = logits.value();
  Scalar total = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const Scalar lse = log_sum_exp_row(v, t * vocab, vocab);
    for (std::size_t j = 0; j < vocab; ++j) {
      const Scalar logp = v[t * vocab + j] - lse;
      const Scalar prob = std::exp(logp);
      if (prob > 0) total += prob * logp;
    }
  }
  return total / static_cast<Scalar>(t_len);
}

Tensor mce_loss_graph(Tape&, Tensor logits) {
  require_logit_matrix(logits);
  const Scalar inv_t = Scalar(1) / static_cast<Scalar>(logits.dim(0));
  Tensor plogp = mul(softmax(logits, 1), log_softmax(logits, 1));
  return affine(sum(plogp), inv_t, 0);
}

LossGraph combined_loss_graph(Tape& tape, const DialogueExample& example, HisaModel& model,
                              const SentenceEmbedder& embedder, Scalar eta1, Scalar eta2,
                              const ForwardOptions& base_opts) {
  if (example.response.empty()) throw ValueError("example has an empty response");

  LossGraph out;
  out.p = example.gds_p.size() == example.context.size()
              ? example.gds_p
              : gds_target(example.context, example.response, embedder);

  std::vector<int> prefix;
  prefix.reserve(example.response.size());
  prefix.push_back(kBosId);
  prefix.insert(prefix.end(), example.response.begin(), example.response.end() - 1);

  EncodedContext ctx = encode_context(tape, example.context, model, base_opts);
  DecodeResult res = decode_forward(tape, prefix, ctx, model, base_opts);

  Tensor q = extract_q_tensor(tape, res.final_utt_weights);
  out.q.assign(q.value().begin(), q.value().end());

  out.mle = mle_loss_graph(tape, res.logits, example.response);
  out.kl = kl_loss_graph(tape, out.p, q);
  out.mce = mce_loss_graph(tape, res.logits);
  out.total = add(out.mle, add(affine(out.kl, eta1, 0), affine(out.mce, eta2, 0)));
  return out;
}

LossBreakdown combined_loss(const DialogueExample& example, HisaModel& model,
                            const SentenceEmbedder& embedder, Scalar eta1, Scalar eta2) {
  Tape tape;
  ForwardOptions opts;
  opts.frozen = true;
  const LossGraph g = combined_loss_graph(tape, example, model, embedder, eta1, eta2, opts);
  LossBreakdown out;
  out.mle = g.mle.item();
  out.kl = g.kl.item();
  out.mce = g.mce.item();
  out.total = g.total.item();
  out.eta1 = eta1;
  out.eta2 = eta2;
  return out;
}

}  // namespace hisa
