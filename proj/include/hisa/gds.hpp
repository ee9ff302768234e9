#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hisa/corpus.hpp"
#include "hisa/model.hpp"
#include "hisa/tensor.hpp"
#include "hisa/trace.hpp"

namespace hisa {

// Deterministic sentence-embedding stand-in for a pretrained encoder. Each
// vocabulary id gets a fixed random vector drawn from a named seed; a
// sentence embeds as the (optionally idf-weighted) mean of its word vectors,
// L2-normalized. Sentences sharing words therefore land near each other,
// which is the property the distant-supervision target relies on.
class SentenceEmbedder {
 public:
  SentenceEmbedder(int vocab_size, std::uint64_t seed, int dim = 64);

  // Weighted mean of word vectors, then L2 normalization. Padding ids are
  // skipped; a sentence with nothing but padding is rejected.
  std::vector<Scalar> embed_sentence(const std::vector<int>& tokens) const;

  // The raw table row for one id, for oracle-style checks.
  std::vector<Scalar> word_vector(int id) const;

  // Installs per-id weights; size must equal vocab_size. Switches the
  // method identifier to "bow-idf".
  void set_idf(std::vector<Scalar> idf);

  int dim() const { return dim_; }
  int vocab_size() const { return vocab_size_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& method() const { return method_; }

 private:
  int vocab_size_;
  int dim_;
  std::uint64_t seed_;
  std::string method_;
  std::vector<Scalar> table_;
  std::vector<Scalar> idf_;
};

// Smoothed inverse document frequency per id over tokenized documents:
// log((1 + N) / (1 + df)) + 1.
std::vector<Scalar> compute_idf(const std::vector<std::vector<int>>& documents, int vocab_size);

// Softmax over raw relevance scores, in one place so its shift invariance
// can be checked directly.
std::vector<Scalar> selection_softmax(const std::vector<Scalar>& dots);

// Distant-supervision target: softmax over the dot products between each
// context utterance's embedding and the response's embedding. Sequence-start
// and sequence-end ids in the response are ignored.
std::vector<Scalar> gds_target(const std::vector<std::vector<int>>& context,
                               const std::vector<int>& response, const SentenceEmbedder& embedder);

// Fills each example's cached gds_p. The target depends only on the data,
// never on model parameters, so it is computed once per corpus.
void precompute_gds_targets(std::vector<DialogueExample>& examples,
                            const SentenceEmbedder& embedder);

// Mean negative log-likelihood of the target ids under row-wise softmax of
// the logits. Padding targets are excluded from both the sum and the count.
Scalar mle_loss(const Tensor& logits, const std::vector<int>& targets);
Tensor mle_loss_graph(Tape& tape, Tensor logits, const std::vector<int>& targets);

// KL(p || q) with q floored at 1e-12 and 0 * log 0 read as 0.
Scalar kl_loss(const std::vector<Scalar>& p, const std::vector<Scalar>& q);
Tensor kl_loss_graph(Tape& tape, const std::vector<Scalar>& p, Tensor q);

// Time-averaged sum of p * log p over the vocabulary: the negative entropy
// of the prediction rows, always in [-ln |V|, 0].
Scalar mce_loss(const Tensor& logits);
Tensor mce_loss_graph(Tape& tape, Tensor logits);

struct LossBreakdown {
  Scalar mle = 0;
  Scalar kl = 0;
  Scalar mce = 0;
  Scalar total = 0;
  Scalar eta1 = 1;
  Scalar eta2 = 1;
};

// The combined objective with every term still on the tape, plus the two
// distributions behind the KL term for inspection.
struct LossGraph {
  Tensor mle;
  Tensor kl;
  Tensor mce;
  Tensor total;
  std::vector<Scalar> p;
  std::vector<Scalar> q;
};

// One teacher-forced pass producing all three loss terms. The selection
// estimate Q comes from the final decoder layer's word-utterance attention;
// the target P is the example's cached gds_p, or is computed on the spot
// when the cache is empty. total = mle + eta1 * kl + eta2 * mce.
LossGraph combined_loss_graph(Tape& tape, const DialogueExample& example, HisaModel& model,
                              const SentenceEmbedder& embedder, Scalar eta1, Scalar eta2,
                              const ForwardOptions& base_opts = {});

// Value-only variant of combined_loss_graph.
LossBreakdown combined_loss(const DialogueExample& example, HisaModel& model,
                            const SentenceEmbedder& embedder, Scalar eta1, Scalar eta2);

}  // namespace hisa
