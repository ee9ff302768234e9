#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hisa/corpus.hpp"
#include "hisa/gds.hpp"
#include "hisa/trace.hpp"

namespace hisa {

// Degenerate inputs (empty hypotheses, nothing left after filtering) never
// throw here; they score 0 and set the degenerate flag, so evaluation always
// runs to completion.

struct BleuResult {
  Scalar score = 0;
  bool degenerate = false;
};

// Sentence-level BLEU-2: brevity penalty times the geometric mean of the
// add-one-smoothed modified 1-gram and 2-gram precisions. The effective
// reference length is the closest to the hypothesis length, ties to the
// shorter reference.
BleuResult bleu2_sentence(const std::vector<int>& hypothesis,
                          const std::vector<std::vector<int>>& references);

// Corpus-level BLEU-2: clipped counts and totals pooled over all examples
// before the (unsmoothed) geometric mean.
class Bleu2Accumulator {
 public:
  void add(const std::vector<int>& hypothesis, const std::vector<std::vector<int>>& references);
  Scalar score() const;
  long long examples() const { return examples_; }

 private:
  long long clipped_[2] = {0, 0};
  long long total_[2] = {0, 0};
  long long hyp_len_ = 0;
  long long ref_len_ = 0;
  long long examples_ = 0;
};

struct DistinctResult {
  Scalar score = 0;
  bool degenerate = false;
};

// Unique bigrams across the corpus divided by total bigrams across the
// corpus.
DistinctResult distinct2(const std::vector<std::vector<int>>& hypotheses);

struct EmbeddingScores {
  Scalar average = 0;
  Scalar extrema = 0;
  Scalar greedy = 0;
  bool degenerate = false;
};

// Core on explicit word vectors: average = cosine of the two mean vectors;
// extrema = cosine of per-dimension pools keeping the value of largest
// magnitude with its sign (earlier token wins exact ties); greedy = the
// symmetric mean of both directional best-cosine-match averages.
EmbeddingScores embedding_metrics_vectors(const std::vector<std::vector<Scalar>>& hyp_vectors,
                                          const std::vector<std::vector<Scalar>>& ref_vectors);

// Id-based wrapper: drops reserved ids, looks up word vectors in the
// embedder's table, and delegates to the vector core.
EmbeddingScores embedding_metrics(const std::vector<int>& hypothesis,
                                  const std::vector<int>& reference,
                                  const SentenceEmbedder& embedder);

struct CoherenceResult {
  Scalar score = 0;
  bool degenerate = false;
};

// Cosine between the mean word vector of all context tokens pooled as one
// bag and the mean word vector of the hypothesis.
CoherenceResult coherence(const std::vector<std::vector<int>>& context,
                          const std::vector<int>& hypothesis, const SentenceEmbedder& embedder);

struct AgreementResult {
  Scalar argmax_accuracy = 0;
  Scalar mean_mass_on_relevant = 0;
  long long examples = 0;
};

// How often the selection distribution's argmax hits the labeled relevant
// slot, and how much mass lands there on average. Ties go to the lowest
// slot.
AgreementResult attention_relevance_agreement(const std::vector<std::vector<Scalar>>& selections,
                                              const std::vector<int>& labels);
AgreementResult attention_relevance_agreement(const std::vector<AttentionTrace>& traces,
                                              const std::vector<int>& labels);

struct ExampleRecord {
  long long index = 0;
  Scalar bleu2 = 0;
  bool bleu2_degenerate = false;
  Scalar average = 0;
  Scalar extrema = 0;
  Scalar greedy = 0;
  bool embedding_degenerate = false;
  Scalar coherence = 0;
  bool coherence_degenerate = false;
};

struct EvalReport {
  long long example_count = 0;
  Scalar bleu2_corpus = 0;
  bool bleu2_corpus_degenerate = false;
  Scalar bleu2_sentence_mean = 0;
  Scalar distinct2 = 0;
  bool distinct2_degenerate = false;
  Scalar average = 0;
  Scalar extrema = 0;
  Scalar greedy = 0;
  Scalar coherence = 0;
  std::uint64_t embedder_seed = 0;
  std::string smoothing = "sentence-add-one,corpus-none";
  std::vector<ExampleRecord> examples;
};

// Scores hypotheses against each example's response (reserved ids stripped
// from both sides first). Per-example degenerate scores enter the corpus
// means as 0.
EvalReport evaluate_corpus(const std::vector<DialogueExample>& data,
                           const std::vector<std::vector<int>>& hypotheses,
                           const SentenceEmbedder& embedder, bool keep_examples = false);

std::string report_to_json(const EvalReport& report, bool include_examples = false);

}  // namespace hisa
