#include "hisa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>

#include <json.hpp>

#include "hisa/decoder.hpp"
#include "hisa/errors.hpp"
#include "hisa/tokens.hpp"

namespace hisa {

namespace {

using NgramCounts = std::map<std::vector<int>, long long>;

NgramCounts count_ngrams(const std::vector<int>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::vector<int> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                          tokens.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(n)));
    ++counts[gram];
  }
  return counts;
}

struct ClippedCounts {
  long long clipped = 0;
  long long total = 0;
};

ClippedCounts modified_precision_counts(const std::vector<int>& hypothesis,
                                        const std::vector<std::vector<int>>& references, int n) {
  ClippedCounts out;
  NgramCounts hyp_counts = count_ngrams(hypothesis, n);
  NgramCounts max_ref_counts;
  for (const auto& ref : references) {
    NgramCounts ref_counts = count_ngrams(ref, n);
    for (const auto& [gram, count] : ref_counts) {
      long long& slot = max_ref_counts[gram];
      slot = std::max(slot, count);
    }
  }
  for (const auto& [gram, count] : hyp_counts) {
    out.total += count;
    auto it = max_ref_counts.find(gram);
    if (it != max_ref_counts.end()) out.clipped += std::min(count, it->second);
  }
  return out;
}

// Closest reference length to the hypothesis length, ties to the shorter
// reference.
long long effective_reference_length(std::size_t hyp_len,
                                     const std::vector<std::vector<int>>& references) {
  long long best = -1;
  long long best_gap = -1;
  for (const auto& ref : references) {
    auto len = static_cast<long long>(ref.size());
    long long gap = std::llabs(len - static_cast<long long>(hyp_len));
    if (best < 0 || gap < best_gap || (gap == best_gap && len < best)) {
      best = len;
      best_gap = gap;
    }
  }
  return best;
}

Scalar brevity_penalty(long long hyp_len, long long ref_len) {
  if (hyp_len <= 0) return 0;
  if (hyp_len >= ref_len) return 1;
  return std::exp(1.0 - static_cast<Scalar>(ref_len) / static_cast<Scalar>(hyp_len));
}

bool all_empty(const std::vector<std::vector<int>>& references) {
  for (const auto& ref : references) {
    if (!ref.empty()) return false;
  }
  return true;
}

bool is_reserved_id(int id) { return id >= 0 && id < kReservedTokens; }

std::vector<int> strip_reserved(const std::vector<int>& tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int id : tokens) {
    if (!is_reserved_id(id)) out.push_back(id);
  }
  return out;
}

Scalar vector_norm(const std::vector<Scalar>& v) {
  Scalar sum = 0;
  for (Scalar x : v) sum += x * x;
  return std::sqrt(sum);
}

Scalar cosine_or_zero(const std::vector<Scalar>& a, const std::vector<Scalar>& b, bool* degenerate) {
  Scalar na = vector_norm(a);
  Scalar nb = vector_norm(b);
  if (na < 1e-12 || nb < 1e-12) {
    if (degenerate != nullptr) *degenerate = true;
    return 0;
  }
  Scalar dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

std::vector<Scalar> mean_vector(const std::vector<std::vector<Scalar>>& vectors) {
  std::vector<Scalar> mean(vectors.front().size(), 0.0);
  for (const auto& v : vectors) {
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += v[d];
  }
  for (Scalar& x : mean) x /= static_cast<Scalar>(vectors.size());
  return mean;
}

// Per dimension, the value of largest magnitude across the sequence, sign
// preserved; the earliest token wins exact magnitude ties.
std::vector<Scalar> extrema_pool(const std::vector<std::vector<Scalar>>& vectors) {
  std::vector<Scalar> pool = vectors.front();
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    for (std::size_t d = 0; d < pool.size(); ++d) {
      if (std::fabs(vectors[i][d]) > std::fabs(pool[d])) pool[d] = vectors[i][d];
    }
  }
  return pool;
}

Scalar greedy_direction(const std::vector<std::vector<Scalar>>& from,
                        const std::vector<std::vector<Scalar>>& to) {
  Scalar sum = 0;
  for (const auto& fv : from) {
    Scalar best = -2;
    for (const auto& tv : to) {
      best = std::max(best, cosine_or_zero(fv, tv, nullptr));
    }
    sum += best;
  }
  return sum / static_cast<Scalar>(from.size());
}

std::vector<std::vector<Scalar>> lookup_vectors(const std::vector<int>& ids,
                                                const SentenceEmbedder& embedder) {
  std::vector<std::vector<Scalar>> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(embedder.word_vector(id));
  return out;
}

}  // namespace

BleuResult bleu2_sentence(const std::vector<int>& hypothesis,
                          const std::vector<std::vector<int>>& references) {
  BleuResult result;
  if (hypothesis.empty() || references.empty() || all_empty(references)) {
    result.degenerate = true;
    return result;
  }
  Scalar log_sum = 0;
  for (int n = 1; n <= 2; ++n) {
    ClippedCounts counts = modified_precision_counts(hypothesis, references, n);
    Scalar smoothed = static_cast<Scalar>(counts.clipped + 1) / static_cast<Scalar>(counts.total + 1);
    log_sum += 0.5 * std::log(smoothed);
  }
  long long ref_len = effective_reference_length(hypothesis.size(), references);
  result.score = brevity_penalty(static_cast<long long>(hypothesis.size()), ref_len) * std::exp(log_sum);
  return result;
}

void Bleu2Accumulator::add(const std::vector<int>& hypothesis,
                           const std::vector<std::vector<int>>& references) {
  if (references.empty() || all_empty(references)) return;
  ++examples_;
  hyp_len_ += static_cast<long long>(hypothesis.size());
  ref_len_ += effective_reference_length(hypothesis.size(), references);
  for (int n = 1; n <= 2; ++n) {
    ClippedCounts counts = modified_precision_counts(hypothesis, references, n);
    clipped_[n - 1] += counts.clipped;
    total_[n - 1] += counts.total;
  }
}

Scalar Bleu2Accumulator::score() const {
  if (total_[0] == 0 || total_[1] == 0 || clipped_[0] == 0 || clipped_[1] == 0) return 0;
  Scalar log_sum = 0;
  for (int n = 0; n < 2; ++n) {
    log_sum += 0.5 * std::log(static_cast<Scalar>(clipped_[n]) / static_cast<Scalar>(total_[n]));
  }
  return brevity_penalty(hyp_len_, ref_len_) * std::exp(log_sum);
}

DistinctResult distinct2(const std::vector<std::vector<int>>& hypotheses) {
  DistinctResult result;
  std::set<std::pair<int, int>> unique;
  long long total = 0;
  for (const auto& hyp : hypotheses) {
    for (std::size_t i = 0; i + 1 < hyp.size(); ++i) {
      unique.insert({hyp[i], hyp[i + 1]});
      ++total;
    }
  }
  if (total == 0) {
    result.degenerate = true;
    return result;
  }
  result.score = static_cast<Scalar>(unique.size()) / static_cast<Scalar>(total);
  return result;
}

EmbeddingScores embedding_metrics_vectors(const std::vector<std::vector<Scalar>>& hyp_vectors,
                                          const std::vector<std::vector<Scalar>>& ref_vectors) {
  EmbeddingScores scores;
  if (hyp_vectors.empty() || ref_vectors.empty()) {
    scores.degenerate = true;
    return scores;
  }
  scores.average = cosine_or_zero(mean_vector(hyp_vectors), mean_vector(ref_vectors), &scores.degenerate);
  scores.extrema = cosine_or_zero(extrema_pool(hyp_vectors), extrema_pool(ref_vectors), &scores.degenerate);
  scores.greedy =
      0.5 * (greedy_direction(hyp_vectors, ref_vectors) + greedy_direction(ref_vectors, hyp_vectors));
  return scores;
}

EmbeddingScores embedding_metrics(const std::vector<int>& hypothesis,
                                  const std::vector<int>& reference,
                                  const SentenceEmbedder& embedder) {
  std::vector<int> hyp = strip_reserved(hypothesis);
  std::vector<int> ref = strip_reserved(reference);
  if (hyp.empty() || ref.empty()) {
    EmbeddingScores scores;
    scores.degenerate = true;
    return scores;
  }
  return embedding_metrics_vectors(lookup_vectors(hyp, embedder), lookup_vectors(ref, embedder));
}

CoherenceResult coherence(const std::vector<std::vector<int>>& context,
                          const std::vector<int>& hypothesis, const SentenceEmbedder& embedder) {
  CoherenceResult result;
  std::vector<int> pooled;
  for (const auto& utterance : context) {
    std::vector<int> kept = strip_reserved(utterance);
    pooled.insert(pooled.end(), kept.begin(), kept.end());
  }
  std::vector<int> hyp = strip_reserved(hypothesis);
  if (pooled.empty() || hyp.empty()) {
    result.degenerate = true;
    return result;
  }
  result.score = cosine_or_zero(mean_vector(lookup_vectors(pooled, embedder)),
                                mean_vector(lookup_vectors(hyp, embedder)), &result.degenerate);
  return result;
}

AgreementResult attention_relevance_agreement(const std::vector<std::vector<Scalar>>& selections,
                                              const std::vector<int>& labels) {
  if (selections.size() != labels.size()) {
    throw ShapeError("attention_relevance_agreement: " + std::to_string(selections.size()) +
                     " selections vs " + std::to_string(labels.size()) + " labels");
  }
  if (selections.empty()) throw ValueError("attention_relevance_agreement: empty input");
  AgreementResult result;
  result.examples = static_cast<long long>(selections.size());
  long long hits = 0;
  Scalar mass = 0;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    const auto& q = selections[i];
    int label = labels[i];
    if (q.empty()) throw ValueError("attention_relevance_agreement: empty selection at " + std::to_string(i));
    if (label < 0 || label >= static_cast<int>(q.size())) {
      throw ValueError("attention_relevance_agreement: label " + std::to_string(label) +
                       " out of range at " + std::to_string(i));
    }
    std::size_t argmax = 0;
    for (std::size_t k = 1; k < q.size(); ++k) {
      if (q[k] > q[argmax]) argmax = k;
    }
    if (static_cast<int>(argmax) == label) ++hits;
    mass += q[static_cast<std::size_t>(label)];
  }
  result.argmax_accuracy = static_cast<Scalar>(hits) / static_cast<Scalar>(selections.size());
  result.mean_mass_on_relevant = mass / static_cast<Scalar>(selections.size());
  return result;
}

AgreementResult attention_relevance_agreement(const std::vector<AttentionTrace>& traces,
                                              const std::vector<int>& labels) {
  std::vector<std::vector<Scalar>> selections;
  selections.reserve(traces.size());
  for (const auto& trace : traces) selections.push_back(extract_q_distribution(trace));
  return attention_relevance_agreement(selections, labels);
}

EvalReport evaluate_corpus(const std::vector<DialogueExample>& data,
                           const std::vector<std::vector<int>>& hypotheses,
                           const SentenceEmbedder& embedder, bool keep_examples) {
  if (data.size() != hypotheses.size()) {
    throw ShapeError("evaluate_corpus: " + std::to_string(data.size()) + " examples vs " +
                     std::to_string(hypotheses.size()) + " hypotheses");
  }
  if (data.empty()) throw ValueError("evaluate_corpus: empty corpus");

  EvalReport report;
  report.example_count = static_cast<long long>(data.size());
  report.embedder_seed = embedder.seed();

  Bleu2Accumulator accumulator;
  std::vector<std::vector<int>> stripped_hyps;
  stripped_hyps.reserve(hypotheses.size());
  Scalar bleu_sum = 0;
  Scalar average_sum = 0;
  Scalar extrema_sum = 0;
  Scalar greedy_sum = 0;
  Scalar coherence_sum = 0;

  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<int> hyp = strip_reserved(hypotheses[i]);
    std::vector<int> ref = strip_reserved(data[i].response);
    stripped_hyps.push_back(hyp);
    accumulator.add(hyp, {ref});

    ExampleRecord record;
    record.index = static_cast<long long>(i);
    BleuResult bleu = bleu2_sentence(hyp, {ref});
    record.bleu2 = bleu.score;
    record.bleu2_degenerate = bleu.degenerate;
    EmbeddingScores emb = embedding_metrics(hyp, ref, embedder);
    record.average = emb.average;
    record.extrema = emb.extrema;
    record.greedy = emb.greedy;
    record.embedding_degenerate = emb.degenerate;
    CoherenceResult coh = coherence(data[i].context, hyp, embedder);
    record.coherence = coh.score;
    record.coherence_degenerate = coh.degenerate;

    bleu_sum += record.bleu2;
    average_sum += record.average;
    extrema_sum += record.extrema;
    greedy_sum += record.greedy;
    coherence_sum += record.coherence;
    if (keep_examples) report.examples.push_back(record);
  }

  auto count = static_cast<Scalar>(data.size());
  report.bleu2_corpus = accumulator.score();
  report.bleu2_corpus_degenerate = accumulator.examples() == 0;
  report.bleu2_sentence_mean = bleu_sum / count;
  DistinctResult distinct = distinct2(stripped_hyps);
  report.distinct2 = distinct.score;
  report.distinct2_degenerate = distinct.degenerate;
  report.average = average_sum / count;
  report.extrema = extrema_sum / count;
  report.greedy = greedy_sum / count;
  report.coherence = coherence_sum / count;
  return report;
}

std::string report_to_json(const EvalReport& report, bool include_examples) {
  nlohmann::json root;
  root["example_count"] = report.example_count;
  root["corpus"] = {
      {"bleu2", report.bleu2_corpus},
      {"bleu2_sentence_mean", report.bleu2_sentence_mean},
      {"distinct2", report.distinct2},
      {"average", report.average},
      {"extrema", report.extrema},
      {"greedy", report.greedy},
      {"coherence", report.coherence},
  };
  root["flags"] = {
      {"bleu2_corpus_degenerate", report.bleu2_corpus_degenerate},
      {"distinct2_degenerate", report.distinct2_degenerate},
  };
  root["config"] = {
      {"embedder_seed", report.embedder_seed},
      {"smoothing", report.smoothing},
  };
  if (include_examples) {
    nlohmann::json examples = nlohmann::json::array();
    for (const auto& record : report.examples) {
      examples.push_back({
          {"index", record.index},
          {"bleu2", record.bleu2},
          {"bleu2_degenerate", record.bleu2_degenerate},
          {"average", record.average},
          {"extrema", record.extrema},
          {"greedy", record.greedy},
          {"embedding_degenerate", record.embedding_degenerate},
          {"coherence", record.coherence},
          {"coherence_degenerate", record.coherence_degenerate},
      });
    }
    root["examples"] = std::move(examples);
  }
  return root.dump(2);
}

}  // namespace hisa
