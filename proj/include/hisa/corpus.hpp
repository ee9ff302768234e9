#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hisa/rng.hpp"
#include "hisa/tensor.hpp"
#include "hisa/tokens.hpp"

namespace hisa {

// Lowercases, then splits on whitespace runs. Text without any whitespace is
// split into UTF-8 code points instead, which covers unsegmented scripts.
// Applying tokenize to the space-joined result of a previous call returns the
// same tokens.
std::vector<std::string> tokenize(const std::string& text);

// Joins tokens with single spaces, the inverse-direction companion of
// tokenize for display and round-trip checks.
std::string join_tokens(const std::vector<std::string>& tokens);

// Token|id bijection with four fixed control ids (see tokens.hpp). Content
// ids start at kReservedTokens and are assigned by descending corpus
// frequency, ties broken lexicographically.
class Vocabulary {
 public:
  // Reserved entries only.
  Vocabulary();

  // Counts tokens across documents and keeps the most frequent ones, capped
  // at max_size total entries (reserved included) and dropping tokens seen
  // fewer than min_freq times. Tokens spelled like a reserved form are
  // ignored so control ids are never reassigned.
  static Vocabulary build(const std::vector<std::vector<std::string>>& documents, int max_size,
                          int min_freq);

  // Id for a token, kUnkId when absent.
  int id_of(const std::string& token) const;

  // Surface form for an id; reserved ids render as <pad> <bos> <eos> <unk>.
  const std::string& token_of(int id) const;

  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // Tab-separated "token<TAB>id" lines under a '#' metadata header.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// One dialogue as read from disk, before tokenization. relevant_slot is the
// ground-truth index carried by synthetic corpora, -1 when unlabeled.
struct RawDialogue {
  std::vector<std::string> context;
  std::string response;
  int relevant_slot = -1;
};

struct CorpusReadStats {
  long long lines = 0;
  long long records = 0;
  long long skipped = 0;
};

// Reads line-delimited JSON records {"context": [...], "response": "..."}
// with an optional "relevant" index. A malformed line raises IoError naming
// the line number, or is counted and skipped when skip_malformed is set.
std::vector<RawDialogue> load_corpus(const std::string& path, bool skip_malformed = false,
                                     CorpusReadStats* stats = nullptr);

// Writes dialogues in the same line-delimited format load_corpus reads.
void save_corpus(const std::string& path, const std::vector<RawDialogue>& dialogues);

// Token-id dialogue ready for the model. The response always ends with
// kEosId; context utterances are never empty and never contain kPadId.
struct DialogueExample {
  std::vector<std::vector<int>> context;
  std::vector<int> response;
  int relevant_slot = -1;
  // Context-selection target, filled in by the supervision stage.
  std::vector<Scalar> gds_p;
};

struct ExampleLimits {
  int max_utterance_len = 30;
  int max_context_utterances = 10;
  int max_target_len = 30;
};

// Tokenizes and encodes one dialogue. Utterances that tokenize to nothing
// are dropped; context and utterances keep their most recent material when
// over the limits, the response keeps its start. The relevance label tracks
// its utterance through dropping and truncation.
DialogueExample make_example(const RawDialogue& raw, const Vocabulary& vocab,
                             const ExampleLimits& limits);

// Fixed-shape grouping of examples. Token blocks are padded with kPadId to
// the largest sizes in the group; mask bytes are 1 on real positions. The
// original examples are recoverable exactly via unbatch.
struct Batch {
  int batch_size = 0;
  int max_n = 0;
  int max_utt_len = 0;
  int max_resp_len = 0;
  std::vector<int> context_tokens;           // [batch_size, max_n, max_utt_len]
  std::vector<std::uint8_t> context_mask;    // same layout
  std::vector<int> response_tokens;          // [batch_size, max_resp_len]
  std::vector<std::uint8_t> response_mask;   // same layout
  std::vector<int> num_utterances;           // [batch_size]
  std::vector<int> utterance_lens;           // [batch_size, max_n]
  std::vector<int> response_lens;            // [batch_size]
  std::vector<int> relevant_slots;           // [batch_size]
  std::vector<std::vector<Scalar>> gds_p;    // [batch_size]

  int context_at(int b, int i, int t) const;
  int response_at(int b, int t) const;
};

// Groups examples into batches of at most batch_size, preserving order. When
// shuffle is given the examples are permuted with it first.
std::vector<Batch> make_batches(const std::vector<DialogueExample>& examples, int batch_size,
                                Rng* shuffle = nullptr);

// Recovers the examples of one batch in their batched order.
std::vector<DialogueExample> unbatch(const Batch& batch);

// Settings for the labeled synthetic corpus. vocab_size counts the four
// reserved ids; distractor_ratio is the fraction of the content vocabulary
// set aside for distractor utterances (both pools are kept at a workable
// minimum size).
struct SynthSpec {
  int num_examples = 100;
  int n_utterances = 4;
  int vocab_size = 60;
  double distractor_ratio = 0.5;
  std::uint64_t seed = 1;
};

// Generates dialogues where exactly one uniformly placed utterance is
// relevant: the response echoes its words in reverse order, while every
// other utterance draws from a disjoint word pool. Deterministic in the
// seed.
std::vector<RawDialogue> synth_corpus(const SynthSpec& spec);

}  // namespace hisa
