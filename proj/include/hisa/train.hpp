#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hisa/corpus.hpp"
#include "hisa/gds.hpp"
#include "hisa/model.hpp"

namespace hisa {

struct TrainConfig {
  Scalar learning_rate = 0.0001;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  Scalar clip_norm = 1.0;
  int epochs = 1;
  // Hard cap on total optimizer steps; 0 means epochs alone decide.
  int max_steps = 0;
  int batch_size = 32;
  Scalar eta1 = 1.0;
  Scalar eta2 = 1.0;
  std::uint64_t seed = 1;
  // Steps between checkpoint writes; 0 writes only the final state.
  int checkpoint_interval = 0;

  void validate() const;
};

// First and second moment estimates keyed by parameter name, plus the shared
// step count driving bias correction.
struct AdamState {
  struct Moments {
    std::vector<Scalar> m;
    std::vector<Scalar> v;
  };
  std::map<std::string, Moments> slots;
  long long step = 0;
};

// Standard bias-corrected Adam update over the parameters' accumulated
// gradients. A non-finite gradient aborts and names the parameter.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainConfig& cfg);

// Scales all gradients so their global L2 norm is at most clip_norm, leaving
// them untouched when already below. Returns the pre-clip norm.
Scalar clip_gradients(const std::vector<Parameter*>& params, Scalar clip_norm);

// Everything beyond the parameters needed to continue a run: optimizer
// moments, completed-step count, and the data-side identifiers that
// reproduce the supervision targets.
struct TrainerState {
  long long step = 0;
  AdamState adam;
  std::uint64_t embedder_seed = 0;
  std::string embedder_method = "bow";
  std::string rng_state;
};

// Versioned binary container: magic, version, JSON metadata block, then
// named f64 tensors with shape headers. Same-endianness portability.
void save_checkpoint(const std::string& path, HisaModel& model, const TrainerState& state);

// Restores parameters and trainer state into a model whose configuration
// matches the stored one exactly.
TrainerState load_checkpoint(const std::string& path, HisaModel& model);

// Reads only the stored model configuration, for constructing the model to
// load into.
HisaConfig checkpoint_config(const std::string& path);

struct StepRecord {
  long long step = 0;
  Scalar mle = 0;
  Scalar kl = 0;
  Scalar mce = 0;
  Scalar total = 0;
  Scalar grad_norm = 0;
  double wallclock = 0;
};

// One line-delimited JSON record.
std::string to_json_line(const StepRecord& record);

struct TrainOptions {
  // Receives one JSON line per optimizer step when set.
  std::ostream* log_stream = nullptr;
  // Checkpoints land here (overwritten in place) when non-empty.
  std::string checkpoint_path;
};

struct TrainResult {
  std::vector<StepRecord> log;
  long long steps_done = 0;
};

// Teacher-forced training on the combined objective. Batches are shuffled
// with a generator derived from (seed, epoch) alone, so a resumed run
// revisits exactly the examples the uninterrupted run would have seen; with
// a populated state this continues from state->step toward the configured
// totals. Examples missing their cached supervision target get it computed
// first. Gradients are averaged over each batch, clipped globally, then
// applied with Adam. A non-finite loss aborts the run.
TrainResult train(std::vector<DialogueExample>& corpus, HisaModel& model,
                  const SentenceEmbedder& embedder, const TrainConfig& cfg,
                  const TrainOptions& opts = {}, TrainerState* state = nullptr);

struct GenerateOptions {
  // 1 is greedy decoding; larger values run beam search, capped at 8.
  int beam_width = 1;
  int max_len = 30;
};

struct GenerateResult {
  // Surface tokens, start and end markers stripped.
  std::vector<int> tokens;
  // Cumulative log-probability of the generated sequence, end marker
  // included when one was emitted.
  Scalar log_prob = 0;
};

// Decodes a response for one context with frozen parameters. Greedy decoding
// takes the argmax each step (ties to the lowest id); beam search ranks
// partial hypotheses by cumulative log-probability and picks the final
// winner by length-normalized score. Generation stops at the end marker or
// after min(max_len, model max target length) tokens.
GenerateResult generate_detailed(const std::vector<std::vector<int>>& context, HisaModel& model,
                                 const GenerateOptions& opts = {});
std::vector<int> generate(const std::vector<std::vector<int>>& context, HisaModel& model,
                          const GenerateOptions& opts = {});

}  // namespace hisa
