// Command-line surface for the pipeline: synthetic corpora, vocabulary
// building, training, generation, evaluation, and attention-trace export.
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort,
// 4 I/O failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hisa/config.hpp"
#include "hisa/corpus.hpp"
#include "hisa/decoder.hpp"
#include "hisa/encoder.hpp"
#include "hisa/errors.hpp"
#include "hisa/gds.hpp"
#include "hisa/metrics.hpp"
#include "hisa/model.hpp"
#include "hisa/rng.hpp"
#include "hisa/tokens.hpp"
#include "hisa/trace.hpp"
#include "hisa/train.hpp"

namespace {

using namespace hisa;

namespace fs = std::filesystem;

struct CommonFlags {
  std::string profile;
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& common) {
  cmd->add_option("--profile", common.profile, "Built-in scale profile: paper or desk");
  cmd->add_option("--config", common.config_path, "Config file (INI-style `key = value` lines)");
  cmd->add_option("--set", common.sets, "Override one key, as key=value (repeatable)");
}

RunConfig build_config(const CommonFlags& common) {
  RunConfig cfg;
  if (!common.profile.empty()) cfg.apply_profile(common.profile);
  if (!common.config_path.empty()) cfg.apply_file(common.config_path);
  for (const std::string& pair : common.sets) {
    std::size_t eq = pair.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + pair + "'");
    }
    cfg.set(pair.substr(0, eq), pair.substr(eq + 1));
  }
  return cfg;
}

// Applies a dedicated flag over the config only when the user passed it, so
// flags stay the highest-precedence source.
void apply_flag(const CLI::App* cmd, const std::string& flag, RunConfig& cfg,
                const std::string& key, const std::string& value) {
  if (cmd->count(flag) > 0) cfg.set(key, value);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create output directory " + path + ": " + ec.message());
}

std::ofstream open_output(const std::string& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
  cfg.write_resolved(join_path(dir, "config.resolved.ini"));
}

std::vector<std::vector<std::string>> tokenized_documents(const std::vector<RawDialogue>& raws) {
  std::vector<std::vector<std::string>> documents;
  for (const RawDialogue& raw : raws) {
    for (const std::string& utterance : raw.context) documents.push_back(tokenize(utterance));
    documents.push_back(tokenize(raw.response));
  }
  return documents;
}

SentenceEmbedder make_embedder(const RunConfig& cfg, const Vocabulary& vocab,
                               const std::vector<RawDialogue>& raws) {
  SentenceEmbedder embedder(vocab.size(), cfg.get_u64("embedder.seed"), cfg.get_int("embedder.dim"));
  const std::string& method = cfg.get("embedder.method");
  if (method == "bow-idf") {
    std::vector<std::vector<int>> documents;
    for (const auto& doc : tokenized_documents(raws)) documents.push_back(vocab.encode(doc));
    embedder.set_idf(compute_idf(documents, vocab.size()));
  } else if (method != "bow") {
    throw ConfigError("embedder.method must be bow or bow-idf, got '" + method + "'");
  }
  return embedder;
}

std::vector<DialogueExample> build_examples(const std::vector<RawDialogue>& raws,
                                            const Vocabulary& vocab, const ExampleLimits& limits) {
  std::vector<DialogueExample> examples;
  examples.reserve(raws.size());
  for (const RawDialogue& raw : raws) examples.push_back(make_example(raw, vocab, limits));
  return examples;
}

ExampleLimits limits_of(const HisaConfig& cfg) {
  ExampleLimits limits;
  limits.max_utterance_len = cfg.max_utterance_len;
  limits.max_context_utterances = cfg.max_context_utterances;
  limits.max_target_len = cfg.max_target_len;
  return limits;
}

void write_csv(const std::string& path, const WeightMatrix& matrix) {
  std::ofstream out = open_output(path);
  out << std::setprecision(17);
  for (int r = 0; r < matrix.rows; ++r) {
    for (int c = 0; c < matrix.cols; ++c) {
      if (c > 0) out << ',';
      out << matrix.at(r, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void run_synth(const RunConfig& cfg, const std::string& out_dir) {
  SynthSpec spec = cfg.synth_spec();
  std::vector<RawDialogue> dialogues = synth_corpus(spec);
  ensure_dir(out_dir);
  save_corpus(join_path(out_dir, "corpus.jsonl"), dialogues);
  std::ofstream labels = open_output(join_path(out_dir, "labels.tsv"));
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    labels << i << '\t' << dialogues[i].relevant_slot << '\n';
  }
  if (!labels) throw IoError("failed writing labels.tsv");
  echo_config(cfg, out_dir);
  std::cout << "synth: " << dialogues.size() << " dialogues -> " << out_dir << "\n";
}

void run_build_vocab(const RunConfig& cfg, const std::string& corpus_path,
                     const std::string& out_file) {
  std::vector<RawDialogue> raws = load_corpus(corpus_path);
  Vocabulary vocab = Vocabulary::build(tokenized_documents(raws), cfg.get_int("vocab.max_size"),
                                       cfg.get_int("vocab.min_freq"));
  fs::path out(out_file);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  vocab.save(out_file);
  std::string echo_dir = out.has_parent_path() ? out.parent_path().string() : std::string(".");
  echo_config(cfg, echo_dir);
  std::cout << "vocab: " << vocab.size() << " tokens -> " << out_file << "\n";
}

void run_train(const RunConfig& cfg, const std::string& corpus_path, const std::string& vocab_path,
               const std::string& out_dir, const std::string& resume_path) {
  TrainConfig train_cfg = cfg.train_config();
  train_cfg.validate();

  Vocabulary vocab = Vocabulary::load(vocab_path);
  std::vector<RawDialogue> raws = load_corpus(corpus_path);
  HisaConfig model_cfg = cfg.model_config(vocab.size());
  model_cfg.validate();
  std::vector<DialogueExample> examples = build_examples(raws, vocab, limits_of(model_cfg));

  Rng init_rng(cfg.get_u64("model.init_seed"));
  HisaModel model(model_cfg, init_rng);
  SentenceEmbedder embedder = make_embedder(cfg, vocab, raws);

  TrainerState state;
  bool resuming = !resume_path.empty();
  if (resuming) {
    state = load_checkpoint(resume_path, model);
    if (state.embedder_seed != embedder.seed() || state.embedder_method != embedder.method()) {
      throw ConfigError("checkpoint was trained with embedder seed " +
                        std::to_string(state.embedder_seed) + " method " + state.embedder_method +
                        "; current config disagrees");
    }
  }

  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  std::ofstream log = open_output(join_path(out_dir, "train.log.jsonl"), resuming);
  TrainOptions opts;
  opts.log_stream = &log;
  opts.checkpoint_path = join_path(out_dir, "checkpoint.bin");

  TrainResult result = train(examples, model, embedder, train_cfg, opts, &state);
  std::cout << "train: " << result.steps_done << " steps";
  if (!result.log.empty()) {
    const StepRecord& last = result.log.back();
    std::cout << ", final mle " << last.mle << ", total " << last.total;
  }
  std::cout << " -> " << out_dir << "\n";
}

void run_generate(const RunConfig& cfg, const std::string& checkpoint_path,
                  const std::string& corpus_path, const std::string& vocab_path,
                  const std::string& out_dir) {
  HisaConfig model_cfg = checkpoint_config(checkpoint_path);
  Rng init_rng(0);
  HisaModel model(model_cfg, init_rng);
  load_checkpoint(checkpoint_path, model);

  Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != model_cfg.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " tokens but the checkpoint expects " + std::to_string(model_cfg.vocab_size));
  }
  std::vector<RawDialogue> raws = load_corpus(corpus_path);
  std::vector<DialogueExample> examples = build_examples(raws, vocab, limits_of(model_cfg));

  GenerateOptions gen = cfg.generate_options();
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  std::ofstream out = open_output(join_path(out_dir, "responses.jsonl"));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    GenerateResult result = generate_detailed(examples[i].context, model, gen);
    nlohmann::json line;
    line["context"] = raws[i].context;
    line["response"] = join_tokens(vocab.decode(result.tokens));
    line["log_prob"] = result.log_prob;
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("failed writing responses.jsonl");
  std::cout << "generate: " << examples.size() << " responses -> " << out_dir << "\n";
}

std::vector<std::string> load_response_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open responses file " + path);
  std::vector<std::string> responses;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + " line " + std::to_string(line_number) + ": " + e.what());
    }
    if (!parsed.is_object() || !parsed.contains("response") || !parsed["response"].is_string()) {
      throw IoError(path + " line " + std::to_string(line_number) +
                    ": expected an object with a string `response` field");
    }
    responses.push_back(parsed["response"].get<std::string>());
  }
  return responses;
}

void run_eval(const RunConfig& cfg, const std::string& responses_path,
              const std::string& corpus_path, const std::string& vocab_path,
              const std::string& out_dir, bool per_example) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  std::vector<RawDialogue> raws = load_corpus(corpus_path);
  std::vector<DialogueExample> references = build_examples(raws, vocab, cfg.example_limits());
  std::vector<std::string> response_texts = load_response_lines(responses_path);
  if (response_texts.size() != references.size()) {
    throw ShapeError("responses file has " + std::to_string(response_texts.size()) +
                     " lines but the reference corpus has " + std::to_string(references.size()));
  }
  std::vector<std::vector<int>> hypotheses;
  hypotheses.reserve(response_texts.size());
  for (const std::string& text : response_texts) hypotheses.push_back(vocab.encode(tokenize(text)));

  SentenceEmbedder embedder = make_embedder(cfg, vocab, raws);
  bool expand = per_example || cfg.get_bool("eval.per_example");
  EvalReport report = evaluate_corpus(references, hypotheses, embedder, expand);

  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  std::ofstream out = open_output(join_path(out_dir, "eval.json"));
  out << report_to_json(report, expand) << '\n';
  if (!out) throw IoError("failed writing eval.json");
  std::cout << "eval: " << report.example_count << " examples, bleu2 " << report.bleu2_corpus
            << ", distinct2 " << report.distinct2 << ", coherence " << report.coherence << " -> "
            << out_dir << "\n";
}

void run_inspect(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& corpus_path, const std::string& vocab_path,
                 const std::string& out_dir, int limit) {
  if (limit < 0) throw ConfigError("--limit must be non-negative");
  HisaConfig model_cfg = checkpoint_config(checkpoint_path);
  Rng init_rng(0);
  HisaModel model(model_cfg, init_rng);
  load_checkpoint(checkpoint_path, model);

  Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != model_cfg.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " tokens but the checkpoint expects " + std::to_string(model_cfg.vocab_size));
  }
  std::vector<RawDialogue> raws = load_corpus(corpus_path);
  std::vector<DialogueExample> examples = build_examples(raws, vocab, limits_of(model_cfg));
  std::size_t count = examples.size();
  if (limit > 0) count = std::min(count, static_cast<std::size_t>(limit));

  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  for (std::size_t i = 0; i < count; ++i) {
    const DialogueExample& example = examples[i];
    std::vector<int> prefix;
    prefix.push_back(kBosId);
    prefix.insert(prefix.end(), example.response.begin(), example.response.end() - 1);

    AttentionTrace trace;
    ForwardOptions opts;
    opts.frozen = true;
    opts.trace = &trace;
    opts.trace_word_level = true;
    Tape tape;
    EncodedContext ctx = encode_context(tape, example.context, model, opts);
    decode_forward(tape, prefix, ctx, model, opts);

    const LayerTrace& layer = trace.final_layer();
    char tag[32];
    std::snprintf(tag, sizeof(tag), "ex%04zu", i);

    nlohmann::json summary;
    summary["example"] = i;
    summary["relevant_slot"] = example.relevant_slot;
    summary["num_utterances"] = example.context.size();
    summary["steps"] = prefix.size();
    summary["q"] = extract_q_distribution(trace);

    std::vector<std::string> word_files;
    for (std::size_t u = 0; u < layer.word_weights.size(); ++u) {
      const auto& heads = layer.word_weights[u];
      WeightMatrix mean(heads.front().rows, heads.front().cols);
      for (const WeightMatrix& head : heads) {
        for (std::size_t k = 0; k < mean.data.size(); ++k) mean.data[k] += head.data[k];
      }
      for (Scalar& x : mean.data) x /= static_cast<Scalar>(heads.size());
      std::string name = std::string(tag) + "_word_u" + std::to_string(u) + ".csv";
      write_csv(join_path(out_dir, name), mean);
      word_files.push_back(name);
    }
    summary["word_files"] = word_files;

    std::vector<std::string> utt_files;
    for (std::size_t h = 0; h < layer.utt_weights.size(); ++h) {
      std::string name = std::string(tag) + "_utt_h" + std::to_string(h) + ".csv";
      write_csv(join_path(out_dir, name), layer.utt_weights[h]);
      utt_files.push_back(name);
    }
    summary["utt_files"] = utt_files;

    std::ofstream out = open_output(join_path(out_dir, std::string(tag) + ".json"));
    out << summary.dump(2) << '\n';
    if (!out) throw IoError("failed writing trace summary for example " + std::to_string(i));
  }
  std::cout << "inspect-attention: " << count << " examples -> " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical dialogue model pipeline"};
  app.require_subcommand(1);

  CommonFlags synth_common, vocab_common, train_common, gen_common, eval_common, inspect_common;

  CLI::App* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  std::string synth_out, synth_examples, synth_utterances, synth_vocab, synth_ratio, synth_seed;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--examples", synth_examples, "Number of dialogues");
  synth->add_option("--utterances", synth_utterances, "Context turns per dialogue");
  synth->add_option("--vocab", synth_vocab, "Vocabulary size including reserved ids");
  synth->add_option("--distractor-ratio", synth_ratio, "Fraction of content words for distractors");
  synth->add_option("--seed", synth_seed, "Corpus seed");
  add_common(synth, synth_common);

  CLI::App* build_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  std::string bv_corpus, bv_out, bv_max, bv_min;
  build_vocab->add_option("--corpus", bv_corpus, "Corpus JSONL path")->required();
  build_vocab->add_option("--out", bv_out, "Output vocabulary file")->required();
  build_vocab->add_option("--max-size", bv_max, "Maximum vocabulary size");
  build_vocab->add_option("--min-freq", bv_min, "Minimum token frequency");
  add_common(build_vocab, vocab_common);

  CLI::App* train_cmd = app.add_subcommand("train", "Train on a corpus");
  std::string tr_corpus, tr_vocab, tr_out, tr_resume;
  std::string tr_lr, tr_epochs, tr_max_steps, tr_batch, tr_eta1, tr_eta2, tr_seed, tr_interval;
  train_cmd->add_option("--corpus", tr_corpus, "Corpus JSONL path")->required();
  train_cmd->add_option("--vocab", tr_vocab, "Vocabulary file")->required();
  train_cmd->add_option("--out", tr_out, "Output directory")->required();
  train_cmd->add_option("--resume", tr_resume, "Checkpoint to continue from");
  train_cmd->add_option("--lr", tr_lr, "Learning rate");
  train_cmd->add_option("--epochs", tr_epochs, "Number of epochs");
  train_cmd->add_option("--max-steps", tr_max_steps, "Hard cap on optimizer steps");
  train_cmd->add_option("--batch-size", tr_batch, "Examples per step");
  train_cmd->add_option("--eta1", tr_eta1, "Selection-supervision weight");
  train_cmd->add_option("--eta2", tr_eta2, "Entropy-term weight");
  train_cmd->add_option("--seed", tr_seed, "Training seed");
  train_cmd->add_option("--checkpoint-interval", tr_interval, "Steps between checkpoints");
  add_common(train_cmd, train_common);

  CLI::App* gen_cmd = app.add_subcommand("generate", "Decode responses for a corpus");
  std::string g_ckpt, g_corpus, g_vocab, g_out, g_beam, g_max_len;
  gen_cmd->add_option("--checkpoint", g_ckpt, "Checkpoint file")->required();
  gen_cmd->add_option("--corpus", g_corpus, "Corpus JSONL path")->required();
  gen_cmd->add_option("--vocab", g_vocab, "Vocabulary file")->required();
  gen_cmd->add_option("--out", g_out, "Output directory")->required();
  gen_cmd->add_option("--beam", g_beam, "Beam width (1 is greedy)");
  gen_cmd->add_option("--max-len", g_max_len, "Maximum generated length");
  add_common(gen_cmd, gen_common);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score responses against references");
  std::string e_responses, e_corpus, e_vocab, e_out, e_seed;
  bool e_per_example = false;
  eval_cmd->add_option("--responses", e_responses, "Responses JSONL path")->required();
  eval_cmd->add_option("--corpus", e_corpus, "Reference corpus JSONL path")->required();
  eval_cmd->add_option("--vocab", e_vocab, "Vocabulary file")->required();
  eval_cmd->add_option("--out", e_out, "Output directory")->required();
  eval_cmd->add_option("--seed", e_seed, "Embedder seed");
  eval_cmd->add_flag("--per-example", e_per_example, "Expand per-example records");
  add_common(eval_cmd, eval_common);

  CLI::App* inspect_cmd = app.add_subcommand("inspect-attention", "Export attention traces");
  std::string i_ckpt, i_corpus, i_vocab, i_out;
  int i_limit = 0;
  inspect_cmd->add_option("--checkpoint", i_ckpt, "Checkpoint file")->required();
  inspect_cmd->add_option("--corpus", i_corpus, "Corpus JSONL path")->required();
  inspect_cmd->add_option("--vocab", i_vocab, "Vocabulary file")->required();
  inspect_cmd->add_option("--out", i_out, "Output directory")->required();
  inspect_cmd->add_option("--limit", i_limit, "Export only the first N examples (0 = all)");
  add_common(inspect_cmd, inspect_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      RunConfig cfg = build_config(synth_common);
      apply_flag(synth, "--examples", cfg, "synth.examples", synth_examples);
      apply_flag(synth, "--utterances", cfg, "synth.utterances", synth_utterances);
      apply_flag(synth, "--vocab", cfg, "synth.vocab", synth_vocab);
      apply_flag(synth, "--distractor-ratio", cfg, "synth.distractor_ratio", synth_ratio);
      apply_flag(synth, "--seed", cfg, "synth.seed", synth_seed);
      run_synth(cfg, synth_out);
    } else if (build_vocab->parsed()) {
      RunConfig cfg = build_config(vocab_common);
      apply_flag(build_vocab, "--max-size", cfg, "vocab.max_size", bv_max);
      apply_flag(build_vocab, "--min-freq", cfg, "vocab.min_freq", bv_min);
      run_build_vocab(cfg, bv_corpus, bv_out);
    } else if (train_cmd->parsed()) {
      RunConfig cfg = build_config(train_common);
      apply_flag(train_cmd, "--lr", cfg, "train.learning_rate", tr_lr);
      apply_flag(train_cmd, "--epochs", cfg, "train.epochs", tr_epochs);
      apply_flag(train_cmd, "--max-steps", cfg, "train.max_steps", tr_max_steps);
      apply_flag(train_cmd, "--batch-size", cfg, "train.batch_size", tr_batch);
      apply_flag(train_cmd, "--eta1", cfg, "train.eta1", tr_eta1);
      apply_flag(train_cmd, "--eta2", cfg, "train.eta2", tr_eta2);
      apply_flag(train_cmd, "--seed", cfg, "train.seed", tr_seed);
      apply_flag(train_cmd, "--checkpoint-interval", cfg, "train.checkpoint_interval", tr_interval);
      run_train(cfg, tr_corpus, tr_vocab, tr_out, tr_resume);
    } else if (gen_cmd->parsed()) {
      RunConfig cfg = build_config(gen_common);
      apply_flag(gen_cmd, "--beam", cfg, "generate.beam_width", g_beam);
      apply_flag(gen_cmd, "--max-len", cfg, "generate.max_len", g_max_len);
      run_generate(cfg, g_ckpt, g_corpus, g_vocab, g_out);
    } else if (eval_cmd->parsed()) {
      RunConfig cfg = build_config(eval_common);
      apply_flag(eval_cmd, "--seed", cfg, "embedder.seed", e_seed);
      run_eval(cfg, e_responses, e_corpus, e_vocab, e_out, e_per_example);
    } else if (inspect_cmd->parsed()) {
      RunConfig cfg = build_config(inspect_common);
      run_inspect(cfg, i_ckpt, i_corpus, i_vocab, i_out, i_limit);
    }
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
