#include "hisa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <tuple>

#include <json.hpp>

#include "hisa/decoder.hpp"
#include "hisa/encoder.hpp"
#include "hisa/errors.hpp"
#include "hisa/rng.hpp"
#include "hisa/tokens.hpp"

namespace hisa {

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'I', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ofstream& out, const std::string& name, const Shape& shape,
                  const std::vector<Scalar>& data) {
  write_string(out, name);
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) {
    auto v = static_cast<std::int32_t>(d);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  std::vector<double> wide(data.begin(), data.end());
  out.write(reinterpret_cast<const char*>(wide.data()),
            static_cast<std::streamsize>(wide.size() * sizeof(double)));
}

struct CheckpointReader {
  std::ifstream in;
  std::string path;

  explicit CheckpointReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("cannot open checkpoint file: " + p);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
      throw IoError(p + ": not a checkpoint file");
    }
    const std::uint32_t version = read_u32();
    if (version != kCheckpointVersion) {
      throw IoError(p + ": unsupported checkpoint version " + std::to_string(version));
    }
  }

  std::uint32_t read_u32() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IoError(path + ": truncated checkpoint");
    return v;
  }

  std::uint64_t read_u64() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IoError(path + ": truncated checkpoint");
    return v;
  }

  std::string read_string() {
    const std::uint64_t len = read_u64();
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path + ": truncated checkpoint");
    return s;
  }

  void read_tensor(std::string& name, Shape& shape, std::vector<Scalar>& data) {
    name = read_string();
    const std::uint32_t rank = read_u32();
    shape.clear();
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::int32_t d = 0;
      in.read(reinterpret_cast<char*>(&d), sizeof(d));
      if (!in || d < 0) throw IoError(path + ": bad tensor shape");
      shape.push_back(d);
      count *= static_cast<std::size_t>(d);
    }
    std::vector<double> wide(count);
    in.read(reinterpret_cast<char*>(wide.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError(path + ": truncated checkpoint");
    data.assign(wide.begin(), wide.end());
  }
};

nlohmann::json config_to_json(const HisaConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},
          {"d_model", cfg.d_model},
          {"d_ff", cfg.d_ff},
          {"num_heads", cfg.num_heads},
          {"enc_layers", cfg.enc_layers},
          {"dec_layers", cfg.dec_layers},
          {"max_utterance_len", cfg.max_utterance_len},
          {"max_context_utterances", cfg.max_context_utterances},
          {"max_target_len", cfg.max_target_len}};
}

HisaConfig config_from_json(const nlohmann::json& j) {
  HisaConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.max_utterance_len = j.at("max_utterance_len").get<int>();
  cfg.max_context_utterances = j.at("max_context_utterances").get<int>();
  cfg.max_target_len = j.at("max_target_len").get<int>();
  return cfg;
}

bool same_config(const HisaConfig& a, const HisaConfig& b) {
  return config_to_json(a) == config_to_json(b);
}

// Shuffle order depends only on (seed, epoch), so a resumed run re-derives
// the exact example sequence without replaying the generator.
Rng epoch_shuffle_rng(std::uint64_t seed, long long epoch) {
  return Rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1)));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (epochs == 0 && max_steps == 0) {
    throw ConfigError("either epochs or max_steps must allow some training");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainConfig& cfg) {
  for (const Parameter* p : params) {
    for (Scalar g : p->grad) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + p->name + "'");
      }
    }
  }
  const long long t = ++state.step;
  const Scalar bias1 = 1 - std::pow(cfg.beta1, static_cast<Scalar>(t));
  const Scalar bias2 = 1 - std::pow(cfg.beta2, static_cast<Scalar>(t));
  for (Parameter* p : params) {
    AdamState::Moments& mom = state.slots[p->name];
    if (mom.m.empty()) {
      mom.m.assign(p->value.size(), 0);
      mom.v.assign(p->value.size(), 0);
    }
    if (mom.m.size() != p->value.size()) {
      throw ShapeError("optimizer moments for '" + p->name + "' hold " +
                       std::to_string(mom.m.size()) + " entries, parameter has " +
                       std::to_string(p->value.size()));
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Scalar g = p->grad[i];
      mom.m[i] = cfg.beta1 * mom.m[i] + (1 - cfg.beta1) * g;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1 - cfg.beta2) * g * g;
      const Scalar m_hat = mom.m[i] / bias1;
      const Scalar v_hat = mom.v[i] / bias2;
      p->value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

Scalar clip_gradients(const std::vector<Parameter*>& params, Scalar clip_norm) {
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  Scalar total_sq = 0;
  for (const Parameter* p : params) {
    for (Scalar g : p->grad) total_sq += g * g;
  }
  const Scalar norm = std::sqrt(total_sq);
  if (norm > clip_norm) {
    const Scalar scale = clip_norm / norm;
    for (Parameter* p : params) {
      for (Scalar& g : p->grad) g *= scale;
    }
  }
  return norm;
}

void save_checkpoint(const std::string& path, HisaModel& model, const TrainerState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out.write(kCheckpointMagic, 8);
  write_u32(out, kCheckpointVersion);

  nlohmann::json meta;
  meta["model"] = config_to_json(model.config);
  meta["step"] = state.step;
  meta["adam_step"] = state.adam.step;
  meta["embedder_seed"] = std::to_string(state.embedder_seed);
  meta["embedder_method"] = state.embedder_method;
  meta["rng_state"] = state.rng_state;
  write_string(out, meta.dump());

  const std::vector<Parameter*> params = model.parameters();
  std::uint64_t tensor_count = params.size();
  for (const Parameter* p : params) {
    tensor_count += 2 * state.adam.slots.count(p->name);
  }
  write_u64(out, tensor_count);
  for (const Parameter* p : params) {
    write_tensor(out, "param/" + p->name, p->shape, p->value);
  }
  for (const Parameter* p : params) {
    const auto it = state.adam.slots.find(p->name);
    if (it == state.adam.slots.end()) continue;
    write_tensor(out, "adam_m/" + p->name, p->shape, it->second.m);
    write_tensor(out, "adam_v/" + p->name, p->shape, it->second.v);
  }
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

HisaConfig checkpoint_config(const std::string& path) {
  CheckpointReader reader(path);
  const nlohmann::json meta = nlohmann::json::parse(reader.read_string());
  return config_from_json(meta.at("model"));
}

TrainerState load_checkpoint(const std::string& path, HisaModel& model) {
  CheckpointReader reader(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(reader.read_string());
  } catch (const std::exception& e) {
    throw IoError(path + ": bad metadata block: " + e.what());
  }
  if (!same_config(config_from_json(meta.at("model")), model.config)) {
    throw IoError(path + ": stored model configuration does not match the target model");
  }

  TrainerState state;
  state.step = meta.at("step").get<long long>();
  state.adam.step = meta.at("adam_step").get<long long>();
  state.embedder_seed = std::stoull(meta.at("embedder_seed").get<std::string>());
  state.embedder_method = meta.at("embedder_method").get<std::string>();
  state.rng_state = meta.at("rng_state").get<std::string>();

  std::vector<char> loaded(model.parameters().size(), 0);
  const std::uint64_t tensor_count = reader.read_u64();
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    std::string name;
    Shape shape;
    std::vector<Scalar> data;
    reader.read_tensor(name, shape, data);
    const std::size_t slash = name.find('/');
    if (slash == std::string::npos) throw IoError(path + ": unprefixed tensor '" + name + "'");
    const std::string kind = name.substr(0, slash);
    const std::string pname = name.substr(slash + 1);
    Parameter* p = model.find(pname);
    if (p == nullptr) throw IoError(path + ": tensor for unknown parameter '" + pname + "'");
    if (p->shape != shape) {
      throw IoError(path + ": shape mismatch for '" + pname + "': stored " + shape_str(shape) +
                    ", model has " + shape_str(p->shape));
    }
    if (kind == "param") {
      p->value = data;
      const std::vector<Parameter*> params = model.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k] == p) loaded[k] = 1;
      }
    } else if (kind == "adam_m") {
      state.adam.slots[pname].m = data;
    } else if (kind == "adam_v") {
      state.adam.slots[pname].v = data;
    } else {
      throw IoError(path + ": unknown tensor kind '" + kind + "'");
    }
  }
  if (std::find(loaded.begin(), loaded.end(), 0) != loaded.end()) {
    throw IoError(path + ": checkpoint does not cover every model parameter");
  }
  return state;
}

std::string to_json_line(const StepRecord& record) {
  nlohmann::json j;
  j["step"] = record.step;
  j["mle"] = record.mle;
  j["kl"] = record.kl;
  j["mce"] = record.mce;
  j["total"] = record.total;
  j["grad_norm"] = record.grad_norm;
  j["wallclock"] = record.wallclock;
  return j.dump();
}

TrainResult train(std::vector<DialogueExample>& corpus, HisaModel& model,
                  const SentenceEmbedder& embedder, const TrainConfig& cfg,
                  const TrainOptions& opts, TrainerState* state) {
  cfg.validate();
  if (corpus.empty()) throw ValueError("cannot train on an empty corpus");
  for (auto& ex : corpus) {
    if (ex.gds_p.size() != ex.context.size()) {
      ex.gds_p = gds_target(ex.context, ex.response, embedder);
    }
  }

  TrainerState local;
  TrainerState& st = state != nullptr ? *state : local;
  if (st.step == 0) {
    st.embedder_seed = embedder.seed();
    st.embedder_method = embedder.method();
    st.rng_state = Rng(cfg.seed).save_state();
  }

  const long long steps_per_epoch =
      (static_cast<long long>(corpus.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long long step_limit = cfg.epochs > 0 ? cfg.epochs * steps_per_epoch
                                        : std::numeric_limits<long long>::max();
  if (cfg.max_steps > 0) step_limit = std::min(step_limit, static_cast<long long>(cfg.max_steps));

  const std::vector<Parameter*> params = model.parameters();
  TrainResult result;
  const auto start = std::chrono::steady_clock::now();

  long long step = st.step;
  while (step < step_limit) {
    const long long epoch = step / steps_per_epoch;
    const long long first_batch = step % steps_per_epoch;
    Rng shuffle = epoch_shuffle_rng(cfg.seed, epoch);
    const std::vector<Batch> batches =
        make_batches(corpus, cfg.batch_size, &shuffle);

    for (long long b = first_batch; b < static_cast<long long>(batches.size()) && step < step_limit;
         ++b, ++step) {
      const std::vector<DialogueExample> group = unbatch(batches[static_cast<std::size_t>(b)]);
      model.zero_grad();
      StepRecord rec;
      rec.step = step;
      for (const DialogueExample& ex : group) {
        Tape tape;
        const LossGraph g = combined_loss_graph(tape, ex, model, embedder, cfg.eta1, cfg.eta2, {});
        const Scalar total = g.total.item();
        if (!std::isfinite(total)) {
          throw NumericError("loss became non-finite at step " + std::to_string(step));
        }
        tape.backward(g.total);
        rec.mle += g.mle.item();
        rec.kl += g.kl.item();
        rec.mce += g.mce.item();
        rec.total += total;
      }
      const auto m = static_cast<Scalar>(group.size());
      rec.mle /= m;
      rec.kl /= m;
      rec.mce /= m;
      rec.total /= m;
      if (group.size() > 1) {
        for (Parameter* p : params) {
          for (Scalar& g : p->grad) g /= m;
        }
      }
      rec.grad_norm = clip_gradients(params, cfg.clip_norm);
      adam_step(params, st.adam, cfg);
      st.step = step + 1;
      rec.wallclock =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (opts.log_stream != nullptr) *opts.log_stream << to_json_line(rec) << "\n";
      result.log.push_back(rec);
      ++result.steps_done;

      if (!opts.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
          st.step % cfg.checkpoint_interval == 0) {
        save_checkpoint(opts.checkpoint_path, model, st);
      }
    }
  }

  if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, model, st);
  return result;
}

namespace {

// Log-probabilities of the next token after the prefix, by a frozen forward
// pass and a scalar log-softmax over the last logit row.
std::vector<Scalar> next_token_log_probs(const std::vector<std::vector<int>>& context,
                                         HisaModel& model, const std::vector<int>& prefix) {
  Tape tape;
  ForwardOptions opts;
  opts.frozen = true;
  EncodedContext ctx = encode_context(tape, context, model, opts);
  Tensor logits = decode_forward(tape, prefix, ctx, model, opts).logits;
  const int vocab = logits.dim(1);
  const std::vector<Scalar>& v = logits.value();
  const std::size_t row = static_cast<std::size_t>(logits.dim(0) - 1) * static_cast<std::size_t>(vocab);

  Scalar hi = v[row];
  for (int j = 1; j < vocab; ++j) hi = std::max(hi, v[row + static_cast<std::size_t>(j)]);
  Scalar total = 0;
  for (int j = 0; j < vocab; ++j) total += std::exp(v[row + static_cast<std::size_t>(j)] - hi);
  const Scalar lse = hi + std::log(total);
  std::vector<Scalar> out(static_cast<std::size_t>(vocab));
  for (int j = 0; j < vocab; ++j) out[static_cast<std::size_t>(j)] = v[row + static_cast<std::size_t>(j)] - lse;
  return out;
}

std::vector<int> strip_markers(const std::vector<int>& seq) {
  std::vector<int> out;
  for (int id : seq) {
    if (id != kBosId && id != kEosId) out.push_back(id);
  }
  return out;
}

struct Beam {
  std::vector<int> prefix;  // starts with the begin marker
  Scalar log_prob = 0;
  bool done = false;
  int length() const { return static_cast<int>(prefix.size()) - 1; }
};

}  // namespace

GenerateResult generate_detailed(const std::vector<std::vector<int>>& context, HisaModel& model,
                                 const GenerateOptions& opts) {
  if (opts.beam_width < 1 || opts.beam_width > 8) {
    throw ConfigError("beam_width must lie in [1, 8], got " + std::to_string(opts.beam_width));
  }
  if (opts.max_len < 1) throw ConfigError("max_len must be at least 1");
  const int limit = std::min(opts.max_len, model.config.max_target_len);
  const int k = opts.beam_width;

  std::vector<Beam> beams = {Beam{{kBosId}, 0, false}};
  for (int t = 0; t < limit; ++t) {
    bool all_done = true;
    for (const Beam& b : beams) all_done = all_done && b.done;
    if (all_done) break;

    // Candidate key: score descending, then source beam, then token id, so
    // expansion order is fully deterministic and width one reduces to the
    // greedy argmax with ties going to the lowest id.
    std::vector<std::tuple<Scalar, int, int>> candidates;  // (-score, beam, token)
    for (std::size_t bi = 0; bi < beams.size(); ++bi) {
      const Beam& b = beams[bi];
      if (b.done) {
        candidates.emplace_back(-b.log_prob, static_cast<int>(bi), -1);
        continue;
      }
      const std::vector<Scalar> logp = next_token_log_probs(context, model, b.prefix);
      std::vector<int> ids(logp.size());
      for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = static_cast<int>(j);
      std::sort(ids.begin(), ids.end(), [&](int a, int c) {
        if (logp[static_cast<std::size_t>(a)] != logp[static_cast<std::size_t>(c)]) {
          return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(c)];
        }
        return a < c;
      });
      const int take = std::min<int>(k, static_cast<int>(ids.size()));
      for (int j = 0; j < take; ++j) {
        candidates.emplace_back(-(b.log_prob + logp[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)])]),
                                static_cast<int>(bi), ids[static_cast<std::size_t>(j)]);
      }
    }
    std::sort(candidates.begin(), candidates.end());

    std::vector<Beam> next;
    for (const auto& [neg_score, bi, token] : candidates) {
      if (static_cast<int>(next.size()) == k) break;
      const Beam& src = beams[static_cast<std::size_t>(bi)];
      if (token < 0) {
        next.push_back(src);
        continue;
      }
      Beam nb = src;
      nb.prefix.push_back(token);
      nb.log_prob = -neg_score;
      nb.done = token == kEosId;
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  // Final ranking normalizes by generated length; ties keep the earlier
  // (higher cumulative score) hypothesis.
  std::size_t best = 0;
  Scalar best_score = beams[0].log_prob / std::max(1, beams[0].length());
  for (std::size_t i = 1; i < beams.size(); ++i) {
    const Scalar score = beams[i].log_prob / std::max(1, beams[i].length());
    if (score > best_score) {
      best = i;
      best_score = score;
    }
  }
  GenerateResult out;
  out.tokens = strip_markers(beams[best].prefix);
  out.log_prob = beams[best].log_prob;
  return out;
}

std::vector<int> generate(const std::vector<std::vector<int>>& context, HisaModel& model,
                          const GenerateOptions& opts) {
  return generate_detailed(context, model, opts).tokens;
}

}  // namespace hisa
