#include "hisa/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "hisa/errors.hpp"

namespace hisa {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"model.d_model", "512"},
      {"model.d_ff", "0"},
      {"model.heads", "8"},
      {"model.enc_layers", "4"},
      {"model.dec_layers", "2"},
      {"model.max_utterance_len", "30"},
      {"model.max_context_utterances", "10"},
      {"model.max_target_len", "30"},
      {"model.init_seed", "1"},
      {"train.learning_rate", "0.0001"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-08"},
      {"train.clip_norm", "1"},
      {"train.epochs", "1"},
      {"train.max_steps", "0"},
      {"train.batch_size", "32"},
      {"train.eta1", "1"},
      {"train.eta2", "1"},
      {"train.seed", "1"},
      {"train.checkpoint_interval", "0"},
      {"embedder.seed", "1"},
      {"embedder.dim", "64"},
      {"embedder.method", "bow"},
      {"generate.beam_width", "1"},
      {"generate.max_len", "30"},
      {"eval.per_example", "false"},
      {"synth.examples", "100"},
      {"synth.utterances", "4"},
      {"synth.vocab", "60"},
      {"synth.distractor_ratio", "0.5"},
      {"synth.seed", "1"},
      {"vocab.max_size", "10000"},
      {"vocab.min_freq", "1"},
  };
  return defaults;
}

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::apply_profile(const std::string& name) {
  if (name == "paper") {
    set("model.d_model", "512");
    set("model.d_ff", "0");
    set("model.heads", "8");
    set("model.enc_layers", "4");
    set("model.dec_layers", "2");
  } else if (name == "desk") {
    set("model.d_model", "64");
    set("model.d_ff", "128");
    set("model.heads", "2");
    set("model.enc_layers", "2");
    set("model.dec_layers", "1");
    set("train.learning_rate", "0.003");
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_text(buffer.str(), path);
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + " line " + std::to_string(line_number) +
                        ": expected `key = value`, got '" + stripped + "'");
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + " line " + std::to_string(line_number) + ": empty key");
    }
    if (values_.find(key) == values_.end()) {
      throw ConfigError(origin + " line " + std::to_string(line_number) + ": unknown key '" + key +
                        "'");
    }
    values_[key] = value;
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    long long value = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    if (value < -2147483648LL || value > 2147483647LL) throw std::out_of_range(text);
    return static_cast<int>(value);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as an integer");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    std::uint64_t value = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as an unsigned integer");
  }
}

Scalar RunConfig::get_scalar(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<Scalar>(value);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& text = get(key);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a boolean");
}

HisaConfig RunConfig::model_config(int vocab_size) const {
  HisaConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = get_int("model.d_model");
  cfg.d_ff = get_int("model.d_ff");
  cfg.num_heads = get_int("model.heads");
  cfg.enc_layers = get_int("model.enc_layers");
  cfg.dec_layers = get_int("model.dec_layers");
  cfg.max_utterance_len = get_int("model.max_utterance_len");
  cfg.max_context_utterances = get_int("model.max_context_utterances");
  cfg.max_target_len = get_int("model.max_target_len");
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.learning_rate = get_scalar("train.learning_rate");
  cfg.beta1 = get_scalar("train.beta1");
  cfg.beta2 = get_scalar("train.beta2");
  cfg.adam_eps = get_scalar("train.adam_eps");
  cfg.clip_norm = get_scalar("train.clip_norm");
  cfg.epochs = get_int("train.epochs");
  cfg.max_steps = get_int("train.max_steps");
  cfg.batch_size = get_int("train.batch_size");
  cfg.eta1 = get_scalar("train.eta1");
  cfg.eta2 = get_scalar("train.eta2");
  cfg.seed = get_u64("train.seed");
  cfg.checkpoint_interval = get_int("train.checkpoint_interval");
  return cfg;
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec spec;
  spec.num_examples = get_int("synth.examples");
  spec.n_utterances = get_int("synth.utterances");
  spec.vocab_size = get_int("synth.vocab");
  spec.distractor_ratio = get_scalar("synth.distractor_ratio");
  spec.seed = get_u64("synth.seed");
  return spec;
}

ExampleLimits RunConfig::example_limits() const {
  ExampleLimits limits;
  limits.max_utterance_len = get_int("model.max_utterance_len");
  limits.max_context_utterances = get_int("model.max_context_utterances");
  limits.max_target_len = get_int("model.max_target_len");
  return limits;
}

GenerateOptions RunConfig::generate_options() const {
  GenerateOptions opts;
  opts.beam_width = get_int("generate.beam_width");
  opts.max_len = get_int("generate.max_len");
  return opts;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  return out.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write resolved config to " + path);
  out << resolved_text();
  if (!out) throw IoError("failed writing resolved config to " + path);
}

}  // namespace hisa
