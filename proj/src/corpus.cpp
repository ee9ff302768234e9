#include "hisa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hisa/errors.hpp"

namespace hisa {

namespace {

const std::vector<std::string>& reserved_forms() {
  static const std::vector<std::string> forms = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return forms;
}

bool is_reserved_form(const std::string& token) {
  const auto& forms = reserved_forms();
  return std::find(forms.begin(), forms.end(), token) != forms.end();
}

bool is_space_byte(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string lowercased(const std::string& text) {
  std::string out = text;
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string> split_codepoints(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((lead & 0xE0u) == 0xC0u) {
      len = 2;
    } else if ((lead & 0xF0u) == 0xE0u) {
      len = 3;
    } else if ((lead & 0xF8u) == 0xF0u) {
      len = 4;
    }
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0u) != 0x80u) {
        len = 1;
        break;
      }
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  const std::string lowered = lowercased(text);
  bool has_space = false;
  for (char c : lowered) {
    if (is_space_byte(c)) {
      has_space = true;
      break;
    }
  }
  if (!has_space) {
    return lowered.empty() ? std::vector<std::string>{} : split_codepoints(lowered);
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_space_byte(lowered[i])) ++i;
    std::size_t start = i;
    while (i < lowered.size() && !is_space_byte(lowered[i])) ++i;
    if (i > start) out.push_back(lowered.substr(start, i - start));
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() : id_to_token_(reserved_forms()) {}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& documents, int max_size,
                             int min_freq) {
  if (max_size <= kReservedTokens) {
    throw ConfigError("vocabulary max_size must exceed " + std::to_string(kReservedTokens) +
                      ", got " + std::to_string(max_size));
  }
  if (min_freq < 1) {
    throw ConfigError("vocabulary min_freq must be at least 1, got " + std::to_string(min_freq));
  }
  // std::map keeps tokens sorted, which settles frequency ties
  // lexicographically after the stable sort below.
  std::map<std::string, long long> counts;
  for (const auto& doc : documents) {
    for (const auto& token : doc) {
      if (!token.empty() && !is_reserved_form(token)) ++counts[token];
    }
  }
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary vocab;
  for (const auto& [token, count] : ranked) {
    if (count < min_freq) continue;
    if (vocab.size() >= max_size) break;
    vocab.token_to_id_.emplace(token, vocab.size());
    vocab.id_to_token_.push_back(token);
  }
  return vocab;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw ValueError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.find(token) != token_to_id_.end();
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& token : tokens) ids.push_back(id_of(token));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token_of(id));
  return tokens;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open vocabulary file for writing: " + path);
  out << "# tokenizer=auto\tsize=" << size() << "\tpad=" << kPadId << "\tbos=" << kBosId
      << "\teos=" << kEosId << "\tunk=" << kUnkId << "\n";
  for (int id = 0; id < size(); ++id) {
    out << id_to_token_[static_cast<std::size_t>(id)] << "\t" << id << "\n";
  }
  if (!out) throw IoError("failed while writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  Vocabulary vocab;
  std::string line;
  int line_no = 0;
  int expected_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError(path + " line " + std::to_string(line_no) + ": expected token<TAB>id");
    }
    const std::string token = line.substr(0, tab);
    int id = 0;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw IoError(path + " line " + std::to_string(line_no) + ": bad id field");
    }
    if (id != expected_id) {
      throw IoError(path + " line " + std::to_string(line_no) + ": ids must be contiguous from 0");
    }
    if (id < kReservedTokens) {
      if (token != reserved_forms()[static_cast<std::size_t>(id)]) {
        throw IoError(path + " line " + std::to_string(line_no) + ": reserved id " +
                      std::to_string(id) + " must map to " +
                      reserved_forms()[static_cast<std::size_t>(id)]);
      }
    } else {
      vocab.token_to_id_.emplace(token, id);
      vocab.id_to_token_.push_back(token);
    }
    ++expected_id;
  }
  if (expected_id < kReservedTokens) {
    throw IoError(path + ": vocabulary file is missing the reserved entries");
  }
  return vocab;
}

std::vector<RawDialogue> load_corpus(const std::string& path, bool skip_malformed,
                                     CorpusReadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<RawDialogue> dialogues;
  CorpusReadStats local;
  std::string line;
  while (std::getline(in, line)) {
    ++local.lines;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json record = nlohmann::json::parse(line);
      RawDialogue d;
      if (!record.is_object() || !record.contains("context") || !record.contains("response")) {
        throw IoError("record must be an object with context and response keys");
      }
      for (const auto& utt : record.at("context")) {
        d.context.push_back(utt.get<std::string>());
      }
      d.response = record.at("response").get<std::string>();
      d.relevant_slot = record.value("relevant", -1);
      dialogues.push_back(std::move(d));
      ++local.records;
    } catch (const std::exception& e) {
      if (skip_malformed) {
        ++local.skipped;
        continue;
      }
      throw IoError(path + " line " + std::to_string(local.lines) + ": " + e.what());
    }
  }
  if (stats != nullptr) *stats = local;
  return dialogues;
}

void save_corpus(const std::string& path, const std::vector<RawDialogue>& dialogues) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open corpus file for writing: " + path);
  for (const auto& d : dialogues) {
    nlohmann::json record;
    record["context"] = d.context;
    record["response"] = d.response;
    if (d.relevant_slot >= 0) record["relevant"] = d.relevant_slot;
    out << record.dump() << "\n";
  }
  if (!out) throw IoError("failed while writing corpus file: " + path);
}

DialogueExample make_example(const RawDialogue& raw, const Vocabulary& vocab,
                             const ExampleLimits& limits) {
  if (raw.context.empty()) throw ValueError("dialogue context must contain at least one utterance");
  if (raw.relevant_slot >= static_cast<int>(raw.context.size())) {
    throw ValueError("relevance label " + std::to_string(raw.relevant_slot) +
                     " points outside a context of " + std::to_string(raw.context.size()) +
                     " utterances");
  }

  DialogueExample ex;
  int surviving_slot = -1;
  for (std::size_t i = 0; i < raw.context.size(); ++i) {
    std::vector<int> ids = vocab.encode(tokenize(raw.context[i]));
    if (ids.empty()) continue;
    if (static_cast<int>(ids.size()) > limits.max_utterance_len) {
      ids.erase(ids.begin(), ids.end() - limits.max_utterance_len);
    }
    if (static_cast<int>(i) == raw.relevant_slot) {
      surviving_slot = static_cast<int>(ex.context.size());
    }
    ex.context.push_back(std::move(ids));
  }
  if (ex.context.empty()) {
    throw ValueError("dialogue context has no utterance with any tokens");
  }
  if (static_cast<int>(ex.context.size()) > limits.max_context_utterances) {
    const int dropped = static_cast<int>(ex.context.size()) - limits.max_context_utterances;
    ex.context.erase(ex.context.begin(), ex.context.begin() + dropped);
    surviving_slot = surviving_slot < dropped ? -1 : surviving_slot - dropped;
  }
  ex.relevant_slot = surviving_slot;

  ex.response = vocab.encode(tokenize(raw.response));
  if (ex.response.empty()) throw ValueError("dialogue response has no tokens");
  if (static_cast<int>(ex.response.size()) > limits.max_target_len) {
    ex.response.resize(static_cast<std::size_t>(limits.max_target_len));
  }
  ex.response.push_back(kEosId);
  return ex;
}

int Batch::context_at(int b, int i, int t) const {
  return context_tokens[static_cast<std::size_t>((b * max_n + i) * max_utt_len + t)];
}

int Batch::response_at(int b, int t) const {
  return response_tokens[static_cast<std::size_t>(b * max_resp_len + t)];
}

std::vector<Batch> make_batches(const std::vector<DialogueExample>& examples, int batch_size,
                                Rng* shuffle) {
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
  }
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle != nullptr) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle->uniform_int(static_cast<int>(i)))]);
    }
  }

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Batch b;
    b.batch_size = static_cast<int>(stop - start);
    for (std::size_t k = start; k < stop; ++k) {
      const DialogueExample& ex = examples[order[k]];
      b.max_n = std::max(b.max_n, static_cast<int>(ex.context.size()));
      b.max_resp_len = std::max(b.max_resp_len, static_cast<int>(ex.response.size()));
      for (const auto& utt : ex.context) {
        b.max_utt_len = std::max(b.max_utt_len, static_cast<int>(utt.size()));
      }
    }
    b.context_tokens.assign(static_cast<std::size_t>(b.batch_size * b.max_n * b.max_utt_len),
                            kPadId);
    b.context_mask.assign(b.context_tokens.size(), 0);
    b.response_tokens.assign(static_cast<std::size_t>(b.batch_size * b.max_resp_len), kPadId);
    b.response_mask.assign(b.response_tokens.size(), 0);
    b.utterance_lens.assign(static_cast<std::size_t>(b.batch_size * b.max_n), 0);
    for (std::size_t k = start; k < stop; ++k) {
      const DialogueExample& ex = examples[order[k]];
      const int row = static_cast<int>(k - start);
      b.num_utterances.push_back(static_cast<int>(ex.context.size()));
      b.response_lens.push_back(static_cast<int>(ex.response.size()));
      b.relevant_slots.push_back(ex.relevant_slot);
      b.gds_p.push_back(ex.gds_p);
      for (std::size_t i = 0; i < ex.context.size(); ++i) {
        b.utterance_lens[static_cast<std::size_t>(row * b.max_n) + i] =
            static_cast<int>(ex.context[i].size());
        for (std::size_t t = 0; t < ex.context[i].size(); ++t) {
          const auto idx =
              static_cast<std::size_t>((row * b.max_n + static_cast<int>(i)) * b.max_utt_len) + t;
          b.context_tokens[idx] = ex.context[i][t];
          b.context_mask[idx] = 1;
        }
      }
      for (std::size_t t = 0; t < ex.response.size(); ++t) {
        const auto idx = static_cast<std::size_t>(row * b.max_resp_len) + t;
        b.response_tokens[idx] = ex.response[t];
        b.response_mask[idx] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<DialogueExample> unbatch(const Batch& batch) {
  std::vector<DialogueExample> examples;
  for (int b = 0; b < batch.batch_size; ++b) {
    DialogueExample ex;
    const int n = batch.num_utterances[static_cast<std::size_t>(b)];
    for (int i = 0; i < n; ++i) {
      const int len = batch.utterance_lens[static_cast<std::size_t>(b * batch.max_n + i)];
      std::vector<int> utt(static_cast<std::size_t>(len));
      for (int t = 0; t < len; ++t) utt[static_cast<std::size_t>(t)] = batch.context_at(b, i, t);
      ex.context.push_back(std::move(utt));
    }
    const int rlen = batch.response_lens[static_cast<std::size_t>(b)];
    for (int t = 0; t < rlen; ++t) ex.response.push_back(batch.response_at(b, t));
    ex.relevant_slot = batch.relevant_slots[static_cast<std::size_t>(b)];
    ex.gds_p = batch.gds_p[static_cast<std::size_t>(b)];
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<RawDialogue> synth_corpus(const SynthSpec& spec) {
  if (spec.num_examples < 1) {
    throw ConfigError("num_examples must be at least 1, got " + std::to_string(spec.num_examples));
  }
  if (spec.n_utterances < 1) {
    throw ConfigError("n_utterances must be at least 1, got " + std::to_string(spec.n_utterances));
  }
  if (spec.vocab_size < 20) {
    throw ConfigError("synthetic corpora need vocab_size of at least 20, got " +
                      std::to_string(spec.vocab_size));
  }
  if (spec.distractor_ratio < 0.0 || spec.distractor_ratio > 1.0) {
    throw ConfigError("distractor_ratio must lie in [0, 1]");
  }

  const int content = spec.vocab_size - kReservedTokens;
  constexpr int kMinPool = 8;
  int distractor_count =
      static_cast<int>(std::lround(spec.distractor_ratio * static_cast<double>(content)));
  distractor_count = std::max(kMinPool, std::min(content - kMinPool, distractor_count));
  const int relevant_count = content - distractor_count;
  if (relevant_count < kMinPool || distractor_count < kMinPool) {
    throw ConfigError("vocab_size " + std::to_string(spec.vocab_size) +
                      " cannot host two usable word pools");
  }

  auto word = [&](int index) {
    std::ostringstream name;
    name << "w" << std::setw(3) << std::setfill('0') << index;
    return name.str();
  };

  Rng rng(spec.seed);
  std::vector<RawDialogue> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.num_examples));
  for (int e = 0; e < spec.num_examples; ++e) {
    RawDialogue d;
    d.relevant_slot = rng.uniform_int(spec.n_utterances);
    for (int slot = 0; slot < spec.n_utterances; ++slot) {
      const int len = 3 + rng.uniform_int(4);
      std::vector<std::string> words;
      for (int t = 0; t < len; ++t) {
        if (slot == d.relevant_slot) {
          words.push_back(word(rng.uniform_int(relevant_count)));
        } else {
          words.push_back(word(relevant_count + rng.uniform_int(distractor_count)));
        }
      }
      if (slot == d.relevant_slot) {
        std::vector<std::string> echoed(words.rbegin(), words.rend());
        d.response = join_tokens(echoed);
      }
      d.context.push_back(join_tokens(words));
    }
    corpus.push_back(std::move(d));
  }
  return corpus;
}

}  // namespace hisa
