#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hisa/corpus.hpp"
#include "hisa/model.hpp"
#include "hisa/train.hpp"

namespace hisa {

// Flat run configuration: every knob lives under a dotted key with a string
// value. Known keys are fixed up front so a typo fails loudly instead of
// silently falling back to a default. Sources merge in precedence order:
// built-in defaults, then a named profile, then a config file, then explicit
// overrides.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, std::string>& default_values();

  // "paper" restates the full-scale defaults; "desk" shrinks the model for
  // fast runs on one core.
  void apply_profile(const std::string& name);

  // INI-style lines: `key = value`, blank lines and #/; comments ignored.
  void apply_file(const std::string& path);
  void apply_text(const std::string& text, const std::string& origin);

  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  Scalar get_scalar(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  HisaConfig model_config(int vocab_size) const;
  TrainConfig train_config() const;
  SynthSpec synth_spec() const;
  ExampleLimits example_limits() const;
  GenerateOptions generate_options() const;

  // The full key set, one `key = value` per line, sorted: feeding this back
  // through apply_text reproduces the configuration exactly.
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace hisa
