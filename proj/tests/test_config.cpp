#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "hisa/config.hpp"
#include "hisa/errors.hpp"

using namespace hisa;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/hisa_config_test_") + name;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("defaults carry the full-scale model and standard training knobs") {
  RunConfig cfg;
  CHECK(cfg.get_int("model.d_model") == 512);
  CHECK(cfg.get_int("model.heads") == 8);
  CHECK(cfg.get_int("model.enc_layers") == 4);
  CHECK(cfg.get_int("model.dec_layers") == 2);
  CHECK(cfg.get_scalar("train.learning_rate") == 0.0001);
  CHECK(cfg.get_scalar("train.eta1") == 1.0);
  CHECK(cfg.get_int("generate.beam_width") == 1);
  CHECK(cfg.get_bool("eval.per_example") == false);
}

TEST_CASE("profiles rewrite the model scale") {
  RunConfig desk;
  desk.apply_profile("desk");
  CHECK(desk.get_int("model.d_model") == 64);
  CHECK(desk.get_int("model.d_ff") == 128);
  CHECK(desk.get_int("model.heads") == 2);
  CHECK(desk.get_int("model.enc_layers") == 2);
  CHECK(desk.get_int("model.dec_layers") == 1);
  CHECK(desk.get_scalar("train.learning_rate") == 0.003);

  RunConfig paper;
  paper.apply_profile("paper");
  CHECK(paper.get_int("model.d_model") == 512);
  CHECK(paper.get_int("model.heads") == 8);

  CHECK_THROWS_AS(paper.apply_profile("mainframe"), ConfigError);
}

TEST_CASE("later sources override earlier ones") {
  RunConfig cfg;
  cfg.apply_profile("desk");
  cfg.apply_text("model.d_model = 32\ntrain.epochs = 7\n", "inline");
  CHECK(cfg.get_int("model.d_model") == 32);
  CHECK(cfg.get_int("train.epochs") == 7);
  CHECK(cfg.get_int("model.heads") == 2);

  cfg.set("model.d_model", "16");
  CHECK(cfg.get_int("model.d_model") == 16);
}

TEST_CASE("unknown keys are rejected everywhere") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("model.dmodel", "64"), ConfigError);
  CHECK_THROWS_AS(cfg.get("model.dmodel"), ConfigError);
  CHECK_THROWS_WITH_AS(cfg.apply_text("model.width = 3\n", "inline"),
                       doctest::Contains("model.width"), ConfigError);
}

TEST_CASE("config files tolerate comments and report bad lines") {
  RunConfig cfg;
  cfg.apply_text("# a comment\n\n; another\n  train.epochs = 3  \n", "inline");
  CHECK(cfg.get_int("train.epochs") == 3);

  CHECK_THROWS_WITH_AS(cfg.apply_text("train.epochs\n", "inline"), doctest::Contains("line 1"),
                       ConfigError);
  CHECK_THROWS_AS(cfg.apply_text("= 3\n", "inline"), ConfigError);
}

TEST_CASE("values keep everything after the first equals sign") {
  RunConfig cfg;
  cfg.apply_text("embedder.method = bow=ish\n", "inline");
  CHECK(cfg.get("embedder.method") == "bow=ish");
}

TEST_CASE("typed getters reject unparsable values") {
  RunConfig cfg;
  cfg.set("train.epochs", "three");
  CHECK_THROWS_WITH_AS(cfg.get_int("train.epochs"), doctest::Contains("train.epochs"), ConfigError);
  cfg.set("train.learning_rate", "fast");
  CHECK_THROWS_AS(cfg.get_scalar("train.learning_rate"), ConfigError);
  cfg.set("train.seed", "-1");
  CHECK_THROWS_AS(cfg.get_u64("train.seed"), ConfigError);
  cfg.set("eval.per_example", "maybe");
  CHECK_THROWS_AS(cfg.get_bool("eval.per_example"), ConfigError);
  cfg.set("train.epochs", "2x");
  CHECK_THROWS_AS(cfg.get_int("train.epochs"), ConfigError);
}

TEST_CASE("resolved text is a fixpoint") {
  RunConfig cfg;
  cfg.apply_profile("desk");
  cfg.set("train.epochs", "9");
  std::string echo = cfg.resolved_text();

  RunConfig replayed;
  replayed.apply_text(echo, "echo");
  CHECK(replayed.resolved_text() == echo);
  CHECK(replayed.get_int("train.epochs") == 9);
  CHECK(replayed.get_int("model.d_model") == 64);
}

TEST_CASE("resolved files round-trip through disk") {
  RunConfig cfg;
  cfg.apply_profile("desk");
  std::string path = temp_path("resolved.ini");
  cfg.write_resolved(path);

  RunConfig loaded;
  loaded.apply_file(path);
  CHECK(loaded.resolved_text() == cfg.resolved_text());
  std::remove(path.c_str());

  CHECK_THROWS_AS(cfg.apply_file(temp_path("missing.ini")), IoError);
}

TEST_CASE("file errors carry the path and line") {
  std::string path = temp_path("bad.ini");
  write_file(path, "train.epochs = 2\nnope.key = 1\n");
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.apply_file(path), doctest::Contains("line 2"), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("structured views mirror the flat keys") {
  RunConfig cfg;
  cfg.apply_profile("desk");
  cfg.set("train.batch_size", "4");
  cfg.set("model.max_target_len", "12");
  cfg.set("synth.examples", "25");
  cfg.set("generate.beam_width", "3");

  HisaConfig model = cfg.model_config(80);
  CHECK(model.vocab_size == 80);
  CHECK(model.d_model == 64);
  CHECK(model.num_heads == 2);
  CHECK(model.max_target_len == 12);
  model.validate();

  TrainConfig train = cfg.train_config();
  CHECK(train.batch_size == 4);
  CHECK(train.learning_rate == 0.003);
  train.validate();

  SynthSpec synth = cfg.synth_spec();
  CHECK(synth.num_examples == 25);
  CHECK(synth.vocab_size == 60);

  ExampleLimits limits = cfg.example_limits();
  CHECK(limits.max_target_len == 12);
  CHECK(limits.max_utterance_len == 30);

  GenerateOptions gen = cfg.generate_options();
  CHECK(gen.beam_width == 3);
  CHECK(gen.max_len == 30);
}
