#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlsm/checkpoint.hpp"
#include "mlsm/config.hpp"
#include "support/test_util.hpp"
#include "support/toy_dataset.hpp"

#include <fstream>

using namespace mlsm;
using namespace mlsm::testutil;
namespace fs = std::filesystem;

TEST_CASE("config file parsing: values, comments, overrides") {
  const std::string dir = fresh_temp_dir("cfg");
  const std::string path = dir + "/run.cfg";
  std::ofstream(path) << "# comment line\n"
                         "data.root = /tmp/ds\n"
                         "train.max_episodes = 2000\n"
                         "train.lr0 = 0.001\n"
                         "  model.ablation =   I+G+O  \n"
                         "\n"
                         "flag.on = true\n";
  Config cfg = Config::from_file(path);
  CHECK(cfg.get_str("data.root") == "/tmp/ds");
  CHECK(cfg.get_int("train.max_episodes", 0) == 2000);
  CHECK(cfg.get_double("train.lr0", 0) == doctest::Approx(0.001));
  CHECK(cfg.get_str("model.ablation") == "I+G+O");
  CHECK(cfg.get_bool("flag.on", false));
  CHECK(cfg.get_int("missing.key", 7) == 7);

  cfg.apply_override("train.max_episodes=50");
  CHECK(cfg.get_int("train.max_episodes", 0) == 50);
  CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(cfg.get_int("data.root", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("data.root", false), ConfigError);
}

TEST_CASE("config errors: missing file, malformed line, required key") {
  CHECK_THROWS_AS(Config::from_file("/nonexistent/x.cfg"), ConfigError);
  const std::string dir = fresh_temp_dir("cfg_bad");
  std::ofstream(dir + "/bad.cfg") << "just a line without equals\n";
  CHECK_THROWS_AS(Config::from_file(dir + "/bad.cfg"), ConfigError);
  Config empty;
  CHECK_THROWS_AS(empty.require_str("data.root"), ConfigError);
}

TEST_CASE("config serialization is canonical and reloadable") {
  Config cfg;
  cfg.set("b.key", "2");
  cfg.set("a.key", "1");
  const std::string text = cfg.serialize();
  CHECK(text == "a.key = 1\nb.key = 2\n");
  const std::string dir = fresh_temp_dir("cfg_rt");
  cfg.save(dir + "/resolved.cfg");
  Config back = Config::from_file(dir + "/resolved.cfg");
  CHECK(back.values() == cfg.values());
}

TEST_CASE("checkpoint arrays: round trip and refusals") {
  const std::string dir = fresh_temp_dir("ckpt");
  Rng rng(1);
  nn::Linear<float> fc, grad;
  fc.init(rng, 4, 3);
  grad.zero_like(fc);
  std::vector<nn::ParamRef<float>> refs;
  register_param(refs, "fc.weight", fc.weight, grad.weight);
  register_param(refs, "fc.bias", fc.bias, grad.bias);

  const std::string path = dir + "/params.bin";
  save_params(path, "fp-v1", refs);
  CHECK(peek_fingerprint(path) == "fp-v1");

  nn::Linear<float> other, og;
  other.init(rng, 4, 3);
  og.zero_like(other);
  std::vector<nn::ParamRef<float>> orefs;
  register_param(orefs, "fc.weight", other.weight, og.weight);
  register_param(orefs, "fc.bias", other.bias, og.bias);
  load_params(path, "fp-v1", orefs);
  CHECK((other.weight - fc.weight).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((other.bias - fc.bias).cwiseAbs().maxCoeff() == 0.0f);

  // fingerprint mismatch refuses
  CHECK_THROWS_WITH(load_params(path, "fp-v2", orefs), doctest::Contains("fingerprint mismatch"));

  // scalar width mismatch refuses
  std::vector<nn::ParamRef<double>> drefs;
  Mat<double> dw = Mat<double>::Zero(4, 3), dg = dw;
  register_param(drefs, "fc.weight", dw, dg);
  CHECK_THROWS_WITH(load_params(path, "fp-v1", drefs), doctest::Contains("scalar width"));

  // missing array refuses
  std::vector<nn::ParamRef<float>> extra = orefs;
  Mat<float> more = Mat<float>::Zero(2, 2), moreg = more;
  register_param(extra, "not.there", more, moreg);
  CHECK_THROWS_WITH(load_params(path, "fp-v1", extra), doctest::Contains("missing array"));

  // shape mismatch refuses
  nn::Linear<float> wrong, wg;
  wrong.init(rng, 5, 3);
  wg.zero_like(wrong);
  std::vector<nn::ParamRef<float>> wrefs;
  register_param(wrefs, "fc.weight", wrong.weight, wg.weight);
  CHECK_THROWS_WITH(load_params(path, "fp-v1", wrefs), doctest::Contains("shape"));
}

TEST_CASE("adam state round trips through the optimizer file") {
  const std::string dir = fresh_temp_dir("ckpt_adam");
  Rng rng(2);
  nn::Linear<float> fc, grad;
  fc.init(rng, 3, 2);
  grad.zero_like(fc);
  std::vector<nn::ParamRef<float>> refs;
  register_param(refs, "w", fc.weight, grad.weight);
  register_param(refs, "b", fc.bias, grad.bias);

  nn::Adam<float> adam;
  adam.reset(refs);
  for (int i = 0; i < 5; ++i) {
    grad.weight.setConstant(0.1f * (i + 1));
    grad.bias.setConstant(-0.2f);
    adam.step(refs, 1e-3);
  }
  save_adam(dir + "/optim.bin", "fp", refs, adam);

  nn::Adam<float> back;
  load_adam(dir + "/optim.bin", "fp", refs, back);
  CHECK(back.t == adam.t);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK((back.m[i] - adam.m[i]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back.v[i] - adam.v[i]).cwiseAbs().maxCoeff() == 0.0f);
  }
}
