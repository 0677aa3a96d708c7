// SPDX-License-Identifier: Apache-2.0

#include "krlm/config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace krlm;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    return e.what();
  }
  return {};
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("krlm_test_" + name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults match the reference architecture and objective") {
    const RunConfig c;
    CHECK(c.model.encoder.layers == 6);
    CHECK(c.model.encoder.hidden == 64);
    CHECK(c.model.memory_k == 50);
    CHECK(c.model.backbone.layers == 2);
    CHECK(c.model.backbone.hidden == 128);
    CHECK(c.train.lambda == 0.5);
    CHECK(c.train.negatives == 256);
    CHECK(c.train.sign == BceSign::standard);
    CHECK(c.protocol == Protocol::filtered);
    CHECK(c.precision == Precision::f64);
    CHECK(c.jobs == 1);
  }

  TEST_CASE("flags override the environment, which overrides the file") {
    const fs::path file = write_file("precedence.conf", "# comment\nmemory-k 50\nlambda = 0.25\ngnn-layers 3\n");
    const RunConfig a = parse_config(file, {}, {{"memory-k", "0"}});
    CHECK(a.model.memory_k == 0);
    CHECK(a.train.lambda == 0.25);
    CHECK(a.model.encoder.layers == 3);
    CHECK(a.explicit_keys.count("memory-k") == 1);
    CHECK(a.explicit_keys.count("negatives") == 0);
    const RunConfig b = parse_config(file, {{"KRLM_LAMBDA", "0.75"}, {"KRLM_MEMORY_K", "7"}}, {{"memory-k", "2"}});
    CHECK(b.train.lambda == 0.75);
    CHECK(b.model.memory_k == 2);
    const RunConfig c = parse_config(file, {{"KRLM_MEMORY_K", "7"}, {"HOME", "/x"}}, {});
    CHECK(c.model.memory_k == 7);
  }

  TEST_CASE("duplicate file keys warn and keep the last value") {
    RunConfig c;
    std::vector<std::string> warnings;
    apply_config_text(c, "negatives 10\nnegatives 20\n", &warnings);
    CHECK(c.train.negatives == 20);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("negatives") != std::string::npos);
  }

  TEST_CASE("unknown keys and malformed values name the key") {
    RunConfig c;
    CHECK(message_of([&] { set_config_value(c, "memory-kk", "3"); }).find("memory-kk") != std::string::npos);
    CHECK(message_of([&] { set_config_value(c, "memory-k", "three"); }).find("memory-k") != std::string::npos);
    CHECK(message_of([&] { set_config_value(c, "lambda", "0.5x"); }).find("lambda") != std::string::npos);
    CHECK(message_of([&] { set_config_value(c, "protocol", "fuzzy"); }).find("protocol") != std::string::npos);
    CHECK(message_of([&] { apply_config_text(c, "bogus 1\n"); }).find("bogus") != std::string::npos);
  }

  TEST_CASE("every documented key is accepted by the setter") {
    for (const std::string& key : config_keys()) CHECK(!key.empty());
    RunConfig c;
    set_config_value(c, "bce-sign", "as-printed");
    CHECK(c.train.sign == BceSign::as_printed);
    set_config_value(c, "mode", "f32");
    CHECK(c.precision == Precision::f32);
    set_config_value(c, "train-mode", "finetune");
    CHECK(c.train.mode == TrainMode::finetune);
  }

  TEST_CASE("the run seed reaches the model and trainer") {
    RunConfig c;
    set_config_value(c, "seed", "99");
    set_config_value(c, "jobs", "3");
    c.finalize();
    CHECK(c.model.seed == 99);
    CHECK(c.train.seed == 99);
    CHECK(c.train.jobs == 3);
    const auto j = c.to_json();
    CHECK(j.contains("model"));
  }
}
