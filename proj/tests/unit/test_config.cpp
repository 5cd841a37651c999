// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "doctest.h"
#include "saelab/config.hpp"

using namespace saelab;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_config(yaml, ExperimentConfig::desk());
  } catch (const InvalidInput& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("desk and paper-scale defaults validate") {
  const auto desk = ExperimentConfig::desk();
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.models.size() == 2);
  CHECK(desk.attacks.enabled() == std::vector<std::string>{"gcg", "beast"});

  const auto paper = ExperimentConfig::paper_scale();
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.models.size() == 6);
  CHECK(paper.corpus.attack == 218);
  CHECK(paper.attacks.gcg_config.steps == 500);
  CHECK(paper.attacks.gcg_config.suffix_len == 20);
  CHECK(paper.attacks.beast_config.k1 == 15);
  CHECK(paper.attacks.beast_config.depth == 20);
}

TEST_CASE("hash is stable and sensitive") {
  const auto a = ExperimentConfig::desk();
  CHECK(a.hash() == ExperimentConfig::desk().hash());
  CHECK(a.hash().size() == 16);
  auto b = a;
  b.seed = 1;
  CHECK(a.hash() != b.hash());
  auto c = a;
  c.sae.lambda_grid.back() = 9.0;
  CHECK(a.hash() != c.hash());
}

TEST_CASE("canonical YAML round-trips") {
  auto cfg = ExperimentConfig::desk();
  cfg.seed = 42;
  cfg.sae.lambda_grid = {0.05, 0.5};
  cfg.attacks.gcg_config.steps = 7;
  const auto back = parse_config(cfg.to_yaml(), ExperimentConfig{});
  CHECK(back.to_yaml() == cfg.to_yaml());
  CHECK(back.hash() == cfg.hash());
}

TEST_CASE("overlay keeps unspecified defaults") {
  const auto cfg = parse_config("seed: 9\nattacks:\n  gcg:\n    steps: 12\n", ExperimentConfig::desk());
  CHECK(cfg.seed == 9);
  CHECK(cfg.attacks.gcg_config.steps == 12);
  CHECK(cfg.attacks.gcg_config.suffix_len == ExperimentConfig::desk().attacks.gcg_config.suffix_len);
  CHECK(cfg.models.size() == 2);
}

TEST_CASE("models list replaces the defaults") {
  const auto cfg = parse_config("models:\n  - id: solo\n    d_model: 16\nablation:\n  model: solo\n", ExperimentConfig::desk());
  REQUIRE(cfg.models.size() == 1);
  CHECK(cfg.models[0].id == "solo");
  CHECK(cfg.models[0].model.d_model == 16);
}

TEST_CASE("errors name the offending path") {
  CHECK(error_of("attacks:\n  gcg:\n    stepz: 3\n").find("attacks.gcg.stepz") != std::string::npos);
  CHECK(error_of("attacks:\n  gcg:\n    steps: many\n").find("attacks.gcg.steps") != std::string::npos);
  CHECK(error_of("attacks:\n  gcg:\n    steps: -4\n").find("attacks.gcg.steps") != std::string::npos);
  CHECK(error_of("bogus: 1\n").find("bogus") != std::string::npos);
  CHECK(error_of("attacks:\n  gcg:\n    filler: ab\n").find("filler") != std::string::npos);
  CHECK(error_of("sae:\n  lambda_grid: 3\n").find("sae.lambda_grid") != std::string::npos);
  CHECK(error_of("models:\n  - d_model: 16\n").find("models[0].id") != std::string::npos);
  CHECK(error_of("seed: [1\n") != "");
}

TEST_CASE("validation rejects inconsistent settings") {
  auto cfg = ExperimentConfig::desk();
  cfg.ablation.model = "nope";
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);

  cfg = ExperimentConfig::desk();
  cfg.attacks.gcg = cfg.attacks.beast = false;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);

  cfg = ExperimentConfig::desk();
  cfg.models.push_back(cfg.models.front());
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);

  cfg = ExperimentConfig::desk();
  cfg.models[0].sae_layer = 9;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}
