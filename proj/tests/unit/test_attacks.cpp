// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <limits>

#include "doctest.h"
#include "saelab/attacks.hpp"
#include "support/finite_diff.hpp"

using namespace saelab;

namespace {

std::shared_ptr<const TransformerParams> toy_model(std::size_t vocab, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 32;
  c.seed = seed;
  RngStream rng(seed, 0);
  return std::make_shared<TransformerParams>(TransformerParams::initialize(c, rng));
}

AttackInstance toy_instance(std::shared_ptr<const TransformerParams> model, RngStream& rng,
                            std::uint64_t stream) {
  AttackInstance inst;
  inst.id = "p" + std::to_string(stream);
  inst.model_id = "toy";
  inst.model = std::move(model);
  const std::size_t vocab = inst.model->config.vocab_size;
  inst.prompt = testing::random_text_tokens(rng, 4, vocab);
  inst.prompt.insert(inst.prompt.begin(), tokens::bos);
  inst.target = testing::random_text_tokens(rng, 3, vocab);
  inst.stream = stream;
  return inst;
}

// argmin over every single-token suffix
std::pair<TokenId, double> brute_force_single(const AttackInstance& inst) {
  std::pair<TokenId, double> best{-1, std::numeric_limits<double>::infinity()};
  for (std::size_t v = tokens::num_special; v < inst.model->config.vocab_size; ++v) {
    const TokenSequence s{static_cast<TokenId>(v)};
    const double loss = target_loss(*inst.model, inst.prompt, s, inst.target, inst.hooks);
    if (loss < best.second) best = {static_cast<TokenId>(v), loss};
  }
  return best;
}

// Uniform random single-token substitutions with the same step/batch budget.
double random_search(const AttackInstance& inst, const GcgConfig& cfg) {
  TokenSequence suffix(cfg.suffix_len, cfg.filler);
  double incumbent = target_loss(*inst.model, inst.prompt, suffix, inst.target, inst.hooks);
  RngStream rng(cfg.seed + 999, inst.stream);
  const std::size_t text = inst.model->config.vocab_size - tokens::num_special;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double best = incumbent;
    TokenSequence best_suffix = suffix;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      TokenSequence trial = suffix;
      trial[rng.index(cfg.suffix_len)] = static_cast<TokenId>(tokens::num_special + rng.index(text));
      const double loss = target_loss(*inst.model, inst.prompt, trial, inst.target, inst.hooks);
      if (loss < best) {
        best = loss;
        best_suffix = trial;
      }
    }
    suffix = best_suffix;
    incumbent = best;
  }
  return incumbent;
}

}  // namespace

TEST_CASE("default configurations") {
  GcgConfig g;
  CHECK(g.steps == 500);
  CHECK(g.suffix_len == 20);
  BeastConfig b;
  CHECK(b.k1 == 15);
  CHECK(b.k2 == 15);
  CHECK(b.depth == 20);
  CHECK(GcgConfig::desk().steps == 100);
  CHECK(GcgConfig::desk().suffix_len == 8);
  CHECK(to_string(Configuration::sae) == "SAE");
  CHECK(parse_configuration("PROMPT") == Configuration::prompt);
  CHECK_THROWS_AS(parse_configuration("sae"), InvalidInput);
}

TEST_CASE("gcg with one suffix token finds the exhaustive optimum") {
  auto model = toy_model(12, 1);
  RngStream rng(31, 0);
  GcgConfig cfg;
  cfg.steps = 3;
  cfg.suffix_len = 1;
  cfg.topk = 8;
  cfg.batch = 8;
  cfg.filler = 4;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto inst = toy_instance(model, rng, i);
    const auto [token, loss] = brute_force_single(inst);
    const auto r = run_gcg(inst, cfg, 0);
    CHECK(r.suffix == TokenSequence{token});
    CHECK(r.final_loss == doctest::Approx(loss).epsilon(1e-12));
    CHECK(r.snapshots.empty());
  }
}

TEST_CASE("beast at depth one with every token finds the exhaustive optimum") {
  auto model = toy_model(12, 2);
  RngStream rng(32, 0);
  BeastConfig cfg;
  cfg.k1 = 1;
  cfg.k2 = 12;
  cfg.depth = 1;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto inst = toy_instance(model, rng, i);
    const auto [token, loss] = brute_force_single(inst);
    const auto r = run_beast(inst, cfg);
    CHECK(r.suffix == TokenSequence{token});
    CHECK(r.final_loss == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("gcg telemetry and determinism") {
  auto model = toy_model(32, 3);
  RngStream rng(33, 0);
  GcgConfig cfg;
  cfg.steps = 25;
  cfg.suffix_len = 4;
  cfg.topk = 6;
  cfg.batch = 10;
  cfg.seed = 5;
  cfg.filler = 9;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto inst = toy_instance(model, rng, i);
    const auto a = run_gcg(inst, cfg, 10);
    REQUIRE(a.loss_trajectory.size() == cfg.steps + 1);
    for (std::size_t t = 1; t < a.loss_trajectory.size(); ++t)
      CHECK(a.loss_trajectory[t] <= a.loss_trajectory[t - 1]);
    CHECK(a.final_loss == a.loss_trajectory.back());
    CHECK(a.final_loss == doctest::Approx(target_loss(*model, inst.prompt, a.suffix, inst.target, {})).epsilon(1e-12));
    REQUIRE(a.snapshots.size() == 3);
    CHECK(a.snapshots[1].step == 10);
    for (const auto& s : a.snapshots) {
      CHECK(s.gradient.rows() == cfg.suffix_len);
      CHECK(s.gradient.cols() == model->config.d_model);
    }
    for (TokenId t : a.suffix) CHECK_FALSE(tokens::is_special(t));
    const auto b = run_gcg(inst, cfg, 10);
    CHECK(a.suffix == b.suffix);
    CHECK(a.loss_trajectory == b.loss_trajectory);
  }
}

TEST_CASE("gcg beats random substitution at equal budget") {
  auto model = toy_model(32, 4);
  RngStream rng(34, 0);
  GcgConfig cfg;
  cfg.steps = 10;
  cfg.suffix_len = 4;
  cfg.topk = 4;
  cfg.batch = cfg.topk * cfg.suffix_len;
  cfg.filler = 9;
  int wins = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    auto inst = toy_instance(model, rng, i);
    if (run_gcg(inst, cfg, 0).final_loss <= random_search(inst, cfg)) ++wins;
  }
  CHECK(wins >= 16);
}

TEST_CASE("beast is gradient free, bounded and deterministic") {
  auto model = toy_model(32, 5);
  RngStream rng(35, 0);
  BeastConfig cfg;
  cfg.k1 = 3;
  cfg.k2 = 4;
  cfg.depth = 5;
  auto inst = toy_instance(model, rng, 0);
  const std::uint64_t before = suffix_gradient_calls();
  const auto a = run_beast(inst, cfg);
  CHECK(suffix_gradient_calls() == before);
  CHECK(a.suffix.size() == cfg.depth);
  REQUIRE(a.loss_trajectory.size() == cfg.depth + 1);
  for (std::size_t t = 1; t < a.loss_trajectory.size(); ++t)
    CHECK(a.loss_trajectory[t] <= a.loss_trajectory[t - 1]);
  CHECK(a.snapshots.empty());
  const auto b = run_beast(inst, cfg);
  CHECK(a.suffix == b.suffix);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.final_loss == doctest::Approx(target_loss(*model, inst.prompt, a.suffix, inst.target, {})).epsilon(1e-12));
}

TEST_CASE("attacks reject suffixes that overflow the context") {
  auto model = toy_model(32, 6);
  RngStream rng(36, 0);
  auto inst = toy_instance(model, rng, 0);
  GcgConfig g;
  g.suffix_len = 30;
  CHECK_THROWS_AS(run_gcg(inst, g), InvalidInput);
  BeastConfig b;
  b.depth = 30;
  CHECK_THROWS_AS(run_beast(inst, b), InvalidInput);
}

TEST_CASE("candidate ranking follows the linearized loss change") {
  auto model = toy_model(12, 7);
  std::vector<double> g(16, 0.0);
  g[0] = 1.0;
  const TokenId current = 6;
  auto ranked = rank_candidates(*model, g, current, 20);
  CHECK(ranked.size() == 7);
  for (std::size_t i = 1; i < ranked.size(); ++i)
    CHECK(model->token_embedding(ranked[i - 1], 0) <= model->token_embedding(ranked[i], 0));
  for (TokenId t : ranked) {
    CHECK(t != current);
    CHECK_FALSE(tokens::is_special(t));
  }
}

TEST_CASE("instances per configuration") {
  ModelRegistry reg;
  auto model = toy_model(32, 8);
  auto sae = std::make_shared<SaeParams>(SaeParams::zeros(SaeConfig::standard(16, SparsityMode::l1(0.1), 0)));
  reg.add({"m0", model, sae, 1});
  std::vector<PromptCase> prompts;
  for (int i = 0; i < 218; ++i) prompts.push_back({"h" + std::to_string(i), {tokens::bos, 5, 6}, {7, 8}});

  auto plain = make_instances(prompts, Configuration::prompt, reg, "m0");
  CHECK(plain.size() == 218);
  for (const auto& i : plain) CHECK(i.hooks.empty());
  auto base = make_instances(prompts, Configuration::base, reg, "m0");
  for (const auto& i : base) CHECK(i.hooks.empty());
  auto routed = make_instances(prompts, Configuration::sae, reg, "m0");
  for (const auto& i : routed) {
    CHECK(i.hooks.size() == 1);
    CHECK(i.hooks[0].layer == 1);
  }
  CHECK_THROWS_AS(make_instances(prompts, Configuration::base, reg, "nope"), InvalidInput);
  CHECK_THROWS_AS(reg.add({"m0", model, nullptr, 0}), InvalidInput);
}
