// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace saelab {

std::string to_string(Configuration c) {
  switch (c) {
    case Configuration::prompt: return "PROMPT";
    case Configuration::base: return "BASE";
    case Configuration::sae: return "SAE";
  }
  return "?";
}

Configuration parse_configuration(const std::string& text) {
  if (text == "PROMPT") return Configuration::prompt;
  if (text == "BASE") return Configuration::base;
  if (text == "SAE") return Configuration::sae;
  throw InvalidInput("unknown configuration '" + text + "'");
}

GcgConfig GcgConfig::desk() {
  GcgConfig c;
  c.steps = 100;
  c.suffix_len = 8;
  c.topk = 32;
  c.batch = 16;
  return c;
}

void GcgConfig::validate(const ModelConfig& model) const {
  require(steps >= 1 && suffix_len >= 1 && topk >= 1 && batch >= 1, "gcg config: counts must be positive");
  require(topk <= model.vocab_size, "gcg config: topk exceeds the vocabulary");
  require(!tokens::is_special(filler) && filler >= 0 && static_cast<std::size_t>(filler) < model.vocab_size,
          "gcg config: filler must be an ordinary token inside the vocabulary");
}

BeastConfig BeastConfig::desk() {
  BeastConfig c;
  c.k1 = 4;
  c.k2 = 4;
  c.depth = 8;
  return c;
}

void BeastConfig::validate() const {
  require(k1 >= 1 && k2 >= 1 && depth >= 1, "beast config: k1, k2 and depth must be positive");
}

namespace {

void check_instance(const AttackInstance& inst, std::size_t suffix_len) {
  require(inst.model != nullptr, "attack instance " + inst.id + " has no model");
  require(!inst.prompt.empty(), "attack instance " + inst.id + " has an empty prompt");
  require(!inst.target.empty(), "attack instance " + inst.id + " has an empty target");
  require(inst.prompt.size() + suffix_len + inst.target.size() <= inst.model->config.context_len,
          "attack instance " + inst.id + ": prompt + suffix + target exceeds the context");
}

SuffixResult blank_result(const AttackInstance& inst, const char* attack, std::uint64_t seed) {
  SuffixResult r;
  r.attack = attack;
  r.instance_id = inst.id;
  r.model_id = inst.model_id;
  r.configuration = inst.configuration;
  r.seed = seed;
  r.stream = inst.stream;
  return r;
}

}  // namespace

std::vector<TokenId> rank_candidates(const TransformerParams& params,
                                     std::span<const double> gradient_row, TokenId current,
                                     std::size_t topk) {
  const Matrix& emb = params.token_embedding;
  const double base = dot(gradient_row, emb.row(static_cast<std::size_t>(current)));
  std::vector<std::pair<double, TokenId>> scored;
  for (std::size_t v = tokens::num_special; v < params.config.vocab_size; ++v) {
    const auto id = static_cast<TokenId>(v);
    if (id == current) continue;
    scored.emplace_back(dot(gradient_row, emb.row(v)) - base, id);
  }
  const std::size_t keep = std::min(topk, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end());
  std::vector<TokenId> out(keep);
  for (std::size_t i = 0; i < keep; ++i) out[i] = scored[i].second;
  return out;
}

SuffixResult run_gcg(const AttackInstance& inst, const GcgConfig& config, std::size_t snapshot_every) {
  check_instance(inst, config.suffix_len);
  config.validate(inst.model->config);
  const TransformerParams& params = *inst.model;
  SuffixResult result = blank_result(inst, "gcg", config.seed);
  TokenSequence suffix(config.suffix_len, config.filler);
  SuffixScorer scorer(params, inst.prompt, inst.target, inst.hooks);
  scorer.set_base(suffix);
  double incumbent = scorer.loss(suffix);
  result.loss_trajectory.push_back(incumbent);
  const RngStream rng(config.seed, inst.stream);

  struct Pair {
    std::size_t position;
    TokenId token;
  };
  std::vector<Pair> pairs;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Matrix grad = suffix_gradient(params, inst.prompt, suffix, inst.target, inst.hooks);
    if (snapshot_every > 0 && step % snapshot_every == 0) result.snapshots.push_back({step, grad});

    pairs.clear();
    for (std::size_t pos = 0; pos < config.suffix_len; ++pos)
      for (TokenId t : rank_candidates(params, grad.row(pos), suffix[pos], config.topk))
        pairs.push_back({pos, t});
    // Sample `batch` distinct pairs by a partial shuffle.
    RngStream draw = rng.substream(step);
    const std::size_t take = std::min(config.batch, pairs.size());
    if (take < pairs.size())
      for (std::size_t i = 0; i < take; ++i) std::swap(pairs[i], pairs[i + draw.index(pairs.size() - i)]);
    pairs.resize(take);

    double best = std::numeric_limits<double>::infinity();
    Pair chosen{0, 0};
    TokenSequence trial = suffix;
    for (const Pair& p : pairs) {
      trial[p.position] = p.token;
      const double loss = scorer.loss(trial);
      trial[p.position] = suffix[p.position];
      const bool better = loss < best || (loss == best && (p.position < chosen.position ||
                                                          (p.position == chosen.position && p.token < chosen.token)));
      if (better) {
        best = loss;
        chosen = p;
      }
    }
    if (best < incumbent) {
      incumbent = best;
      suffix[chosen.position] = chosen.token;
      scorer.set_base(suffix);
    }
    result.loss_trajectory.push_back(incumbent);
  }
  result.suffix = suffix;
  result.final_loss = incumbent;
  return result;
}

SuffixResult run_beast(const AttackInstance& inst, const BeastConfig& config) {
  config.validate();
  check_instance(inst, config.depth);
  const TransformerParams& params = *inst.model;
  SuffixResult result = blank_result(inst, "beast", config.seed);
  SuffixScorer scorer(params, inst.prompt, inst.target, inst.hooks);
  const RngStream rng(config.seed, inst.stream);
  double best_so_far = scorer.loss(TokenSequence{});
  result.loss_trajectory.push_back(best_so_far);

  struct Beam {
    TokenSequence suffix;
    double loss;
  };
  std::vector<Beam> beams{{TokenSequence{}, best_so_far}};
  const std::size_t vocab = params.config.vocab_size;
  for (std::size_t depth = 0; depth < config.depth; ++depth) {
    std::vector<Beam> extended;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      scorer.set_base(beams[b].suffix);
      const auto logits = scorer.next_token_logits(beams[b].suffix);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t v = tokens::num_special; v < vocab; ++v) mx = std::max(mx, logits[v]);
      std::vector<double> weight(vocab, 0.0);
      for (std::size_t v = tokens::num_special; v < vocab; ++v) weight[v] = std::exp(logits[v] - mx);

      RngStream draw = rng.substream(depth * 1000003ULL + b);
      const std::size_t available = vocab - tokens::num_special;
      const std::size_t take = std::min(config.k2, available);
      TokenSequence next = beams[b].suffix;
      next.push_back(0);
      for (std::size_t s = 0; s < take; ++s) {
        std::size_t pick = vocab;
        if (take == available) {
          // Every token is taken; no sampling needed.
          pick = tokens::num_special + s;
        } else {
          const double mass = std::accumulate(weight.begin(), weight.end(), 0.0);
          double u = draw.uniform() * mass;
          for (std::size_t v = tokens::num_special; v < vocab; ++v) {
            if (weight[v] == 0.0) continue;
            pick = v;
            if (u < weight[v]) break;
            u -= weight[v];
          }
        }
        weight[pick] = 0.0;
        next.back() = static_cast<TokenId>(pick);
        extended.push_back({next, scorer.loss(next)});
      }
    }
    std::sort(extended.begin(), extended.end(), [](const Beam& a, const Beam& b) {
      return a.loss < b.loss || (a.loss == b.loss && a.suffix < b.suffix);
    });
    if (extended.size() > config.k1) extended.resize(config.k1);
    beams = std::move(extended);
    best_so_far = std::min(best_so_far, beams.front().loss);
    result.loss_trajectory.push_back(best_so_far);
  }
  result.suffix = beams.front().suffix;
  result.final_loss = beams.front().loss;
  return result;
}

void ModelRegistry::add(RegistryEntry entry) {
  require(!entry.id.empty(), "registry: model id must be nonempty");
  require(entry.model != nullptr, "registry: model " + entry.id + " has no parameters");
  require(entries_.count(entry.id) == 0, "registry: duplicate model id " + entry.id);
  if (entry.sae) {
    require(entry.sae->config.d_model == entry.model->config.d_model,
            "registry: SAE width does not match model " + entry.id);
    require(entry.sae_layer <= entry.model->config.n_layers, "registry: SAE layer out of range for " + entry.id);
  }
  entries_.emplace(entry.id, std::move(entry));
}

const RegistryEntry& ModelRegistry::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw InvalidInput("unknown model id '" + id + "'");
  return it->second;
}

std::vector<std::string> ModelRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

HookList ModelRegistry::hooks_for(const std::string& id, Configuration c) const {
  const RegistryEntry& e = at(id);
  if (c != Configuration::sae) return {};
  require(e.sae != nullptr, "model " + id + " has no SAE for the SAE configuration");
  return {RoutingHook{e.sae_layer, std::make_shared<SaeRouting>(e.sae)}};
}

std::vector<AttackInstance> make_instances(std::span<const PromptCase> prompts, Configuration configuration,
                                           const ModelRegistry& registry, const std::string& model_id) {
  const RegistryEntry& entry = registry.at(model_id);
  const HookList hooks = registry.hooks_for(model_id, configuration);
  std::vector<AttackInstance> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    AttackInstance inst;
    inst.id = prompts[i].id;
    inst.model_id = model_id;
    inst.configuration = configuration;
    inst.prompt = prompts[i].prompt;
    inst.target = prompts[i].target;
    inst.model = entry.model;
    inst.hooks = hooks;
    inst.stream = i;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace saelab
