// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Adversarial suffix search against a (possibly SAE-routed) model.
//
// Both optimizers minimize target_loss(prompt, suffix, target) under the
// instance's hooks and are pure functions of (instance, config).

#ifndef SAELAB_ATTACKS_HPP
#define SAELAB_ATTACKS_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "saelab/lm.hpp"
#include "saelab/sae.hpp"

namespace saelab {

enum class Configuration { prompt, base, sae };

std::string to_string(Configuration c);
Configuration parse_configuration(const std::string& text);

struct AttackInstance {
  std::string id;
  std::string model_id;
  Configuration configuration = Configuration::base;
  TokenSequence prompt;
  TokenSequence target;
  std::shared_ptr<const TransformerParams> model;
  HookList hooks;
  std::uint64_t stream = 0;  // RNG stream for this instance
};

struct GcgConfig {
  std::size_t steps = 500;
  std::size_t suffix_len = 20;
  std::size_t topk = 64;
  std::size_t batch = 128;
  TokenId filler = '!';
  std::uint64_t seed = 0;

  /// 100 steps over an 8-token suffix with a reduced candidate batch.
  static GcgConfig desk();
  void validate(const ModelConfig& model) const;
};

struct BeastConfig {
  std::size_t k1 = 15;
  std::size_t k2 = 15;
  std::size_t depth = 20;
  std::uint64_t seed = 0;

  static BeastConfig desk();
  void validate() const;
};

struct GradientSnapshot {
  std::size_t step = 0;
  Matrix gradient;  // suffix_len x d_model
};

struct SuffixResult {
  std::string attack;  // "gcg" | "beast" | "none"
  std::string instance_id;
  std::string model_id;
  Configuration configuration = Configuration::base;
  TokenSequence suffix;
  double final_loss = 0.0;
  /// Entry 0 is the loss before any step; entry t is the best loss seen after t steps.
  std::vector<double> loss_trajectory;
  std::vector<GradientSnapshot> snapshots;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// snapshot_every = 0 disables gradient snapshots; otherwise the gradient of
/// every step divisible by it is recorded.
SuffixResult run_gcg(const AttackInstance& instance, const GcgConfig& config,
                     std::size_t snapshot_every = 10);

SuffixResult run_beast(const AttackInstance& instance, const BeastConfig& config);

/// Candidate replacements for one suffix position, most promising first:
/// ascending gradient_row . (E[v] - E[current]), ties to the lower id.
std::vector<TokenId> rank_candidates(const TransformerParams& params,
                                     std::span<const double> gradient_row, TokenId current,
                                     std::size_t topk);

struct RegistryEntry {
  std::string id;
  std::shared_ptr<const TransformerParams> model;
  std::shared_ptr<const SaeParams> sae;  // may be null for models without a routed variant
  std::size_t sae_layer = 0;
};

class ModelRegistry {
 public:
  void add(RegistryEntry entry);
  const RegistryEntry& at(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::vector<std::string> ids() const;
  std::size_t size() const noexcept { return entries_.size(); }
  /// Hooks evaluating `id` under configuration `c` (a routing hook for SAE).
  HookList hooks_for(const std::string& id, Configuration c) const;

 private:
  std::map<std::string, RegistryEntry> entries_;
};

struct PromptCase {
  std::string id;
  TokenSequence prompt;
  TokenSequence target;
};

/// PROMPT instances are evaluated as-is (no suffix search); BASE binds the
/// plain model and SAE adds exactly one routing hook.
std::vector<AttackInstance> make_instances(std::span<const PromptCase> prompts,
                                           Configuration configuration,
                                           const ModelRegistry& registry,
                                           const std::string& model_id);

}  // namespace saelab

#endif  // SAELAB_ATTACKS_HPP
