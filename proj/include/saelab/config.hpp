// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_CONFIG_HPP
#define SAELAB_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saelab/attacks.hpp"
#include "saelab/corpus.hpp"
#include "saelab/lm.hpp"
#include "saelab/sae.hpp"

namespace saelab {

struct ModelSpec {
  std::string id;
  ModelConfig model;
  std::size_t sae_layer = 0;
};

struct SaeSpec {
  std::size_t expansion = 16;
  SaeTrainOptions train{20, 1e-2, 64};
  std::size_t max_rows = 8192;
  std::vector<double> lambda_grid{0.1, 0.3, 1.0, 3.0, 10.0};
  /// Largest tolerated drop in held-out harmful refusal rate when choosing
  /// each model's SAE from the grid.
  double selection_tolerance = 0.1;
};

struct AttackSpec {
  bool gcg = true;
  GcgConfig gcg_config = GcgConfig::desk();
  std::size_t snapshot_every = 10;
  bool beast = true;
  BeastConfig beast_config = BeastConfig::desk();

  std::vector<std::string> enabled() const;
};

struct EvaluationSpec {
  std::string detector = "refusal-heuristic";
  std::size_t max_new_tokens = 64;
};

struct AblationSpec {
  bool enabled = true;
  std::string model = "m32";
  std::size_t prompts = 10;
  std::vector<std::size_t> layers{1, 2, 3};
};

struct AnalysisSpec {
  std::size_t random_baselines = 20;
  std::size_t feature_k = 0;  // 0: round the SAE's mean L0
  std::size_t bootstrap_resamples = 10000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  TrainOptions lm{40, 0.3, 16, 1.0};
  std::vector<ModelSpec> models;
  SaeSpec sae;
  AttackSpec attacks;
  EvaluationSpec evaluation;
  AblationSpec ablation;
  AnalysisSpec analysis;

  /// Two models (d_model 32 and 64), 50 attack prompts, GCG 100 steps.
  static ExperimentConfig desk();
  /// Six models, 218 attack prompts, GCG 500 x 20, BEAST 15/15/20.
  static ExperimentConfig paper_scale();

  void validate() const;
  const ModelSpec& model(const std::string& id) const;
  /// Canonical YAML; equal configurations serialize identically.
  std::string to_yaml() const;
  /// 16 hex digits of FNV-1a over to_yaml().
  std::string hash() const;
};

/// Overlays the YAML document on `base`. Unknown keys and type errors throw
/// InvalidInput naming the offending path, e.g. "attacks.gcg.steps".
ExperimentConfig parse_config(const std::string& yaml, const ExperimentConfig& base,
                              const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& file, const ExperimentConfig& base);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace saelab

#endif  // SAELAB_CONFIG_HPP
