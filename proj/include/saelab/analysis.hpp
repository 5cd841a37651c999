// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_ANALYSIS_HPP
#define SAELAB_ANALYSIS_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saelab/lm.hpp"
#include "saelab/sae.hpp"

namespace saelab {

struct FeatureSet {
  std::vector<std::size_t> indices;  // ascending
  std::size_t k = 0;
  std::string provenance;
};

/// Residual rows at `layer` for the suffix positions of prompt + suffix,
/// without any routing hooks.
Matrix suffix_activations(const TransformerParams& model, std::size_t layer, std::span<const TokenId> prompt,
                          std::span<const TokenId> suffix);

/// The k largest strictly positive position-mean SAE codes; ties to the
/// lower index.
FeatureSet top_k_features(const SaeParams& sae, const Matrix& activations, std::size_t k,
                          std::string provenance = {});

double jaccard(const FeatureSet& a, const FeatureSet& b);

/// Uniform non-special tokens, the feature baseline for a suffix length.
TokenSequence random_suffix(RngStream& rng, std::size_t length, std::size_t vocab_size);

struct PairStats {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single pair
};

struct OverlapStudy {
  PairStats within;
  std::optional<PairStats> across;  // absent with a single non-random group
  PairStats vs_random;
};

/// Unordered pairwise Jaccard inside each group, across distinct groups and
/// against the group named `random_label`.
OverlapStudy overlap_study(const std::map<std::string, std::vector<FeatureSet>>& groups,
                           const std::string& random_label = "random");

struct SnapshotSpectrum {
  double r_eff = 0.0;
  double spectral_gap = 0.0;
  bool gap_floored = false;  // numerically rank one; sigma2 replaced by 1e-12 sigma1
  double kappa = 0.0;
  double var_sigma1 = 0.0;
};

SnapshotSpectrum snapshot_spectrum(const Matrix& g);

struct SpectralMetrics {
  std::vector<SnapshotSpectrum> snapshots;
  std::vector<double> step_cosines;
  double r_eff = 0.0, r_eff_std = 0.0;
  double spectral_gap = 0.0, spectral_gap_std = 0.0;
  double kappa = 0.0, kappa_std = 0.0;
  double var_sigma1 = 0.0, var_sigma1_std = 0.0;
  double mean_cosine = 0.0;  // 0 with fewer than two snapshots
  double mean_loss = 0.0;
  std::size_t floored_gaps = 0;
};

SpectralMetrics spectral_trace(std::span<const Matrix> snapshots, std::span<const double> losses);

struct MetricComparison {
  std::string metric;
  double base_mean = 0.0, base_std = 0.0;
  double sae_mean = 0.0, sae_std = 0.0;
  double delta_percent = 0.0;  // NaN when the base mean is zero
  double p_value = 1.0;        // two-sided Wilcoxon signed-rank on sae - base
  bool degenerate = false;     // too few nonzero differences; p reported as 1
};

/// Rows for cos, L, r_eff, sigma1/sigma2, kappa and Var(sigma1), in that order.
/// Runs are paired by position; at least 5 pairs.
std::vector<MetricComparison> paired_comparison(std::span<const SpectralMetrics> base,
                                                std::span<const SpectralMetrics> sae);

}  // namespace saelab

#endif  // SAELAB_ANALYSIS_HPP
