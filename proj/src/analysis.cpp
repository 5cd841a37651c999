// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "saelab/stats.hpp"

namespace saelab {

Matrix suffix_activations(const TransformerParams& model, std::size_t layer, std::span<const TokenId> prompt,
                          std::span<const TokenId> suffix) {
  require(!suffix.empty(), "suffix activations of an empty suffix");
  require(layer <= model.config.n_layers, "suffix activations: layer out of range");
  TokenSequence tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), suffix.begin(), suffix.end());
  const ForwardTrace trace = forward(model, tokens, {}, {layer});
  const Matrix& h = trace.residuals.at(layer);
  Matrix out(suffix.size(), h.cols());
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    const auto row = h.row(prompt.size() + i);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

FeatureSet top_k_features(const SaeParams& sae, const Matrix& activations, std::size_t k, std::string provenance) {
  require(k >= 1, "top_k_features: k must be positive");
  require(activations.rows() >= 1, "top_k_features: no positions");
  require(activations.cols() == sae.config.d_model, "top_k_features: activation width does not match the SAE");
  std::vector<double> pooled(sae.config.d_hidden, 0.0);
  for (std::size_t p = 0; p < activations.rows(); ++p) {
    const auto z = encode(sae, activations.row(p));
    for (std::size_t j = 0; j < z.size(); ++j) pooled[j] += z[j];
  }
  for (double& v : pooled) v /= static_cast<double>(activations.rows());

  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < pooled.size(); ++j)
    if (pooled[j] > 0.0) order.push_back(j);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] > pooled[b]; });
  if (order.size() > k) order.resize(k);
  std::sort(order.begin(), order.end());
  return {std::move(order), k, std::move(provenance)};
}

double jaccard(const FeatureSet& a, const FeatureSet& b) {
  if (a.indices.empty() && b.indices.empty()) throw DegenerateInput("jaccard of two empty feature sets");
  std::vector<std::size_t> common;
  std::set_intersection(a.indices.begin(), a.indices.end(), b.indices.begin(), b.indices.end(),
                        std::back_inserter(common));
  const std::size_t uni = a.indices.size() + b.indices.size() - common.size();
  return static_cast<double>(common.size()) / static_cast<double>(uni);
}

TokenSequence random_suffix(RngStream& rng, std::size_t length, std::size_t vocab_size) {
  require(vocab_size > static_cast<std::size_t>(tokens::num_special), "random suffix: vocabulary has no text tokens");
  TokenSequence out(length);
  for (auto& t : out) t = static_cast<TokenId>(tokens::num_special + rng.index(vocab_size - tokens::num_special));
  return out;
}

namespace {

PairStats summarize(std::vector<double> values) {
  PairStats s;
  s.values = std::move(values);
  s.mean = mean(s.values);
  s.std = sample_std(s.values);
  return s;
}

}  // namespace

OverlapStudy overlap_study(const std::map<std::string, std::vector<FeatureSet>>& groups,
                           const std::string& random_label) {
  auto random_it = groups.find(random_label);
  require(random_it != groups.end(), "overlap study needs a '" + random_label + "' group");
  std::vector<const std::vector<FeatureSet>*> real;
  for (const auto& [label, members] : groups) {
    require(members.size() >= 2, "overlap study: group '" + label + "' needs at least two members");
    if (label != random_label) real.push_back(&members);
  }
  require(!real.empty(), "overlap study needs at least one non-random group");

  std::vector<double> within, across, vs_random;
  for (std::size_t g = 0; g < real.size(); ++g) {
    const auto& a = *real[g];
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) within.push_back(jaccard(a[i], a[j]));
    for (std::size_t h = g + 1; h < real.size(); ++h)
      for (const auto& x : a)
        for (const auto& y : *real[h]) across.push_back(jaccard(x, y));
    for (const auto& x : a)
      for (const auto& r : random_it->second) vs_random.push_back(jaccard(x, r));
  }
  OverlapStudy out;
  out.within = summarize(std::move(within));
  if (!across.empty()) out.across = summarize(std::move(across));
  out.vs_random = summarize(std::move(vs_random));
  return out;
}

SnapshotSpectrum snapshot_spectrum(const Matrix& g) {
  const auto sigma = svd(g).singular_values;
  const double s1 = sigma.front();
  if (!(s1 > 0.0)) throw DegenerateInput("spectrum of a zero gradient matrix");
  const double floor = 1e-12 * s1;

  SnapshotSpectrum s;
  double total = 0.0, squares = 0.0, smallest = s1;
  for (double v : sigma) {
    if (v <= floor) continue;
    total += v;
    squares += v * v;
    smallest = v;
  }
  double entropy = 0.0;
  for (double v : sigma) {
    if (v <= floor) continue;
    const double p = v / total;
    entropy -= p * std::log(p);
  }
  s.r_eff = std::exp(entropy);
  const double s2 = sigma.size() > 1 ? sigma[1] : 0.0;
  s.gap_floored = s2 <= floor;
  s.spectral_gap = s1 / (s.gap_floored ? floor : s2);
  s.kappa = s1 / smallest;
  s.var_sigma1 = s1 * s1 / squares;
  return s;
}

SpectralMetrics spectral_trace(std::span<const Matrix> snapshots, std::span<const double> losses) {
  require(!snapshots.empty(), "spectral trace of no snapshots");
  SpectralMetrics m;
  std::vector<double> r, gap, kappa, var;
  for (const auto& g : snapshots) {
    const auto s = snapshot_spectrum(g);
    m.snapshots.push_back(s);
    r.push_back(s.r_eff);
    gap.push_back(s.spectral_gap);
    kappa.push_back(s.kappa);
    var.push_back(s.var_sigma1);
    m.floored_gaps += s.gap_floored ? 1 : 0;
  }
  for (std::size_t t = 1; t < snapshots.size(); ++t)
    m.step_cosines.push_back(cosine_flat(snapshots[t], snapshots[t - 1]));
  m.r_eff = mean(r);
  m.r_eff_std = sample_std(r);
  m.spectral_gap = mean(gap);
  m.spectral_gap_std = sample_std(gap);
  m.kappa = mean(kappa);
  m.kappa_std = sample_std(kappa);
  m.var_sigma1 = mean(var);
  m.var_sigma1_std = sample_std(var);
  if (!m.step_cosines.empty()) m.mean_cosine = mean(m.step_cosines);
  if (!losses.empty()) m.mean_loss = mean(losses);
  return m;
}

std::vector<MetricComparison> paired_comparison(std::span<const SpectralMetrics> base,
                                                std::span<const SpectralMetrics> sae) {
  require(base.size() == sae.size(), "paired comparison: run lists differ in length");
  require(base.size() >= 5, "paired comparison needs at least 5 pairs");
  using Getter = double (*)(const SpectralMetrics&);
  const std::vector<std::pair<const char*, Getter>> metrics{
      {"cos", [](const SpectralMetrics& m) { return m.mean_cosine; }},
      {"L", [](const SpectralMetrics& m) { return m.mean_loss; }},
      {"r_eff", [](const SpectralMetrics& m) { return m.r_eff; }},
      {"sigma1/sigma2", [](const SpectralMetrics& m) { return m.spectral_gap; }},
      {"kappa", [](const SpectralMetrics& m) { return m.kappa; }},
      {"Var(sigma1)", [](const SpectralMetrics& m) { return m.var_sigma1; }},
  };
  std::vector<MetricComparison> out;
  for (const auto& [name, get] : metrics) {
    std::vector<double> b, s, d;
    for (std::size_t i = 0; i < base.size(); ++i) {
      b.push_back(get(base[i]));
      s.push_back(get(sae[i]));
      d.push_back(s.back() - b.back());
    }
    MetricComparison c;
    c.metric = name;
    c.base_mean = mean(b);
    c.base_std = sample_std(b);
    c.sae_mean = mean(s);
    c.sae_std = sample_std(s);
    c.delta_percent = c.base_mean == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                         : 100.0 * (c.sae_mean - c.base_mean) / std::abs(c.base_mean);
    const auto nonzero = std::count_if(d.begin(), d.end(), [](double x) { return x != 0.0; });
    if (nonzero < 5) {
      c.degenerate = true;
      c.p_value = 1.0;
    } else {
      c.p_value = wilcoxon_signed_rank(d).p_value;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace saelab
