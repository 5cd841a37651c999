// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace saelab {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    require(std::isfinite(v), std::string(what) + ": values must be finite");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

std::vector<double> sorted_copy(std::span<const double> values) {
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  return s;
}

// Sum over tie groups of t^3 - t.
double tie_term(std::span<const double> values) {
  auto s = sorted_copy(values);
  double total = 0.0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const double t = static_cast<double>(j - i);
    total += t * t * t - t;
    i = j;
  }
  return total;
}

// Null distribution of a sum of doubled ranks. `choose` fixes the subset size
// (rank-sum test); a negative value allows any subset (signed-rank test).
// Returns counts indexed by the doubled sum.
std::vector<double> subset_sum_counts(std::span<const std::int64_t> items, int choose) {
  const std::int64_t total = std::accumulate(items.begin(), items.end(), std::int64_t{0});
  const std::size_t width = static_cast<std::size_t>(total) + 1;
  if (choose < 0) {
    std::vector<double> dp(width, 0.0);
    dp[0] = 1.0;
    for (std::int64_t r : items)
      for (std::size_t s = width; s-- > static_cast<std::size_t>(r);) dp[s] += dp[s - static_cast<std::size_t>(r)];
    return dp;
  }
  const std::size_t k = static_cast<std::size_t>(choose);
  std::vector<std::vector<double>> dp(k + 1, std::vector<double>(width, 0.0));
  dp[0][0] = 1.0;
  for (std::int64_t r : items) {
    const auto ru = static_cast<std::size_t>(r);
    for (std::size_t j = k; j >= 1; --j)
      for (std::size_t s = width; s-- > ru;) dp[j][s] += dp[j - 1][s - ru];
  }
  return dp[k];
}

// P-value from a discrete null over doubled statistics with center `twice_mean`
// (in the same doubled units, scaled by 2 again to stay integral).
double discrete_p(const std::vector<double>& counts, std::int64_t observed, std::int64_t twice_center,
                  Alternative alt) {
  double total = 0.0, tail = 0.0;
  const std::int64_t obs_dist = std::llabs(2 * observed - twice_center);
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (counts[s] == 0.0) continue;
    const auto v = static_cast<std::int64_t>(s);
    total += counts[s];
    bool hit = false;
    switch (alt) {
      case Alternative::two_sided: hit = std::llabs(2 * v - twice_center) >= obs_dist; break;
      case Alternative::greater: hit = v >= observed; break;
      case Alternative::less: hit = v <= observed; break;
    }
    if (hit) tail += counts[s];
  }
  return std::min(1.0, tail / total);
}

double normal_p(double stat, double center, double sd, Alternative alt) {
  if (sd <= 0.0) return 1.0;
  switch (alt) {
    case Alternative::two_sided:
      return std::min(1.0, 2.0 * (1.0 - normal_cdf((std::abs(stat - center) - 0.5) / sd)));
    case Alternative::greater:
      return 1.0 - normal_cdf((stat - center - 0.5) / sd);
    case Alternative::less:
      return normal_cdf((stat - center + 0.5) / sd);
  }
  return 1.0;
}

}  // namespace

double mean(std::span<const double> values) {
  require(!values.empty(), "mean: empty sample");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  const double m = mean(values);
  if (values.size() < 2) return 0.0;
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double median(std::span<const double> values) {
  require(!values.empty(), "median: empty sample");
  return quantile_sorted(sorted_copy(values), 0.5);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), "quantile: empty sample");
  require(q >= 0.0 && q <= 1.0, "quantile: probability outside [0, 1]");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

namespace {

TestResult mann_whitney_impl(std::span<const double> x, std::span<const double> y, Alternative alt,
                             bool allow_exact) {
  require(!x.empty() && !y.empty(), "mann_whitney_u: both samples must be nonempty");
  require_finite(x, "mann_whitney_u");
  require_finite(y, "mann_whitney_u");
  const std::size_t n = x.size(), m = y.size();
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto ranks = midranks(pooled);
  std::vector<std::int64_t> doubled(ranks.size());
  std::int64_t rx2 = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<std::int64_t>(std::llround(2.0 * ranks[i]));
    if (i < n) rx2 += doubled[i];
  }
  const auto ni = static_cast<std::int64_t>(n), mi = static_cast<std::int64_t>(m);
  // 2U = 2R_x - n(n+1)
  const std::int64_t u2 = rx2 - ni * (ni + 1);

  TestResult out;
  out.statistic = 0.5 * static_cast<double>(u2);
  out.n = n;
  out.m = m;
  if (allow_exact && std::max(n, m) <= 10) {
    out.method = TestMethod::exact;
    const auto counts = subset_sum_counts(doubled, static_cast<int>(n));
    // Work on the doubled rank sum; its null center is n(N+1).
    out.p_value = discrete_p(counts, rx2, 2 * ni * (ni + mi + 1), alt);
  } else {
    out.method = TestMethod::approximate;
    const double nn = static_cast<double>(n), mm = static_cast<double>(m), total = nn + mm;
    const double var = nn * mm / 12.0 * ((total + 1.0) - tie_term(pooled) / (total * (total - 1.0)));
    out.p_value = normal_p(out.statistic, nn * mm / 2.0, std::sqrt(std::max(var, 0.0)), alt);
  }
  return out;
}

TestResult wilcoxon_impl(std::span<const double> diffs, Alternative alt, bool allow_exact) {
  require(!diffs.empty(), "wilcoxon_signed_rank: no differences");
  require_finite(diffs, "wilcoxon_signed_rank");
  std::vector<double> nonzero;
  for (double d : diffs)
    if (d != 0.0) nonzero.push_back(d);
  if (nonzero.empty()) throw DegenerateInput("wilcoxon_signed_rank: all differences are zero");
  require(nonzero.size() >= 5, "wilcoxon_signed_rank: need at least 5 nonzero differences");
  const std::size_t n = nonzero.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(nonzero[i]);
  const auto ranks = midranks(mags);
  std::vector<std::int64_t> doubled(n);
  std::int64_t w2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = static_cast<std::int64_t>(std::llround(2.0 * ranks[i]));
    total2 += doubled[i];
    if (nonzero[i] > 0.0) w2 += doubled[i];
  }
  TestResult out;
  out.statistic = 0.5 * static_cast<double>(w2);
  out.n = n;
  if (allow_exact && n <= 15) {
    out.method = TestMethod::exact;
    out.p_value = discrete_p(subset_sum_counts(doubled, -1), w2, total2, alt);
  } else {
    out.method = TestMethod::approximate;
    const double nn = static_cast<double>(n);
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(mags) / 48.0;
    out.p_value = normal_p(out.statistic, nn * (nn + 1.0) / 4.0, std::sqrt(std::max(var, 0.0)), alt);
  }
  return out;
}

}  // namespace

TestResult mann_whitney_u(std::span<const double> x, std::span<const double> y, Alternative alt) {
  return mann_whitney_impl(x, y, alt, true);
}

TestResult mann_whitney_u_normal(std::span<const double> x, std::span<const double> y,
                                 Alternative alt) {
  return mann_whitney_impl(x, y, alt, false);
}

TestResult wilcoxon_signed_rank(std::span<const double> diffs, Alternative alt) {
  return wilcoxon_impl(diffs, alt, true);
}

TestResult wilcoxon_signed_rank_normal(std::span<const double> diffs, Alternative alt) {
  return wilcoxon_impl(diffs, alt, false);
}

IntervalEstimate bootstrap_ci_median(std::span<const double> values, const RngStream& rng,
                                     std::size_t resamples, double level) {
  require(values.size() >= 2, "bootstrap_ci_median: need at least 2 values");
  require(resamples >= 1, "bootstrap_ci_median: need at least one resample");
  require(level > 0.0 && level < 1.0, "bootstrap_ci_median: level must lie in (0, 1)");
  require_finite(values, "bootstrap_ci_median");
  const std::size_t n = values.size();
  std::vector<double> medians(resamples), draw(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    RngStream sub = rng.substream(b);
    for (double& v : draw) v = values[sub.index(n)];
    std::sort(draw.begin(), draw.end());
    medians[b] = quantile_sorted(draw, 0.5);
  }
  std::sort(medians.begin(), medians.end());
  const double tail = 0.5 * (1.0 - level);
  return {median(values), quantile_sorted(medians, tail), quantile_sorted(medians, 1.0 - tail), level,
          "percentile bootstrap"};
}

double student_t_quantile(double p, double df) {
  require(p > 0.0 && p < 1.0, "student_t_quantile: probability outside (0, 1)");
  require(df > 0.0, "student_t_quantile: degrees of freedom must be positive");
  return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

IntervalEstimate t_ci_mean(std::span<const double> values, double level) {
  require(values.size() >= 2, "t_ci_mean: need at least 2 values");
  require(level > 0.0 && level < 1.0, "t_ci_mean: level must lie in (0, 1)");
  require_finite(values, "t_ci_mean");
  const double m = mean(values);
  const double n = static_cast<double>(values.size());
  const double half = student_t_quantile(0.5 + 0.5 * level, n - 1.0) * sample_std(values) / std::sqrt(n);
  return {m, m - half, m + half, level, "student t"};
}

std::size_t sign_interval_index(std::size_t n, double level) {
  require(n >= 1, "sign_interval_index: empty sample");
  const boost::math::binomial_distribution<double> b(static_cast<double>(n), 0.5);
  std::size_t best = 0;
  for (std::size_t k = 1; 2 * k <= n + 1; ++k) {
    const double coverage = k == 1 ? 1.0 - 2.0 * std::pow(0.5, static_cast<double>(n))
                                   : 1.0 - 2.0 * boost::math::cdf(b, static_cast<double>(k - 1));
    if (coverage >= level) best = k;
    else break;
  }
  return best;
}

IntervalEstimate median_ci_hs(std::span<const double> values, double level) {
  require(values.size() >= 5, "median_ci_hs: need at least 5 values");
  require(level > 0.0 && level < 1.0, "median_ci_hs: level must lie in (0, 1)");
  require_finite(values, "median_ci_hs");
  const auto x = sorted_copy(values);
  const std::size_t n = x.size();
  IntervalEstimate out{quantile_sorted(x, 0.5), x.front(), x.back(), level, "hettmansperger-sheather"};
  const std::size_t k = sign_interval_index(n, level);
  if (k == 0) return out;
  const boost::math::binomial_distribution<double> b(static_cast<double>(n), 0.5);
  auto coverage = [&](std::size_t j) { return 1.0 - 2.0 * boost::math::cdf(b, static_cast<double>(j - 1)); };
  // x_(j) is x[j - 1].
  if (2 * (k + 1) > n + 1) {
    out.lower = x[k - 1];
    out.upper = x[n - k];
    return out;
  }
  const double gk = coverage(k), gk1 = coverage(k + 1);
  const double interp = (level - gk1) / (gk - gk1);
  const double nn = static_cast<double>(n), kk = static_cast<double>(k);
  const double lambda = (nn - kk) * interp / (kk + (nn - 2.0 * kk) * interp);
  out.lower = lambda * x[k - 1] + (1.0 - lambda) * x[k];
  out.upper = lambda * x[n - k] + (1.0 - lambda) * x[n - k - 1];
  return out;
}

}  // namespace saelab
