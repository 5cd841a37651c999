// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force and series reference values for the rank tests and intervals.
// Deliberately naive: direct pair counting, full labelling enumeration.

#ifndef SAELAB_TESTS_STATS_ORACLES_HPP
#define SAELAB_TESTS_STATS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace saelab::oracle {

// U by pair counting: x > y scores 1, ties 1/2.
inline double u_statistic(const std::vector<double>& x, const std::vector<double>& y) {
  double u = 0.0;
  for (double a : x)
    for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return u;
}

// Two-sided exact p by enumerating every split of the pooled sample into
// groups of size n and m.
inline double mann_whitney_two_sided(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::size_t n = x.size(), total = pooled.size();
  const double center = 0.5 * static_cast<double>(x.size() * y.size());
  const double observed = std::abs(u_statistic(x, y) - center);
  double hits = 0.0, count = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n) continue;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < total; ++i) ((mask >> i) & 1u ? a : b).push_back(pooled[i]);
    count += 1.0;
    if (std::abs(u_statistic(a, b) - center) >= observed - 1e-9) hits += 1.0;
  }
  return hits / count;
}

// Ranks of |d| by counting, with ties averaged.
inline std::vector<double> abs_ranks(const std::vector<double>& d) {
  std::vector<double> r(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (double o : d) {
      if (std::abs(o) < std::abs(d[i])) below += 1.0;
      else if (std::abs(o) == std::abs(d[i])) equal += 1.0;
    }
    r[i] = below + 0.5 * (equal + 1.0);
  }
  return r;
}

// Exact signed-rank p over all 2^n sign flips (zero differences removed by
// the caller). `sided`: 0 two-sided, +1 greater, -1 less.
inline double wilcoxon(const std::vector<double>& d, int sided = 0) {
  const auto r = abs_ranks(d);
  double total = 0.0, w = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += r[i];
    if (d[i] > 0) w += r[i];
  }
  const double center = total / 2.0;
  double hits = 0.0;
  const std::uint32_t patterns = 1u << d.size();
  for (std::uint32_t mask = 0; mask < patterns; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if ((mask >> i) & 1u) s += r[i];
    bool hit = false;
    if (sided == 0) hit = std::abs(s - center) >= std::abs(w - center) - 1e-9;
    else if (sided > 0) hit = s >= w - 1e-9;
    else hit = s <= w + 1e-9;
    if (hit) hits += 1.0;
  }
  return std::min(1.0, hits / patterns);
}

// Regularized incomplete beta I_x(a, b) by the modified Lentz continued
// fraction.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x)) / a;
  const double tiny = 1e-300;
  double f = 1.0, c = 1.0, dd = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0) num = 1.0;
    else if (i % 2 == 0) num = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    else num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    dd = 1.0 + num * dd;
    if (std::abs(dd) < tiny) dd = tiny;
    dd = 1.0 / dd;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    const double delta = c * dd;
    f *= delta;
    if (std::abs(1.0 - delta) < 1e-15) break;
  }
  return front * (f - 1.0);
}

inline double t_cdf(double t, double df) {
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t >= 0 ? 1.0 - tail : tail;
}

inline double t_quantile(double p, double df) {
  double lo = -1e4, hi = 1e4;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// P(B <= j) for B ~ Binomial(n, 1/2), by counting subsets.
inline double binomial_half_cdf(std::size_t n, std::size_t j) {
  double hits = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask)
    if (static_cast<std::size_t>(__builtin_popcount(mask)) <= j) hits += 1.0;
  return hits / static_cast<double>(1u << n);
}

}  // namespace saelab::oracle

#endif  // SAELAB_TESTS_STATS_ORACLES_HPP
