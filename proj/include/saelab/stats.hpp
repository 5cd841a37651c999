// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_STATS_HPP
#define SAELAB_STATS_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "saelab/errors.hpp"
#include "saelab/numerics.hpp"

namespace saelab {

enum class Alternative { two_sided, greater, less };
enum class TestMethod { exact, approximate };

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  TestMethod method = TestMethod::exact;
  std::size_t n = 0;
  std::size_t m = 0;
};

struct IntervalEstimate {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::string method;
};

double mean(std::span<const double> values);
/// Divides by n - 1; zero for a single value.
double sample_std(std::span<const double> values);
double median(std::span<const double> values);
/// Hyndman-Fan type 7 quantile of already sorted data.
double quantile_sorted(std::span<const double> sorted, double q);
/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> values);

/// U counts pairs with x > y (ties count 1/2). `greater` tests whether x tends
/// to exceed y. Exact enumeration when max(n, m) <= 10, otherwise a normal
/// approximation with tie and continuity corrections.
TestResult mann_whitney_u(std::span<const double> x, std::span<const double> y,
                          Alternative alternative = Alternative::two_sided);

/// Normal approximation used above the exact threshold, callable directly.
TestResult mann_whitney_u_normal(std::span<const double> x, std::span<const double> y,
                                 Alternative alternative = Alternative::two_sided);

/// Statistic is W+, the rank sum of positive differences. Zero differences are
/// dropped. Exact for n <= 15 nonzero differences. Throws DegenerateInput when
/// every difference is zero and InvalidInput when fewer than 5 remain.
TestResult wilcoxon_signed_rank(std::span<const double> diffs,
                                Alternative alternative = Alternative::two_sided);

TestResult wilcoxon_signed_rank_normal(std::span<const double> diffs,
                                       Alternative alternative = Alternative::two_sided);

/// Percentile bootstrap of the median. Resample b draws from rng.substream(b),
/// so the interval is a pure function of (values, rng seed and stream).
IntervalEstimate bootstrap_ci_median(std::span<const double> values, const RngStream& rng,
                                     std::size_t resamples = 10000, double level = 0.95);

/// mean +- t_{n-1} s / sqrt(n).
IntervalEstimate t_ci_mean(std::span<const double> values, double level = 0.95);

/// Two-sided quantile of Student's t with `df` degrees of freedom.
double student_t_quantile(double p, double df);

/// Largest k with P(x_(k) <= median <= x_(n-k+1)) >= level under Binomial(n, 1/2);
/// zero when even [min, max] falls short.
std::size_t sign_interval_index(std::size_t n, double level);

/// Hettmansperger-Sheather interpolation between the order-statistic intervals
/// indexed k and k + 1.
IntervalEstimate median_ci_hs(std::span<const double> values, double level = 0.95);

}  // namespace saelab

#endif  // SAELAB_STATS_HPP
