// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_TESTS_FINITE_DIFF_HPP
#define SAELAB_TESTS_FINITE_DIFF_HPP

#include <algorithm>
#include <cmath>

#include "saelab/lm.hpp"

namespace saelab::testing {

struct FdResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences on the input embedding at suffix positions. The
// position embedding row enters the input additively, so perturbing it moves
// exactly one input row.
inline FdResult check_suffix_gradient(const TransformerParams& params, const TokenSequence& prompt,
                                      const TokenSequence& suffix, const TokenSequence& target,
                                      const HookList& hooks, RngStream& rng,
                                      std::size_t coordinates, double step = 1e-5) {
  const Matrix grad = suffix_gradient(params, prompt, suffix, target, hooks);
  FdResult out;
  TransformerParams probe = params;
  for (std::size_t c = 0; c < coordinates; ++c) {
    const std::size_t row = rng.index(suffix.size());
    const std::size_t col = rng.index(params.config.d_model);
    double& slot = probe.position_embedding(prompt.size() + row, col);
    const double saved = slot;
    slot = saved + step;
    const double up = target_loss(probe, prompt, suffix, target, hooks);
    slot = saved - step;
    const double down = target_loss(probe, prompt, suffix, target, hooks);
    slot = saved;
    const double fd = (up - down) / (2.0 * step);
    const double an = grad(row, col);
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(fd - an) / denom);
    ++out.coordinates;
  }
  return out;
}

inline TokenSequence random_text_tokens(RngStream& rng, std::size_t n, std::size_t vocab) {
  TokenSequence out(n);
  for (auto& t : out)
    t = static_cast<TokenId>(tokens::num_special + rng.index(vocab - tokens::num_special));
  return out;
}

}  // namespace saelab::testing

#endif  // SAELAB_TESTS_FINITE_DIFF_HPP
