// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_TESTS_SYNTHETIC_SAE_HPP
#define SAELAB_TESTS_SYNTHETIC_SAE_HPP

#include <cmath>

#include "saelab/numerics.hpp"

namespace saelab::testing {

// Samples h = D z* for a fixed random unit-norm dictionary D (d x atoms) and
// codes with exactly `active` nonzero entries drawn from U[0.5, 1.5]. With
// atoms <= d the dictionary is orthonormalized.
struct SparseDictionary {
  Matrix atoms;  // atoms x d, one dictionary direction per row
  std::size_t active;

  SparseDictionary(std::size_t d, std::size_t n_atoms, std::size_t active_count, RngStream& rng)
      : atoms(rng_draw(rng, n_atoms, d, Distribution::gaussian)), active(active_count) {
    for (std::size_t a = 0; a < n_atoms; ++a) {
      auto row = atoms.row(a);
      if (n_atoms <= d)
        for (std::size_t b = 0; b < a; ++b) axpy(-dot(row, atoms.row(b)), atoms.row(b), row);
      const double n = std::sqrt(dot(row, row));
      for (double& v : row) v /= n;
    }
  }

  Matrix sample(std::size_t n, RngStream& rng) const {
    Matrix out(n, atoms.cols());
    std::vector<std::size_t> idx(atoms.rows());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t a = 0; a < idx.size(); ++a) idx[a] = a;
      for (std::size_t j = 0; j < active; ++j) {
        std::swap(idx[j], idx[j + rng.index(idx.size() - j)]);
        axpy(0.5 + rng.uniform(), atoms.row(idx[j]), out.row(s));
      }
    }
    return out;
  }
};

}  // namespace saelab::testing

#endif  // SAELAB_TESTS_SYNTHETIC_SAE_HPP
