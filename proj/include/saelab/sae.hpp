// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Sparse autoencoder over residual-stream vectors.
//
//     z = ReLU(W_enc h + b_enc)        (TopK mode keeps the k largest entries)
//     h' = W_dec z + b_dec
//
// Inputs are consumed as-is; no normalization is applied before encoding.

#ifndef SAELAB_SAE_HPP
#define SAELAB_SAE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "saelab/errors.hpp"
#include "saelab/lm.hpp"
#include "saelab/numerics.hpp"

namespace saelab {

struct SparsityMode {
  enum class Kind { l1, top_k };
  Kind kind = Kind::l1;
  double lambda = 1e-2;  // L1 weight
  std::size_t k = 0;     // TopK width

  static SparsityMode l1(double lambda) { return {Kind::l1, lambda, 0}; }
  static SparsityMode top_k(std::size_t k) { return {Kind::top_k, 0.0, k}; }
  std::string describe() const;
};

struct SaeConfig {
  std::size_t d_model = 64;
  std::size_t d_hidden = 1024;
  SparsityMode mode;
  std::uint64_t seed = 0;

  /// d_hidden = 16 * d_model.
  static SaeConfig standard(std::size_t d_model, SparsityMode mode, std::uint64_t seed);
  void validate() const;
};

struct SaeParams {
  SaeConfig config;
  Matrix w_enc;  // d_hidden x d_model
  Matrix b_enc;  // 1 x d_hidden
  Matrix w_dec;  // d_model x d_hidden
  Matrix b_dec;  // 1 x d_model

  static SaeParams zeros(const SaeConfig& config);
  void validate() const;
};

std::vector<double> encode(const SaeParams& sae, std::span<const double> h);
std::vector<double> decode(const SaeParams& sae, std::span<const double> z);
std::vector<double> route(const SaeParams& sae, std::span<const double> h);

/// Rectify, then zero all but the k largest entries; ties keep the lower index.
void apply_top_k(std::span<double> z, std::size_t k);

/// Residual hook that replaces h with its reconstruction. The Jacobian is
/// W_dec diag(active) W_enc, with the active set taken at h.
class SaeRouting final : public ResidualTransform {
 public:
  explicit SaeRouting(std::shared_ptr<const SaeParams> sae);
  std::size_t dim() const override { return sae_->config.d_model; }
  void apply(std::span<const double> h, std::span<double> out) const override;
  void jvp(std::span<const double> h, std::span<const double> tangent,
           std::span<double> out) const override;
  void vjp(std::span<const double> h, std::span<const double> cotangent,
           std::span<double> out) const override;
  const SaeParams& params() const noexcept { return *sae_; }

 private:
  std::shared_ptr<const SaeParams> sae_;
  Matrix w_dec_t_;  // d_hidden x d_model, rows are decoder columns
};

struct SaeTrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
};

struct SaeTrainReport {
  std::vector<double> epoch_loss;
};

class SaeTrainingFailure : public Error {
 public:
  SaeTrainingFailure(const std::string& what, SaeParams last_stable)
      : Error(ErrorCode::training_failure, what), last_stable_(std::move(last_stable)) {}
  const SaeParams& last_stable() const noexcept { return last_stable_; }

 private:
  SaeParams last_stable_;
};

/// Initial weights: unit-norm random decoder columns, tied encoder, zero
/// encoder bias, decoder bias at the data mean.
SaeParams initialize_sae(const SaeConfig& config, const Matrix& activations);

/// Adam with a cosine-decayed step size on mean squared reconstruction error
/// (+ lambda * |z|_1 in L1 mode).
/// Rows of `activations` are samples. In L1 mode decoder columns are projected
/// back to unit norm after every step.
SaeParams train_sae(const SaeConfig& config, const Matrix& activations,
                    const SaeTrainOptions& options, SaeTrainReport* report = nullptr);

/// Mean count of strictly positive code entries.
double measure_l0(const SaeParams& sae, const Matrix& activations);

/// 1 - SSE / SST of route() against the inputs.
double reconstruction_r2(const SaeParams& sae, const Matrix& activations);

struct SaeArtifactInfo {
  std::uint64_t corpus_hash = 0;
  double measured_l0 = 0.0;
  std::size_t layer = 0;
};

void save_sae(const std::filesystem::path& dir, const SaeParams& sae, const SaeArtifactInfo& info);
SaeParams load_sae(const std::filesystem::path& dir, SaeArtifactInfo* info = nullptr);

}  // namespace saelab

#endif  // SAELAB_SAE_HPP
