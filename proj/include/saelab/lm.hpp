// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Toy decoder-only transformer with residual-stream hook points.
//
// Block (pre-norm):
//     h   = x + Attn(RMSNorm(x))
//     out = h + MLP(RMSNorm(h))          MLP: GELU(n W_up + b_up) W_down + b_down
//
// Residual index l in [0, n_layers]: l = 0 is the embedding sum, l = k is the
// output of block k. A hook at l replaces that residual, at every position,
// before anything downstream reads it.

#ifndef SAELAB_LM_HPP
#define SAELAB_LM_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saelab/errors.hpp"
#include "saelab/numerics.hpp"
#include "saelab/tokens.hpp"

namespace saelab {

struct ModelConfig {
  std::size_t vocab_size = 128;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t context_len = 128;
  std::uint64_t seed = 0;

  std::size_t d_ff() const noexcept { return 4 * d_model; }
  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  void validate() const;
};

struct BlockParams {
  Matrix attn_norm;  // 1 x d
  Matrix w_q, w_k, w_v, w_o;  // d x d, stored input-major (y = x W)
  Matrix mlp_norm;   // 1 x d
  Matrix w_up;       // d x d_ff
  Matrix b_up;       // 1 x d_ff
  Matrix w_down;     // d_ff x d
  Matrix b_down;     // 1 x d
};

struct TransformerParams {
  ModelConfig config;
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // context x d
  std::vector<BlockParams> blocks;
  Matrix final_norm;   // 1 x d
  Matrix unembedding;  // d x vocab
  Matrix output_bias;  // 1 x vocab

  /// All-zero weights with unit norm gains.
  static TransformerParams zeros(const ModelConfig& config);
  static TransformerParams initialize(const ModelConfig& config, RngStream& rng);

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  /// Throws InvalidInput on shape mismatch or non-finite entries.
  void validate() const;
};

/// Position-wise map applied to a residual row. Implementations must be pure.
class ResidualTransform {
 public:
  virtual ~ResidualTransform() = default;
  virtual std::size_t dim() const = 0;
  virtual void apply(std::span<const double> h, std::span<double> out) const = 0;
  /// out = J(h) * tangent
  virtual void jvp(std::span<const double> h, std::span<const double> tangent,
                   std::span<double> out) const = 0;
  /// out = J(h)^T * cotangent
  virtual void vjp(std::span<const double> h, std::span<const double> cotangent,
                   std::span<double> out) const = 0;
};

class IdentityTransform final : public ResidualTransform {
 public:
  explicit IdentityTransform(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  void apply(std::span<const double> h, std::span<double> out) const override;
  void jvp(std::span<const double>, std::span<const double> tangent,
           std::span<double> out) const override;
  void vjp(std::span<const double>, std::span<const double> cotangent,
           std::span<double> out) const override;

 private:
  std::size_t dim_;
};

struct RoutingHook {
  std::size_t layer = 0;
  std::shared_ptr<const ResidualTransform> transform;
};
using HookList = std::vector<RoutingHook>;

struct ForwardTrace {
  Matrix logits;                        // positions x vocab
  std::map<std::size_t, Matrix> residuals;  // layer -> positions x d (pre-hook)
};

/// Attention keys and values for a processed prefix.
class KvCache {
 public:
  KvCache(const ModelConfig& config, std::size_t capacity);
  std::size_t length() const noexcept { return length_; }
  std::size_t capacity() const noexcept { return capacity_; }
  /// Forgets positions >= len.
  void truncate(std::size_t len);
  /// Copies the first `len` positions of `other` into this cache.
  void assign_prefix(const KvCache& other, std::size_t len);

 private:
  friend class Engine;
  std::size_t capacity_;
  std::size_t length_ = 0;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
};

ForwardTrace forward(const TransformerParams& params, std::span<const TokenId> tokens,
                     const HookList& hooks, const std::set<std::size_t>& trace_layers = {});

/// Appends `tokens` after the cached prefix and returns logits for the new
/// positions from index `logits_from` on (relative to `tokens`).
Matrix extend(const TransformerParams& params, KvCache& cache, std::span<const TokenId> tokens,
              const HookList& hooks, std::size_t logits_from = 0);

/// Mean next-token cross-entropy of `target` given prompt + suffix.
double target_loss(const TransformerParams& params, std::span<const TokenId> prompt,
                   std::span<const TokenId> suffix, std::span<const TokenId> target,
                   const HookList& hooks);

/// d target_loss / d (input embedding rows at suffix positions), suffix_len x d.
Matrix suffix_gradient(const TransformerParams& params, std::span<const TokenId> prompt,
                       std::span<const TokenId> suffix, std::span<const TokenId> target,
                       const HookList& hooks);

/// Number of suffix_gradient calls made by this process.
std::uint64_t suffix_gradient_calls() noexcept;

struct LossTerm {
  std::size_t position;  // row whose logits predict `target`
  TokenId target;
};

/// Mean cross-entropy over `terms` with optional reverse pass. Gradients are
/// accumulated (added) into `param_grads` and written to `input_grad`
/// (positions x d) when non-null.
double loss_and_gradients(const TransformerParams& params, std::span<const TokenId> tokens,
                          const HookList& hooks, std::span<const LossTerm> terms,
                          TransformerParams* param_grads, Matrix* input_grad);

/// Scores many suffixes against one prompt/target, reusing attention state
/// for the unchanged prefix. Thread-safe after construction and set_base().
class SuffixScorer {
 public:
  SuffixScorer(const TransformerParams& params, TokenSequence prompt, TokenSequence target,
               HookList hooks);
  void set_base(std::span<const TokenId> suffix);
  double loss(std::span<const TokenId> suffix) const;
  /// Logits for the token following prompt + suffix.
  std::vector<double> next_token_logits(std::span<const TokenId> suffix) const;

 private:
  std::size_t shared_prefix(std::span<const TokenId> suffix) const;

  const TransformerParams& params_;
  TokenSequence prompt_;
  TokenSequence target_;
  HookList hooks_;
  TokenSequence base_suffix_;
  std::optional<KvCache> base_cache_;
};

struct TrainOptions {
  std::size_t epochs = 0;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
};

struct TrainReport {
  std::vector<double> epoch_loss;
};

class LmTrainingFailure : public Error {
 public:
  LmTrainingFailure(const std::string& what, TransformerParams last_stable)
      : Error(ErrorCode::training_failure, what), last_stable_(std::move(last_stable)) {}
  const TransformerParams& last_stable() const noexcept { return last_stable_; }

 private:
  TransformerParams last_stable_;
};

/// Mini-batch gradient descent on next-token cross-entropy over every position,
/// cosine-decayed step size, global-norm clipping. Deterministic given the seed.
TransformerParams train_lm(const ModelConfig& config, std::span<const TokenSequence> corpus,
                           const TrainOptions& options, RngStream& rng,
                           TrainReport* report = nullptr);

/// Same, starting from existing parameters.
TransformerParams train_lm_from(TransformerParams params, std::span<const TokenSequence> corpus,
                                const TrainOptions& options, RngStream& rng,
                                TrainReport* report = nullptr);

struct GenerationMode {
  double temperature = 0.0;  // 0 => greedy
  RngStream* rng = nullptr;  // required when temperature > 0

  static GenerationMode greedy() { return {}; }
  static GenerationMode sampled(double temperature, RngStream& rng) {
    return {temperature, &rng};
  }
};

/// Continuation of `prompt`, excluding the end-of-sequence token.
TokenSequence generate(const TransformerParams& params, std::span<const TokenId> prompt,
                       const HookList& hooks, std::size_t max_new,
                       GenerationMode mode = GenerationMode::greedy());

void save_model(const std::filesystem::path& dir, const TransformerParams& params);
TransformerParams load_model(const std::filesystem::path& dir);

}  // namespace saelab

#endif  // SAELAB_LM_HPP
