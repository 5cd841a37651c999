// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/lm.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace saelab {

void ModelConfig::validate() const {
  require(vocab_size > static_cast<std::size_t>(tokens::num_special),
          "model config: vocab_size must exceed the reserved control tokens");
  require(d_model >= 1 && n_heads >= 1, "model config: d_model and n_heads must be positive");
  require(d_model % n_heads == 0, "model config: d_model must be divisible by n_heads");
  require(n_layers >= 1, "model config: n_layers must be positive");
  require(context_len >= 2, "model config: context_len must be at least 2");
}

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Matrix ones(std::size_t n) { return Matrix(1, n, 1.0); }

void add_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, bias.values(), m.row(r));
}

void add_column_sums(Matrix& acc, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), acc.values());
}

Matrix rmsnorm(const Matrix& x, const Matrix& gain, std::vector<double>& inv_rms) {
  const std::size_t d = x.cols();
  Matrix out(x.rows(), d);
  inv_rms.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    const double s = 1.0 / std::sqrt(dot(xr, xr) / static_cast<double>(d) + kNormEps);
    inv_rms[r] = s;
    auto o = out.row(r);
    for (std::size_t i = 0; i < d; ++i) o[i] = gain(0, i) * xr[i] * s;
  }
  return out;
}

// Adds the input gradient into dx; gain gradient into dgain when present.
void rmsnorm_backward(const Matrix& x, const Matrix& gain, const std::vector<double>& inv_rms,
                      const Matrix& dout, Matrix& dx, Matrix* dgain) {
  const std::size_t d = x.cols();
  std::vector<double> gd(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto dor = dout.row(r);
    const double s = inv_rms[r];
    for (std::size_t i = 0; i < d; ++i) gd[i] = gain(0, i) * dor[i];
    const double proj = dot(gd, xr) * s * s * s / static_cast<double>(d);
    auto dxr = dx.row(r);
    for (std::size_t i = 0; i < d; ++i) dxr[i] += s * gd[i] - proj * xr[i];
    if (dgain != nullptr)
      for (std::size_t i = 0; i < d; ++i) (*dgain)(0, i) += dor[i] * xr[i] * s;
  }
}

void zero_all(TransformerParams& p) {
  for (auto& [name, t] : p.tensors()) t->fill(0.0);
}

}  // namespace

TransformerParams TransformerParams::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  TransformerParams p;
  p.config = config;
  p.token_embedding = Matrix(config.vocab_size, d);
  p.position_embedding = Matrix(config.context_len, d);
  p.blocks.resize(config.n_layers);
  for (auto& b : p.blocks) {
    b.attn_norm = ones(d);
    b.w_q = Matrix(d, d);
    b.w_k = Matrix(d, d);
    b.w_v = Matrix(d, d);
    b.w_o = Matrix(d, d);
    b.mlp_norm = ones(d);
    b.w_up = Matrix(d, config.d_ff());
    b.b_up = Matrix(1, config.d_ff());
    b.w_down = Matrix(config.d_ff(), d);
    b.b_down = Matrix(1, d);
  }
  p.final_norm = ones(d);
  p.unembedding = Matrix(d, config.vocab_size);
  p.output_bias = Matrix(1, config.vocab_size);
  return p;
}

TransformerParams TransformerParams::initialize(const ModelConfig& config, RngStream& rng) {
  TransformerParams p = zeros(config);
  const double d = static_cast<double>(config.d_model);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto gauss = [&rng](Matrix& m, double stddev) {
    for (double& v : m.values()) v = stddev * rng.gaussian();
  };
  gauss(p.token_embedding, 1.0);
  gauss(p.position_embedding, 0.5);
  for (auto& b : p.blocks) {
    gauss(b.w_q, 1.0 / std::sqrt(d));
    gauss(b.w_k, 1.0 / std::sqrt(d));
    gauss(b.w_v, 1.0 / std::sqrt(d));
    gauss(b.w_o, residual_scale / std::sqrt(d));
    gauss(b.w_up, 1.0 / std::sqrt(d));
    gauss(b.w_down, residual_scale / std::sqrt(static_cast<double>(config.d_ff())));
  }
  gauss(p.unembedding, 1.0 / std::sqrt(d));
  return p;
}

std::vector<std::pair<std::string, Matrix*>> TransformerParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out{
      {"token_embedding", &token_embedding},
      {"position_embedding", &position_embedding},
  };
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    out.insert(out.end(), {{pre + "attn_norm", &b.attn_norm},
                           {pre + "w_q", &b.w_q},
                           {pre + "w_k", &b.w_k},
                           {pre + "w_v", &b.w_v},
                           {pre + "w_o", &b.w_o},
                           {pre + "mlp_norm", &b.mlp_norm},
                           {pre + "w_up", &b.w_up},
                           {pre + "b_up", &b.b_up},
                           {pre + "w_down", &b.w_down},
                           {pre + "b_down", &b.b_down}});
  }
  out.insert(out.end(), {{"final_norm", &final_norm},
                         {"unembedding", &unembedding},
                         {"output_bias", &output_bias}});
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> TransformerParams::tensors() const {
  auto mut = const_cast<TransformerParams*>(this)->tensors();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

void TransformerParams::validate() const {
  config.validate();
  const TransformerParams shape = zeros(config);
  auto mine = tensors();
  auto ref = shape.tensors();
  require(mine.size() == ref.size(), "transformer params: layer count does not match config");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    require(mine[i].second->rows() == ref[i].second->rows() &&
                mine[i].second->cols() == ref[i].second->cols(),
            "transformer params: tensor " + mine[i].first + " has the wrong shape");
    require(mine[i].second->all_finite(),
            "transformer params: tensor " + mine[i].first + " is not finite");
  }
}

void IdentityTransform::apply(std::span<const double> h, std::span<double> out) const {
  std::copy(h.begin(), h.end(), out.begin());
}
void IdentityTransform::jvp(std::span<const double>, std::span<const double> tangent,
                            std::span<double> out) const {
  std::copy(tangent.begin(), tangent.end(), out.begin());
}
void IdentityTransform::vjp(std::span<const double>, std::span<const double> cotangent,
                            std::span<double> out) const {
  std::copy(cotangent.begin(), cotangent.end(), out.begin());
}

KvCache::KvCache(const ModelConfig& config, std::size_t capacity) : capacity_(capacity) {
  require(capacity <= config.context_len, "sequence exceeds the model context length");
  keys_.assign(config.n_layers, Matrix(capacity, config.d_model));
  values_.assign(config.n_layers, Matrix(capacity, config.d_model));
}

void KvCache::truncate(std::size_t len) { length_ = std::min(length_, len); }

void KvCache::assign_prefix(const KvCache& other, std::size_t len) {
  require(len <= other.length_ && len <= capacity_, "kv cache: prefix longer than available");
  require(keys_.size() == other.keys_.size(), "kv cache: layer count mismatch");
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    const std::size_t n = len * keys_[l].cols();
    std::copy_n(other.keys_[l].values().begin(), n, keys_[l].values().begin());
    std::copy_n(other.values_[l].values().begin(), n, values_[l].values().begin());
  }
  length_ = len;
}

// Forward/backward machinery shared by every entry point.
class Engine {
 public:
  struct BlockTape {
    Matrix x_in, n1, q, k, v, attn, h_mid, n2, up, act;
    std::vector<double> inv1, inv2;
    std::vector<Matrix> probs;  // per head, rows x rows (lower triangle used)
  };
  struct Tape {
    std::vector<Matrix> pre_hook;  // residual l before its hook, l in [0, L]
    std::vector<BlockTape> blocks;
    Matrix final_in;
    std::vector<double> final_inv;
  };

  Engine(const TransformerParams& params, const HookList& hooks)
      : p_(params), cfg_(params.config), by_layer_(params.config.n_layers + 1, nullptr) {
    for (const auto& h : hooks) {
      require(h.transform != nullptr, "hook without a transform");
      require(h.layer <= cfg_.n_layers, "hook layer out of range");
      require(by_layer_[h.layer] == nullptr, "hook layers must be distinct");
      require(h.transform->dim() == cfg_.d_model, "hook transform dimension mismatch");
      by_layer_[h.layer] = h.transform.get();
    }
  }

  // Processes `tokens` after the cached prefix; returns final-normed rows.
  Matrix run(KvCache& cache, std::span<const TokenId> tokens, Tape* tape,
             const std::set<std::size_t>* trace_layers, std::map<std::size_t, Matrix>* traces) {
    const std::size_t start = cache.length_;
    const std::size_t n = tokens.size();
    require(n >= 1, "forward: empty token sequence");
    require(start + n <= cache.capacity_, "forward: sequence exceeds the model context length");
    const std::size_t d = cfg_.d_model;
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const TokenId t = tokens[i];
      require(t >= 0 && static_cast<std::size_t>(t) < cfg_.vocab_size,
              "forward: token id outside the vocabulary");
      auto xr = x.row(i);
      axpy(1.0, p_.token_embedding.row(static_cast<std::size_t>(t)), xr);
      axpy(1.0, p_.position_embedding.row(start + i), xr);
    }
    if (tape != nullptr) {
      tape->pre_hook.assign(cfg_.n_layers + 1, Matrix());
      tape->blocks.assign(cfg_.n_layers, BlockTape());
    }
    auto residual_out = [&](std::size_t layer) {
      if (tape != nullptr) tape->pre_hook[layer] = x;
      if (trace_layers != nullptr && trace_layers->count(layer) != 0) (*traces)[layer] = x;
      if (by_layer_[layer] != nullptr) x = apply_rows(*by_layer_[layer], x);
    };
    residual_out(0);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      x = block_forward(l, x, start, cache, tape != nullptr ? &tape->blocks[l] : nullptr);
      residual_out(l + 1);
    }
    std::vector<double> inv;
    Matrix out = rmsnorm(x, p_.final_norm, inv);
    if (tape != nullptr) {
      tape->final_in = std::move(x);
      tape->final_inv = std::move(inv);
    }
    cache.length_ = start + n;
    return out;
  }

  // Reverse pass from d(final-normed rows); returns d(embedding rows).
  Matrix backward(const Tape& tape, const Matrix& d_final, TransformerParams* grads) const {
    Matrix dx(d_final.rows(), d_final.cols());
    rmsnorm_backward(tape.final_in, p_.final_norm, tape.final_inv, d_final, dx,
                     grads != nullptr ? &grads->final_norm : nullptr);
    for (std::size_t l = cfg_.n_layers + 1; l-- > 0;) {
      if (by_layer_[l] != nullptr) dx = vjp_rows(*by_layer_[l], tape.pre_hook[l], dx);
      if (l == 0) break;
      dx = block_backward(l - 1, tape.blocks[l - 1], dx,
                          grads != nullptr ? &grads->blocks[l - 1] : nullptr);
    }
    return dx;
  }

 private:
  static Matrix apply_rows(const ResidualTransform& t, const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) t.apply(x.row(r), out.row(r));
    return out;
  }

  static Matrix vjp_rows(const ResidualTransform& t, const Matrix& at, const Matrix& cot) {
    Matrix out(cot.rows(), cot.cols());
    for (std::size_t r = 0; r < cot.rows(); ++r) t.vjp(at.row(r), cot.row(r), out.row(r));
    return out;
  }

  Matrix block_forward(std::size_t l, const Matrix& x, std::size_t start, KvCache& cache,
                       BlockTape* tape) const {
    const BlockParams& b = p_.blocks[l];
    const std::size_t n = x.rows();
    const std::size_t d = cfg_.d_model;
    const std::size_t hd = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> inv1;
    Matrix n1 = rmsnorm(x, b.attn_norm, inv1);
    Matrix q = matmul(n1, b.w_q);
    Matrix k = matmul(n1, b.w_k);
    Matrix v = matmul(n1, b.w_v);
    Matrix& keys = cache.keys_[l];
    Matrix& vals = cache.values_[l];
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(k.row(i).begin(), d, keys.row(start + i).begin());
      std::copy_n(v.row(i).begin(), d, vals.row(start + i).begin());
    }

    Matrix o(n, d);
    std::vector<double> scores(start + n);
    if (tape != nullptr) tape->probs.assign(cfg_.n_heads, Matrix(n, start + n));
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = start + i;
        auto qi = q.row(i).subspan(off, hd);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= pos; ++j) {
          scores[j] = dot(qi, keys.row(j).subspan(off, hd)) * scale;
          mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= pos; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        auto oi = o.row(i).subspan(off, hd);
        for (std::size_t j = 0; j <= pos; ++j) {
          scores[j] /= sum;
          axpy(scores[j], vals.row(j).subspan(off, hd), oi);
        }
        if (tape != nullptr)
          std::copy_n(scores.begin(), pos + 1, tape->probs[h].row(i).begin());
      }
    }

    Matrix h_mid = matmul(o, b.w_o);
    h_mid += x;
    std::vector<double> inv2;
    Matrix n2 = rmsnorm(h_mid, b.mlp_norm, inv2);
    Matrix up = matmul(n2, b.w_up);
    add_bias(up, b.b_up);
    Matrix act(up.rows(), up.cols());
    {
      auto uv = up.values();
      auto av = act.values();
      for (std::size_t i = 0; i < uv.size(); ++i) av[i] = gelu(uv[i]);
    }
    Matrix out = matmul(act, b.w_down);
    add_bias(out, b.b_down);
    out += h_mid;

    if (tape != nullptr) {
      tape->x_in = x;
      tape->n1 = std::move(n1);
      tape->q = std::move(q);
      tape->k = std::move(k);
      tape->v = std::move(v);
      tape->attn = std::move(o);
      tape->h_mid = std::move(h_mid);
      tape->n2 = std::move(n2);
      tape->up = std::move(up);
      tape->act = std::move(act);
      tape->inv1 = std::move(inv1);
      tape->inv2 = std::move(inv2);
    }
    return out;
  }

  Matrix block_backward(std::size_t l, const BlockTape& t, const Matrix& dout,
                        BlockParams* g) const {
    const BlockParams& b = p_.blocks[l];
    const std::size_t n = dout.rows();
    const std::size_t hd = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // MLP branch
    Matrix dh = dout;
    if (g != nullptr) {
      g->w_down += matmul_at(t.act, dout);
      add_column_sums(g->b_down, dout);
    }
    Matrix d_up = matmul_bt(dout, b.w_down);
    {
      auto dv = d_up.values();
      auto uv = t.up.values();
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= gelu_grad(uv[i]);
    }
    if (g != nullptr) {
      g->w_up += matmul_at(t.n2, d_up);
      add_column_sums(g->b_up, d_up);
    }
    Matrix d_n2 = matmul_bt(d_up, b.w_up);
    rmsnorm_backward(t.h_mid, b.mlp_norm, t.inv2, d_n2, dh,
                     g != nullptr ? &g->mlp_norm : nullptr);

    // Attention branch
    Matrix dx = dh;
    if (g != nullptr) g->w_o += matmul_at(t.attn, dh);
    Matrix d_o = matmul_bt(dh, b.w_o);
    Matrix dq(n, cfg_.d_model), dk(n, cfg_.d_model), dv(n, cfg_.d_model);
    std::vector<double> dp(n);
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        auto probs = t.probs[h].row(i);
        auto doi = d_o.row(i).subspan(off, hd);
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          dp[j] = dot(doi, t.v.row(j).subspan(off, hd));
          weighted += probs[j] * dp[j];
          axpy(probs[j], doi, dv.row(j).subspan(off, hd));
        }
        auto qi = t.q.row(i).subspan(off, hd);
        auto dqi = dq.row(i).subspan(off, hd);
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs[j] * (dp[j] - weighted) * scale;
          axpy(ds, t.k.row(j).subspan(off, hd), dqi);
          axpy(ds, qi, dk.row(j).subspan(off, hd));
        }
      }
    }
    if (g != nullptr) {
      g->w_q += matmul_at(t.n1, dq);
      g->w_k += matmul_at(t.n1, dk);
      g->w_v += matmul_at(t.n1, dv);
    }
    Matrix d_n1 = matmul_bt(dq, b.w_q);
    d_n1 += matmul_bt(dk, b.w_k);
    d_n1 += matmul_bt(dv, b.w_v);
    rmsnorm_backward(t.x_in, b.attn_norm, t.inv1, d_n1, dx,
                     g != nullptr ? &g->attn_norm : nullptr);
    return dx;
  }

  const TransformerParams& p_;
  const ModelConfig& cfg_;
  std::vector<const ResidualTransform*> by_layer_;
};

namespace {

std::vector<double> logits_row(const TransformerParams& p, std::span<const double> hidden) {
  std::vector<double> z(p.config.vocab_size, 0.0);
  for (std::size_t k = 0; k < hidden.size(); ++k)
    if (hidden[k] != 0.0) axpy(hidden[k], p.unembedding.row(k), z);
  axpy(1.0, p.output_bias.values(), z);
  return z;
}

double log_sum_exp(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s);
}

TokenSequence concat(std::span<const TokenId> a, std::span<const TokenId> b,
                     std::span<const TokenId> c = {}) {
  TokenSequence out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

void check_attack_shape(const ModelConfig& cfg, std::span<const TokenId> prompt,
                        std::span<const TokenId> suffix, std::span<const TokenId> target) {
  require(!target.empty(), "target_loss: empty target");
  require(prompt.size() + suffix.size() >= 1, "target_loss: empty prompt and suffix");
  require(prompt.size() + suffix.size() + target.size() <= cfg.context_len,
          "target_loss: prompt + suffix + target exceeds the context length");
}

std::atomic<std::uint64_t> g_gradient_calls{0};

}  // namespace

ForwardTrace forward(const TransformerParams& params, std::span<const TokenId> tokens,
                     const HookList& hooks, const std::set<std::size_t>& trace_layers) {
  require(!tokens.empty(), "forward: empty token sequence");
  require(tokens.size() <= params.config.context_len,
          "forward: sequence exceeds the model context length");
  for (std::size_t l : trace_layers)
    require(l <= params.config.n_layers, "forward: trace layer out of range");
  Engine engine(params, hooks);
  KvCache cache(params.config, tokens.size());
  ForwardTrace trace;
  Matrix hidden = engine.run(cache, tokens, nullptr, &trace_layers, &trace.residuals);
  trace.logits = matmul(hidden, params.unembedding);
  add_bias(trace.logits, params.output_bias);
  return trace;
}

Matrix extend(const TransformerParams& params, KvCache& cache, std::span<const TokenId> tokens,
              const HookList& hooks, std::size_t logits_from) {
  Engine engine(params, hooks);
  Matrix hidden = engine.run(cache, tokens, nullptr, nullptr, nullptr);
  const std::size_t n = hidden.rows() > logits_from ? hidden.rows() - logits_from : 0;
  Matrix logits(n, params.config.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits_row(params, hidden.row(logits_from + i));
    std::copy(z.begin(), z.end(), logits.row(i).begin());
  }
  return logits;
}

double loss_and_gradients(const TransformerParams& params, std::span<const TokenId> tokens,
                          const HookList& hooks, std::span<const LossTerm> terms,
                          TransformerParams* param_grads, Matrix* input_grad) {
  require(!terms.empty(), "loss: no loss terms");
  const ModelConfig& cfg = params.config;
  for (const auto& t : terms) {
    require(t.position < tokens.size(), "loss: term position outside the sequence");
    require(t.target >= 0 && static_cast<std::size_t>(t.target) < cfg.vocab_size,
            "loss: target id outside the vocabulary");
  }
  const bool backward = param_grads != nullptr || input_grad != nullptr;
  Engine engine(params, hooks);
  KvCache cache(cfg, tokens.size());
  Engine::Tape tape;
  Matrix hidden = engine.run(cache, tokens, backward ? &tape : nullptr, nullptr, nullptr);

  const double weight = 1.0 / static_cast<double>(terms.size());
  Matrix d_hidden = backward ? Matrix(hidden.rows(), hidden.cols()) : Matrix();
  double loss = 0.0;
  for (const auto& t : terms) {
    auto h = hidden.row(t.position);
    auto z = logits_row(params, h);
    const double lse = log_sum_exp(z);
    loss += lse - z[static_cast<std::size_t>(t.target)];
    if (!backward) continue;
    for (double& v : z) v = std::exp(v - lse) * weight;
    z[static_cast<std::size_t>(t.target)] -= weight;
    if (param_grads != nullptr) {
      for (std::size_t k = 0; k < h.size(); ++k)
        axpy(h[k], z, param_grads->unembedding.row(k));
      axpy(1.0, z, param_grads->output_bias.values());
    }
    auto dh = d_hidden.row(t.position);
    for (std::size_t k = 0; k < h.size(); ++k) dh[k] += dot(params.unembedding.row(k), z);
  }
  loss *= weight;
  if (!backward) return loss;

  Matrix dx0 = engine.backward(tape, d_hidden, param_grads);
  if (param_grads != nullptr) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      axpy(1.0, dx0.row(i), param_grads->token_embedding.row(static_cast<std::size_t>(tokens[i])));
      axpy(1.0, dx0.row(i), param_grads->position_embedding.row(i));
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(dx0);
  return loss;
}

double target_loss(const TransformerParams& params, std::span<const TokenId> prompt,
                   std::span<const TokenId> suffix, std::span<const TokenId> target,
                   const HookList& hooks) {
  check_attack_shape(params.config, prompt, suffix, target);
  const TokenSequence context = concat(prompt, suffix);
  const TokenSequence tokens = concat(context, target.first(target.size() - 1));
  KvCache cache(params.config, tokens.size());
  Matrix logits = extend(params, cache, tokens, hooks, context.size() - 1);
  double loss = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    auto z = logits.row(j);
    loss += log_sum_exp(z) - z[static_cast<std::size_t>(target[j])];
  }
  return loss / static_cast<double>(target.size());
}

Matrix suffix_gradient(const TransformerParams& params, std::span<const TokenId> prompt,
                       std::span<const TokenId> suffix, std::span<const TokenId> target,
                       const HookList& hooks) {
  g_gradient_calls.fetch_add(1, std::memory_order_relaxed);
  check_attack_shape(params.config, prompt, suffix, target);
  const TokenSequence tokens = concat(prompt, suffix, target.first(target.size() - 1));
  const std::size_t first = prompt.size() + suffix.size() - 1;
  std::vector<LossTerm> terms;
  for (std::size_t j = 0; j < target.size(); ++j) terms.push_back({first + j, target[j]});
  Matrix dx;
  loss_and_gradients(params, tokens, hooks, terms, nullptr, &dx);
  Matrix out(suffix.size(), params.config.d_model);
  for (std::size_t i = 0; i < suffix.size(); ++i)
    std::copy_n(dx.row(prompt.size() + i).begin(), params.config.d_model, out.row(i).begin());
  return out;
}

std::uint64_t suffix_gradient_calls() noexcept {
  return g_gradient_calls.load(std::memory_order_relaxed);
}

SuffixScorer::SuffixScorer(const TransformerParams& params, TokenSequence prompt,
                           TokenSequence target, HookList hooks)
    : params_(params), prompt_(std::move(prompt)), target_(std::move(target)),
      hooks_(std::move(hooks)) {
  require(!target_.empty(), "suffix scorer: empty target");
}

void SuffixScorer::set_base(std::span<const TokenId> suffix) {
  const TokenSequence context = concat(prompt_, suffix);
  require(!context.empty(), "suffix scorer: empty prompt and suffix");
  require(context.size() + target_.size() <= params_.config.context_len,
          "suffix scorer: prompt + suffix + target exceeds the context length");
  KvCache cache(params_.config, context.size());
  extend(params_, cache, context, hooks_, context.size());
  base_cache_ = std::move(cache);
  base_suffix_.assign(suffix.begin(), suffix.end());
}

std::size_t SuffixScorer::shared_prefix(std::span<const TokenId> suffix) const {
  if (!base_cache_) return 0;
  std::size_t i = 0;
  while (i < suffix.size() && i < base_suffix_.size() && suffix[i] == base_suffix_[i]) ++i;
  return prompt_.size() + i;
}

double SuffixScorer::loss(std::span<const TokenId> suffix) const {
  check_attack_shape(params_.config, prompt_, suffix, target_);
  const TokenSequence context = concat(prompt_, suffix);
  const std::size_t start = std::min(shared_prefix(suffix), context.size() - 1);
  const std::size_t total = context.size() + target_.size() - 1;
  KvCache cache(params_.config, total);
  if (start > 0) cache.assign_prefix(*base_cache_, start);
  TokenSequence tail(context.begin() + static_cast<std::ptrdiff_t>(start), context.end());
  tail.insert(tail.end(), target_.begin(), target_.end() - 1);
  Matrix logits = extend(params_, cache, tail, hooks_, context.size() - 1 - start);
  double loss = 0.0;
  for (std::size_t j = 0; j < target_.size(); ++j) {
    auto z = logits.row(j);
    loss += log_sum_exp(z) - z[static_cast<std::size_t>(target_[j])];
  }
  return loss / static_cast<double>(target_.size());
}

std::vector<double> SuffixScorer::next_token_logits(std::span<const TokenId> suffix) const {
  const TokenSequence context = concat(prompt_, suffix);
  require(!context.empty(), "suffix scorer: empty prompt and suffix");
  require(context.size() <= params_.config.context_len,
          "suffix scorer: sequence exceeds the context length");
  const std::size_t start = std::min(shared_prefix(suffix), context.size() - 1);
  KvCache cache(params_.config, context.size());
  if (start > 0) cache.assign_prefix(*base_cache_, start);
  TokenSequence tail(context.begin() + static_cast<std::ptrdiff_t>(start), context.end());
  Matrix logits = extend(params_, cache, tail, hooks_, tail.size() - 1);
  return {logits.row(0).begin(), logits.row(0).end()};
}

TransformerParams train_lm(const ModelConfig& config, std::span<const TokenSequence> corpus,
                           const TrainOptions& options, RngStream& rng, TrainReport* report) {
  config.validate();
  RngStream init_rng = rng.substream(0);
  TransformerParams params = TransformerParams::initialize(config, init_rng);
  return train_lm_from(std::move(params), corpus, options, rng, report);
}

TransformerParams train_lm_from(TransformerParams params, std::span<const TokenSequence> corpus,
                                const TrainOptions& options, RngStream& rng,
                                TrainReport* report) {
  params.validate();
  require(!corpus.empty(), "train_lm: empty corpus");
  require(options.batch_size >= 1, "train_lm: batch_size must be positive");
  for (const auto& seq : corpus) {
    require(seq.size() >= 2, "train_lm: every sequence needs at least two tokens");
    require(seq.size() <= params.config.context_len, "train_lm: sequence exceeds context");
  }
  if (options.epochs == 0) return params;

  const std::size_t n = corpus.size();
  const std::size_t batch = std::min(options.batch_size, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(options.epochs * per_epoch);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffle_rng = rng.substream(1);

  TransformerParams grads = params;
  TransformerParams last_stable = params;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t b1 = std::min(n, b0 + batch);
      zero_all(grads);
      double batch_loss = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        const TokenSequence& seq = corpus[order[i]];
        std::vector<LossTerm> terms;
        terms.reserve(seq.size() - 1);
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) terms.push_back({t, seq[t + 1]});
        batch_loss += loss_and_gradients(params, seq, {}, terms, &grads, nullptr);
      }
      const double inv_b = 1.0 / static_cast<double>(b1 - b0);
      batch_loss *= inv_b;
      if (!std::isfinite(batch_loss))
        throw LmTrainingFailure("train_lm: loss diverged at step " + std::to_string(step),
                                last_stable);
      double norm_sq = 0.0;
      for (auto& [name, g] : grads.tensors()) {
        *g *= inv_b;
        norm_sq += dot(g->values(), g->values());
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = norm > options.clip_norm ? options.clip_norm / norm : 1.0;
      const double lr = options.learning_rate * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      auto pt = params.tensors();
      auto gt = grads.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t)
        axpy(-lr * clip, gt[t].second->values(), pt[t].second->values());
      epoch_loss += batch_loss * static_cast<double>(b1 - b0);
      ++step;
    }
    for (const auto& [name, t] : params.tensors()) {
      if (!t->all_finite())
        throw LmTrainingFailure("train_lm: parameters diverged in epoch " + std::to_string(epoch),
                                last_stable);
    }
    last_stable = params;
    if (report != nullptr) report->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return params;
}

TokenSequence generate(const TransformerParams& params, std::span<const TokenId> prompt,
                       const HookList& hooks, std::size_t max_new, GenerationMode mode) {
  require(!prompt.empty(), "generate: empty prompt");
  require(mode.temperature <= 0.0 || mode.rng != nullptr, "generate: sampling needs an rng");
  const ModelConfig& cfg = params.config;
  require(prompt.size() <= cfg.context_len, "generate: prompt exceeds the context length");
  const std::size_t capacity = std::min(cfg.context_len, prompt.size() + max_new);
  KvCache cache(cfg, capacity);
  TokenSequence out;
  if (max_new == 0) return out;
  Matrix logits = extend(params, cache, prompt, hooks, prompt.size() - 1);
  while (out.size() < max_new) {
    auto z = logits.row(0);
    TokenId next = 0;
    if (mode.temperature <= 0.0) {
      next = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
    } else {
      std::vector<double> w(z.begin(), z.end());
      const double mx = *std::max_element(w.begin(), w.end());
      double sum = 0.0;
      for (double& v : w) {
        v = std::exp((v - mx) / mode.temperature);
        sum += v;
      }
      double u = mode.rng->uniform() * sum;
      std::size_t pick = w.size() - 1;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) {
          pick = i;
          break;
        }
        u -= w[i];
      }
      next = static_cast<TokenId>(pick);
    }
    if (next == tokens::eos) break;
    out.push_back(next);
    if (cache.length() >= capacity || out.size() >= max_new) break;
    const TokenId one[1] = {next};
    logits = extend(params, cache, one, hooks, 0);
  }
  return out;
}

void save_model(const std::filesystem::path& dir, const TransformerParams& params) {
  params.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write model manifest in " + dir.string());
  const ModelConfig& c = params.config;
  manifest << "format_version 1\n"
           << "kind transformer\n"
           << "vocab_size " << c.vocab_size << "\n"
           << "d_model " << c.d_model << "\n"
           << "n_layers " << c.n_layers << "\n"
           << "n_heads " << c.n_heads << "\n"
           << "context_len " << c.context_len << "\n"
           << "seed " << c.seed << "\n";
  for (const auto& [name, t] : params.tensors()) {
    manifest << "tensor " << name << " " << name << ".bin\n";
    save_matrix(dir / (name + ".bin"), *t);
  }
  if (!manifest) throw IoError("failed writing model manifest in " + dir.string());
}

TransformerParams load_model(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("no model manifest in " + dir.string());
  ModelConfig c;
  std::map<std::string, std::string> files;
  std::string line;
  int version = 0;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format_version") ls >> version;
    else if (key == "vocab_size") ls >> c.vocab_size;
    else if (key == "d_model") ls >> c.d_model;
    else if (key == "n_layers") ls >> c.n_layers;
    else if (key == "n_heads") ls >> c.n_heads;
    else if (key == "context_len") ls >> c.context_len;
    else if (key == "seed") ls >> c.seed;
    else if (key == "tensor") {
      std::string name, file;
      ls >> name >> file;
      files[name] = file;
    }
  }
  if (version != 1) throw IoError("unsupported model format in " + dir.string());
  TransformerParams params = TransformerParams::zeros(c);
  for (auto& [name, t] : params.tensors()) {
    auto it = files.find(name);
    if (it == files.end()) throw IoError("model manifest lacks tensor " + name);
    *t = load_matrix(dir / it->second);
  }
  params.validate();
  return params;
}

}  // namespace saelab
