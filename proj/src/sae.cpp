// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace saelab {

std::string SparsityMode::describe() const {
  std::ostringstream out;
  out << std::setprecision(17);
  if (kind == Kind::l1) out << "l1 " << lambda;
  else out << "topk " << k;
  return out.str();
}

SaeConfig SaeConfig::standard(std::size_t d_model, SparsityMode mode, std::uint64_t seed) {
  return {d_model, 16 * d_model, mode, seed};
}

void SaeConfig::validate() const {
  require(d_model >= 1, "sae config: d_model must be positive");
  require(d_hidden >= d_model, "sae config: d_hidden must be at least d_model");
  if (mode.kind == SparsityMode::Kind::l1)
    require(mode.lambda > 0.0 && std::isfinite(mode.lambda), "sae config: lambda must be positive");
  else
    require(mode.k >= 1 && mode.k <= d_hidden, "sae config: top-k must lie in [1, d_hidden]");
}

SaeParams SaeParams::zeros(const SaeConfig& config) {
  config.validate();
  return {config, Matrix(config.d_hidden, config.d_model), Matrix(1, config.d_hidden),
          Matrix(config.d_model, config.d_hidden), Matrix(1, config.d_model)};
}

void SaeParams::validate() const {
  config.validate();
  auto check = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    require(m.rows() == r && m.cols() == c, std::string("sae params: ") + name + " has the wrong shape");
    require(m.all_finite(), std::string("sae params: ") + name + " is not finite");
  };
  check(w_enc, config.d_hidden, config.d_model, "w_enc");
  check(b_enc, 1, config.d_hidden, "b_enc");
  check(w_dec, config.d_model, config.d_hidden, "w_dec");
  check(b_dec, 1, config.d_model, "b_dec");
}

void apply_top_k(std::span<double> z, std::size_t k) {
  std::vector<std::size_t> positive;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (z[j] > 0.0) positive.push_back(j);
    else z[j] = 0.0;
  }
  if (positive.size() <= k) return;
  std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(k), positive.end(),
                   [&z](std::size_t a, std::size_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });
  for (auto it = positive.begin() + static_cast<std::ptrdiff_t>(k); it != positive.end(); ++it) z[*it] = 0.0;
}

namespace {

void encode_into(const SaeParams& sae, std::span<const double> h, std::span<double> z) {
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double pre = dot(sae.w_enc.row(j), h) + sae.b_enc(0, j);
    z[j] = pre > 0.0 ? pre : 0.0;
  }
  if (sae.config.mode.kind == SparsityMode::Kind::top_k) apply_top_k(z, sae.config.mode.k);
}

// Decoder columns as rows, so decoding is a sum of contiguous axpys.
void decode_into(const Matrix& w_dec_t, const Matrix& b_dec, std::span<const double> z,
                 std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z[j] != 0.0) axpy(z[j], w_dec_t.row(j), out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b_dec(0, i);
}

void require_width(const SaeParams& sae, std::span<const double> h) {
  require(h.size() == sae.config.d_model, "sae: input width does not match d_model");
}

}  // namespace

std::vector<double> encode(const SaeParams& sae, std::span<const double> h) {
  require_width(sae, h);
  std::vector<double> z(sae.config.d_hidden);
  encode_into(sae, h, z);
  return z;
}

std::vector<double> decode(const SaeParams& sae, std::span<const double> z) {
  require(z.size() == sae.config.d_hidden, "sae: code width does not match d_hidden");
  std::vector<double> out(sae.config.d_model);
  decode_into(sae.w_dec.transposed(), sae.b_dec, z, out);
  return out;
}

std::vector<double> route(const SaeParams& sae, std::span<const double> h) {
  return decode(sae, encode(sae, h));
}

SaeRouting::SaeRouting(std::shared_ptr<const SaeParams> sae) : sae_(std::move(sae)) {
  require(sae_ != nullptr, "sae routing: null parameters");
  sae_->validate();
  w_dec_t_ = sae_->w_dec.transposed();
}

void SaeRouting::apply(std::span<const double> h, std::span<double> out) const {
  std::vector<double> z(sae_->config.d_hidden);
  encode_into(*sae_, h, z);
  decode_into(w_dec_t_, sae_->b_dec, z, out);
}

void SaeRouting::jvp(std::span<const double> h, std::span<const double> tangent,
                     std::span<double> out) const {
  std::vector<double> z(sae_->config.d_hidden);
  encode_into(*sae_, h, z);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z[j] > 0.0) axpy(dot(sae_->w_enc.row(j), tangent), w_dec_t_.row(j), out);
}

void SaeRouting::vjp(std::span<const double> h, std::span<const double> cotangent,
                     std::span<double> out) const {
  std::vector<double> z(sae_->config.d_hidden);
  encode_into(*sae_, h, z);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z[j] > 0.0) axpy(dot(w_dec_t_.row(j), cotangent), sae_->w_enc.row(j), out);
}

namespace {

void normalize_decoder_columns(Matrix& w_dec) {
  std::vector<double> norms(w_dec.cols(), 0.0);
  for (std::size_t i = 0; i < w_dec.rows(); ++i)
    for (std::size_t j = 0; j < w_dec.cols(); ++j) norms[j] += w_dec(i, j) * w_dec(i, j);
  for (double& n : norms) n = n > 0.0 ? 1.0 / std::sqrt(n) : 0.0;
  for (std::size_t i = 0; i < w_dec.rows(); ++i)
    for (std::size_t j = 0; j < w_dec.cols(); ++j) w_dec(i, j) *= norms[j];
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<Matrix> m, v;

  void step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr) {
    if (m.empty()) {
      for (const Matrix* p : params) {
        m.emplace_back(p->rows(), p->cols());
        v.emplace_back(p->rows(), p->cols());
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto pv = params[i]->values();
      auto gv = grads[i].values();
      auto mv = m[i].values();
      auto vv = v[i].values();
      for (std::size_t e = 0; e < pv.size(); ++e) {
        mv[e] = beta1 * mv[e] + (1.0 - beta1) * gv[e];
        vv[e] = beta2 * vv[e] + (1.0 - beta2) * gv[e] * gv[e];
        pv[e] -= lr * (mv[e] / c1) / (std::sqrt(vv[e] / c2) + eps);
      }
    }
  }
};

void require_activations(const Matrix& activations, std::size_t d_model) {
  require(activations.rows() >= 1, "sae: activation set is empty");
  require(activations.cols() == d_model, "sae: activation width does not match d_model");
  require(activations.all_finite(), "sae: activations are not finite");
}

}  // namespace

SaeParams initialize_sae(const SaeConfig& config, const Matrix& activations) {
  SaeParams p = SaeParams::zeros(config);
  require_activations(activations, config.d_model);
  RngStream rng(config.seed, 1);
  for (double& v : p.w_dec.values()) v = rng.gaussian();
  normalize_decoder_columns(p.w_dec);
  p.w_enc = p.w_dec.transposed();
  for (std::size_t r = 0; r < activations.rows(); ++r) axpy(1.0, activations.row(r), p.b_dec.row(0));
  p.b_dec *= 1.0 / static_cast<double>(activations.rows());
  return p;
}

SaeParams train_sae(const SaeConfig& config, const Matrix& activations,
                    const SaeTrainOptions& options, SaeTrainReport* report) {
  SaeParams p = initialize_sae(config, activations);
  require(options.batch_size >= 1, "train_sae: batch_size must be positive");
  require(options.learning_rate > 0.0, "train_sae: learning_rate must be positive");
  const bool l1 = config.mode.kind == SparsityMode::Kind::l1;
  const std::size_t n = activations.rows(), d = config.d_model, dh = config.d_hidden;
  std::vector<std::size_t> order(n);
  Adam adam;
  SaeParams stable = p;
  const std::size_t total_steps = options.epochs * ((n + options.batch_size - 1) / options.batch_size);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = RngStream(config.seed, 2).substream(epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t b = std::min(options.batch_size, n - start);
      Matrix h(b, d);
      for (std::size_t r = 0; r < b; ++r) {
        auto src = activations.row(order[start + r]);
        std::copy(src.begin(), src.end(), h.row(r).begin());
      }
      Matrix z = matmul_bt(h, p.w_enc);
      for (std::size_t r = 0; r < b; ++r) {
        auto zr = z.row(r);
        for (std::size_t j = 0; j < dh; ++j) zr[j] = std::max(0.0, zr[j] + p.b_enc(0, j));
        if (!l1) apply_top_k(zr, config.mode.k);
      }
      Matrix recon = matmul(z, p.w_dec.transposed());
      const double inv_b = 1.0 / static_cast<double>(b);
      Matrix g_recon(b, d);
      double loss = 0.0;
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
          const double e = recon(r, i) + p.b_dec(0, i) - h(r, i);
          loss += e * e;
          g_recon(r, i) = 2.0 * e * inv_b;
        }
        if (l1)
          for (double v : z.row(r)) loss += config.mode.lambda * v;
      }
      loss *= inv_b;
      if (!std::isfinite(loss))
        throw SaeTrainingFailure("train_sae: loss diverged in epoch " + std::to_string(epoch), stable);
      epoch_loss += loss * static_cast<double>(b);

      Matrix g_pre = matmul(g_recon, p.w_dec);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < dh; ++j) {
          if (z(r, j) > 0.0) {
            if (l1) g_pre(r, j) += config.mode.lambda * inv_b;
          } else {
            g_pre(r, j) = 0.0;
          }
        }
      std::vector<Matrix> grads;
      grads.push_back(matmul_at(g_pre, h));
      grads.emplace_back(1, dh);
      grads.push_back(matmul_at(g_recon, z));
      grads.emplace_back(1, d);
      for (std::size_t r = 0; r < b; ++r) {
        axpy(1.0, g_pre.row(r), grads[1].row(0));
        axpy(1.0, g_recon.row(r), grads[3].row(0));
      }
      Matrix* params[] = {&p.w_enc, &p.b_enc, &p.w_dec, &p.b_dec};
      const double progress = static_cast<double>(step++) / static_cast<double>(total_steps);
      adam.step(params, grads, options.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
      if (l1) normalize_decoder_columns(p.w_dec);
    }
    const bool finite = p.w_enc.all_finite() && p.b_enc.all_finite() && p.w_dec.all_finite() &&
                        p.b_dec.all_finite();
    if (!finite)
      throw SaeTrainingFailure("train_sae: parameters diverged in epoch " + std::to_string(epoch), stable);
    stable = p;
    if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return p;
}

double measure_l0(const SaeParams& sae, const Matrix& activations) {
  require_activations(activations, sae.config.d_model);
  std::vector<double> z(sae.config.d_hidden);
  double total = 0.0;
  for (std::size_t r = 0; r < activations.rows(); ++r) {
    encode_into(sae, activations.row(r), z);
    total += static_cast<double>(std::count_if(z.begin(), z.end(), [](double v) { return v > 0.0; }));
  }
  return total / static_cast<double>(activations.rows());
}

double reconstruction_r2(const SaeParams& sae, const Matrix& activations) {
  require_activations(activations, sae.config.d_model);
  const std::size_t n = activations.rows(), d = activations.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) axpy(1.0, activations.row(r), mean);
  for (double& m : mean) m /= static_cast<double>(n);
  SaeRouting routing(std::make_shared<SaeParams>(sae));
  std::vector<double> out(d);
  double sse = 0.0, sst = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto h = activations.row(r);
    routing.apply(h, out);
    for (std::size_t i = 0; i < d; ++i) {
      sse += (h[i] - out[i]) * (h[i] - out[i]);
      sst += (h[i] - mean[i]) * (h[i] - mean[i]);
    }
  }
  if (sst == 0.0) throw DegenerateInput("reconstruction_r2: activations have zero variance");
  return 1.0 - sse / sst;
}

void save_sae(const std::filesystem::path& dir, const SaeParams& sae, const SaeArtifactInfo& info) {
  sae.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write sae manifest in " + dir.string());
  manifest << std::setprecision(17) << "format_version 1\n"
           << "kind sae\n"
           << "d_model " << sae.config.d_model << "\n"
           << "d_hidden " << sae.config.d_hidden << "\n"
           << "mode " << sae.config.mode.describe() << "\n"
           << "seed " << sae.config.seed << "\n"
           << "layer " << info.layer << "\n"
           << "input_normalization none\n"
           << "corpus_hash " << info.corpus_hash << "\n"
           << "measured_l0 " << info.measured_l0 << "\n";
  const std::pair<const char*, const Matrix*> tensors[] = {
      {"w_enc", &sae.w_enc}, {"b_enc", &sae.b_enc}, {"w_dec", &sae.w_dec}, {"b_dec", &sae.b_dec}};
  for (const auto& [name, m] : tensors) {
    manifest << "tensor " << name << " " << name << ".bin\n";
    save_matrix(dir / (std::string(name) + ".bin"), *m);
  }
  if (!manifest) throw IoError("failed writing sae manifest in " + dir.string());
}

SaeParams load_sae(const std::filesystem::path& dir, SaeArtifactInfo* info) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("no sae manifest in " + dir.string());
  SaeConfig c;
  SaeArtifactInfo meta;
  std::map<std::string, std::string> files;
  int version = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format_version") ls >> version;
    else if (key == "d_model") ls >> c.d_model;
    else if (key == "d_hidden") ls >> c.d_hidden;
    else if (key == "seed") ls >> c.seed;
    else if (key == "layer") ls >> meta.layer;
    else if (key == "corpus_hash") ls >> meta.corpus_hash;
    else if (key == "measured_l0") ls >> meta.measured_l0;
    else if (key == "mode") {
      std::string kind;
      ls >> kind;
      if (kind == "l1") {
        c.mode.kind = SparsityMode::Kind::l1;
        ls >> c.mode.lambda;
      } else if (kind == "topk") {
        c.mode.kind = SparsityMode::Kind::top_k;
        ls >> c.mode.k;
      } else {
        throw IoError("sae manifest: unknown mode " + kind);
      }
    } else if (key == "tensor") {
      std::string name, file;
      ls >> name >> file;
      files[name] = file;
    }
  }
  if (version != 1) throw IoError("unsupported sae format in " + dir.string());
  SaeParams p = SaeParams::zeros(c);
  const std::pair<const char*, Matrix*> tensors[] = {
      {"w_enc", &p.w_enc}, {"b_enc", &p.b_enc}, {"w_dec", &p.w_dec}, {"b_dec", &p.b_dec}};
  for (const auto& [name, m] : tensors) {
    auto it = files.find(name);
    if (it == files.end()) throw IoError(std::string("sae manifest lacks tensor ") + name);
    *m = load_matrix(dir / it->second);
  }
  p.validate();
  if (info) *info = meta;
  return p;
}

}  // namespace saelab
