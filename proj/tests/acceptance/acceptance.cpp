// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
// the number of failures.
//
//   saelab_acceptance <out-dir> [criterion ids...]
//
// Criteria 9 and 10 run the desk pipeline twice under <out-dir>.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "saelab/analysis.hpp"
#include "saelab/evaluation.hpp"
#include "saelab/harness.hpp"
#include "saelab/stats.hpp"
#include "support/finite_diff.hpp"
#include "support/reference_lm.hpp"
#include "support/synthetic_sae.hpp"

using namespace saelab;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kRoutingLogitTol = 1e-12;
constexpr double kOracleLossTol = 1e-12;
constexpr double kSaeR2 = 0.95;
constexpr double kSaeL0Band = 0.30;
constexpr double kStatsTol = 1e-12;
constexpr double kCoverageLow = 0.90, kCoverageHigh = 0.98;
constexpr double kRankOneTol = 1e-9;
constexpr double kScaleTol = 1e-9;
constexpr double kVarSigmaTol = 1e-8;
constexpr double kAsrGap = 0.20;
constexpr double kLossP = 0.1;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void within_budget(Outcome& o, double elapsed, double budget) {
  o.require(elapsed < budget, "runtime " + fmt("%.1f", elapsed) + " s exceeds " + fmt("%.0f", budget) + " s");
}

TransformerParams perturbed_model(const ModelConfig& c, std::uint64_t seed) {
  RngStream rng(seed, 0);
  TransformerParams p = TransformerParams::initialize(c, rng);
  for (auto& b : p.blocks) {
    for (double& v : b.b_up.values()) v = 0.1 * rng.gaussian();
    for (double& v : b.b_down.values()) v = 0.1 * rng.gaussian();
    for (double& v : b.attn_norm.values()) v = 1.0 + 0.2 * rng.gaussian();
  }
  for (double& v : p.output_bias.values()) v = 0.1 * rng.gaussian();
  return p;
}

ModelConfig small_config(std::size_t d) {
  ModelConfig c;
  c.vocab_size = 32;
  c.d_model = d;
  c.n_layers = 2;
  c.n_heads = 4;
  c.context_len = 40;
  return c;
}

// ---------------------------------------------------------------- 1
Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const auto cfg = small_config(32);
  double worst_base = 0.0, worst_sae = 0.0;
  std::size_t coords = 0;
  RngStream rng(101, 0);
  for (std::uint64_t inst = 0; inst < 5; ++inst) {
    const auto params = perturbed_model(cfg, 200 + inst);
    RngStream srng(300 + inst, 9);
    auto sae = std::make_shared<SaeParams>(SaeParams::zeros({32, 128, SparsityMode::l1(0.1), inst}));
    sae->w_enc = (1.0 / std::sqrt(32.0)) * rng_draw(srng, 128, 32, Distribution::gaussian);
    sae->w_dec = (1.0 / std::sqrt(128.0)) * rng_draw(srng, 32, 128, Distribution::gaussian);
    sae->b_enc = 0.1 * rng_draw(srng, 1, 128, Distribution::gaussian);
    sae->b_dec = 0.1 * rng_draw(srng, 1, 32, Distribution::gaussian);
    const HookList hooks{{1, std::make_shared<SaeRouting>(sae)}};
    TokenSequence prompt = testing::random_text_tokens(rng, 5, cfg.vocab_size);
    prompt.insert(prompt.begin(), tokens::bos);
    const auto suffix = testing::random_text_tokens(rng, 4, cfg.vocab_size);
    const auto target = testing::random_text_tokens(rng, 3, cfg.vocab_size);
    const auto b = testing::check_suffix_gradient(params, prompt, suffix, target, {}, rng, 5);
    const auto s = testing::check_suffix_gradient(params, prompt, suffix, target, hooks, rng, 5);
    worst_base = std::max(worst_base, b.max_relative_error);
    worst_sae = std::max(worst_sae, s.max_relative_error);
    coords += b.coordinates;
  }
  o.require(coords == 25, "expected 25 coordinates");
  o.require(worst_base <= kGradRelTol, "base rel err " + fmt("%.3g", worst_base));
  o.require(worst_sae <= kGradRelTol, "SAE rel err " + fmt("%.3g", worst_sae));
  o.note("max rel err base " + fmt("%.2e", worst_base) + ", SAE " + fmt("%.2e", worst_sae));
  within_budget(o, seconds_since(t0), 60);
  return o;
}

// ---------------------------------------------------------------- 2
Outcome routing_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const auto cfg = small_config(16);
  const auto params = perturbed_model(cfg, 21);
  RngStream rng(22, 0);
  TokenSequence toks = testing::random_text_tokens(rng, 14, cfg.vocab_size);
  toks.insert(toks.begin(), tokens::bos);

  // ReLU(h) - ReLU(-h) = h: an exact identity expressed as an SAE.
  const std::size_t d = cfg.d_model;
  auto sae = std::make_shared<SaeParams>(SaeParams::zeros({d, 2 * d, SparsityMode::l1(0.1), 0}));
  for (std::size_t i = 0; i < d; ++i) {
    sae->w_enc(i, i) = 1.0;
    sae->w_enc(d + i, i) = -1.0;
    sae->w_dec(i, i) = 1.0;
    sae->w_dec(i, d + i) = -1.0;
  }
  const Matrix plain = forward(params, toks, {}).logits;
  double worst = 0.0;
  for (std::size_t l = 0; l <= cfg.n_layers; ++l) {
    const HookList hooks{{l, std::make_shared<SaeRouting>(sae)}};
    const Matrix routed = forward(params, toks, hooks).logits;
    for (std::size_t i = 0; i < plain.size(); ++i)
      worst = std::max(worst, std::abs(routed.values()[i] - plain.values()[i]));
  }
  o.require(worst <= kRoutingLogitTol, "identity SAE moved a logit by " + fmt("%.3g", worst));

  std::set<std::size_t> layers;
  for (std::size_t l = 0; l <= cfg.n_layers; ++l) layers.insert(l);
  const auto trace = forward(params, toks, {}, layers);
  std::size_t mismatches = 0;
  for (std::size_t l = 0; l <= cfg.n_layers; ++l) {
    const auto ref = reference::run_blocks(params, reference::embed(params, toks), 0, l);
    const Matrix& got = trace.residuals.at(l);
    for (std::size_t r = 0; r < got.rows(); ++r)
      for (std::size_t c = 0; c < got.cols(); ++c) mismatches += got(r, c) != ref[r][c];
    // Every prefix recomputed on its own yields the same rows.
    for (std::size_t len = 1; len <= toks.size(); len += 3) {
      const TokenSequence prefix(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(len));
      const Matrix p = forward(params, prefix, {}, {l}).residuals.at(l);
      for (std::size_t r = 0; r < len; ++r)
        for (std::size_t c = 0; c < p.cols(); ++c) mismatches += p(r, c) != got(r, c);
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " residual entries differ");
  o.note("max logit change " + fmt("%.1e", worst));
  within_budget(o, seconds_since(t0), 10);
  return o;
}

// ---------------------------------------------------------------- 3
Outcome attack_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 32;
  RngStream mrng(31, 0);
  auto model = std::make_shared<TransformerParams>(TransformerParams::initialize(c, mrng));
  RngStream rng(32, 0);
  std::size_t gcg_ok = 0, beast_ok = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    AttackInstance inst;
    inst.id = "p" + std::to_string(i);
    inst.model_id = "oracle";
    inst.model = model;
    inst.prompt = testing::random_text_tokens(rng, 4, c.vocab_size);
    inst.prompt.insert(inst.prompt.begin(), tokens::bos);
    inst.target = testing::random_text_tokens(rng, 3, c.vocab_size);
    inst.stream = i;

    TokenId best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t v = tokens::num_special; v < c.vocab_size; ++v) {
      const TokenSequence s{static_cast<TokenId>(v)};
      const double loss = target_loss(*model, inst.prompt, s, inst.target, {});
      if (loss < best_loss) {
        best_loss = loss;
        best = static_cast<TokenId>(v);
      }
    }

    GcgConfig g;
    g.steps = 2;
    g.suffix_len = 1;
    g.topk = c.vocab_size;
    g.batch = c.vocab_size;
    g.filler = tokens::num_special;
    const auto rg = run_gcg(inst, g, 0);
    gcg_ok += rg.suffix == TokenSequence{best} && std::abs(rg.final_loss - best_loss) <= kOracleLossTol;

    BeastConfig b;
    b.k1 = 1;
    b.k2 = c.vocab_size;
    b.depth = 1;
    const auto rb = run_beast(inst, b);
    beast_ok += rb.suffix == TokenSequence{best} && std::abs(rb.final_loss - best_loss) <= kOracleLossTol;
  }
  o.require(gcg_ok == 10, "GCG matched " + std::to_string(gcg_ok) + "/10");
  o.require(beast_ok == 10, "BEAST matched " + std::to_string(beast_ok) + "/10");
  o.note("GCG " + std::to_string(gcg_ok) + "/10, BEAST " + std::to_string(beast_ok) + "/10");
  within_budget(o, seconds_since(t0), 120);
  return o;
}

// ---------------------------------------------------------------- 5
Outcome sae_quality() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  constexpr std::size_t active = 5;
  RngStream rng(7, 0);
  testing::SparseDictionary dict(32, 32, active, rng);
  const Matrix train = dict.sample(4000, rng), held = dict.sample(1000, rng);
  SaeTrainOptions opt;
  opt.epochs = 30;
  opt.learning_rate = 1e-2;
  SaeConfig cfg{32, 32, SparsityMode::l1(0.1), 3};
  const SaeParams p = train_sae(cfg, train, opt);
  const double r2 = reconstruction_r2(p, held);
  const double l0 = measure_l0(p, held);
  o.require(r2 >= kSaeR2, "R2 " + fmt("%.4f", r2));
  o.require(std::abs(l0 - active) <= kSaeL0Band * active, "L0 " + fmt("%.2f", l0));

  std::vector<double> l0s{l0};
  for (double lambda : {0.3, 1.0, 3.0}) {
    cfg.mode = SparsityMode::l1(lambda);
    l0s.push_back(measure_l0(train_sae(cfg, train, opt), held));
  }
  std::string grid;
  for (std::size_t i = 0; i < l0s.size(); ++i) {
    grid += (i ? "," : "") + fmt("%.2f", l0s[i]);
    if (i) o.require(l0s[i] <= l0s[i - 1], "L0 rose along the lambda grid");
  }
  o.note("R2 " + fmt("%.4f", r2) + ", L0 " + fmt("%.2f", l0) + " (target 5), grid L0 " + grid);
  within_budget(o, seconds_since(t0), 180);
  return o;
}

// ---------------------------------------------------------------- 6
Outcome statistics_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const std::vector<double> x{1, 2, 3, 4, 5, 6}, y{7, 8, 9, 10, 11, 12};
  const double mw = mann_whitney_u(x, y).p_value;
  o.require(std::abs(mw - 2.0 / 924.0) <= kStatsTol, "Mann-Whitney p " + fmt("%.15g", mw));
  const double w = wilcoxon_signed_rank(std::vector<double>{1, 2, 3, 4, 5}).p_value;
  o.require(std::abs(w - 0.0625) <= kStatsTol, "Wilcoxon p " + fmt("%.15g", w));

  constexpr int reps = 1000;
  int covered = 0;
  for (int rep = 0; rep < reps; ++rep) {
    RngStream draw(61, static_cast<std::uint64_t>(rep));
    std::vector<double> sample(30);
    for (double& v : sample) v = draw.gaussian();
    const auto ci = bootstrap_ci_median(sample, RngStream(62, static_cast<std::uint64_t>(rep)), 1000);
    covered += ci.lower <= 0.0 && 0.0 <= ci.upper;
  }
  const double coverage = static_cast<double>(covered) / reps;
  o.require(coverage >= kCoverageLow && coverage <= kCoverageHigh, "coverage " + fmt("%.3f", coverage));
  o.note("MW p " + fmt("%.6f", mw) + ", Wilcoxon p " + fmt("%.4f", w) + ", coverage " + fmt("%.3f", coverage));
  within_budget(o, seconds_since(t0), 120);
  return o;
}

// ---------------------------------------------------------------- 7
Outcome transfer_protocol() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  ModelRegistry reg;
  for (std::uint64_t i = 0; i < 6; ++i) {
    ModelConfig c;
    c.vocab_size = 32;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.context_len = 24;
    RngStream rng(70 + i, 0);
    auto model = std::make_shared<TransformerParams>(TransformerParams::initialize(c, rng));
    auto sae = std::make_shared<SaeParams>(SaeParams::zeros(SaeConfig::standard(8, SparsityMode::l1(0.1), i)));
    reg.add({"m" + std::to_string(i), model, sae, 1});
  }
  std::vector<TransferKey> keys;
  for (const auto& id : reg.ids())
    for (Configuration c : {Configuration::base, Configuration::sae}) keys.push_back({id, c});
  const std::vector<PromptCase> prompts{{"p0", {tokens::bos, 10, 11}, {12}}, {"p1", {tokens::bos, 13}, {14}}};
  std::vector<BankedSuffix> bank;
  for (const auto& k : keys)
    for (const auto& p : prompts) bank.push_back({p.id, k, {20, 21}});
  const auto matrix = evaluate_transfer(bank, prompts, reg, keys, keys, RefusalDetector{}, {4});
  std::map<TransferGrouping, std::size_t> want{{TransferGrouping::base_to_base, 30},
                                               {TransferGrouping::sae_to_sae, 30},
                                               {TransferGrouping::base_to_sae, 36},
                                               {TransferGrouping::sae_to_base, 36}};
  std::string counts;
  for (auto g : all_groupings()) {
    const auto s = aggregate_transfer(matrix, g, RngStream(71, 0), 200);
    o.require(s.n == want[g], to_string(g) + " evaluated " + std::to_string(s.n));
    for (const auto& [a, b] : s.pairs)
      if (want[g] == 30) o.require(a != b, to_string(g) + " included a same-model pair");
    counts += (counts.empty() ? "" : ", ") + to_string(g) + " " + std::to_string(s.n);
  }
  o.note(counts);
  within_budget(o, seconds_since(t0), 5);
  return o;
}

// ---------------------------------------------------------------- 8
double rank1_energy_fraction(const Matrix& g) {
  std::vector<double> v(g.cols(), 1.0);
  for (std::size_t it = 0; it < 5000; ++it) {
    std::vector<double> gv(g.rows(), 0.0), next(g.cols(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gv[i] += g(i, j) * v[j];
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) next[j] += g(i, j) * gv[i];
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : next) x /= norm;
    v = next;
  }
  double top = 0.0, total = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double gv = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) {
      gv += g(i, j) * v[j];
      total += g(i, j) * g(i, j);
    }
    top += gv * gv;
  }
  return top / total;
}

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)}); }

Outcome spectral_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  RngStream rng(81, 0);
  double worst_rank1 = 0.0, worst_var = 0.0;
  std::size_t scale_failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.index(6), c = 1 + rng.index(6);
    const Matrix u = rng_draw(rng, r, 1, Distribution::gaussian), v = rng_draw(rng, 1, c, Distribution::gaussian);
    worst_rank1 = std::max(worst_rank1, std::abs(snapshot_spectrum(matmul(u, v)).r_eff - 1.0));

    const Matrix g = rng_draw(rng, r, c, Distribution::gaussian), h = rng_draw(rng, r, c, Distribution::gaussian);
    const double alpha = 1e-3 + 100.0 * rng.uniform();
    Matrix gs = g, hs = h;
    gs *= alpha;
    hs *= alpha;
    const auto a = spectral_trace(std::vector<Matrix>{g, h}, {});
    const auto b = spectral_trace(std::vector<Matrix>{gs, hs}, {});
    const bool same = close(a.r_eff, b.r_eff, kScaleTol) && close(a.var_sigma1, b.var_sigma1, kScaleTol) &&
                      close(a.kappa, b.kappa, kScaleTol) && close(a.spectral_gap, b.spectral_gap, kScaleTol) &&
                      close(a.mean_cosine, b.mean_cosine, kScaleTol);
    scale_failures += !same;
    worst_var = std::max(worst_var, std::abs(snapshot_spectrum(g).var_sigma1 - rank1_energy_fraction(g)));
  }
  o.require(worst_rank1 <= kRankOneTol, "rank-1 r_eff off by " + fmt("%.3g", worst_rank1));
  o.require(scale_failures == 0, std::to_string(scale_failures) + " scaling mismatches");
  o.require(worst_var <= kVarSigmaTol, "Var(sigma1) off by " + fmt("%.3g", worst_var));
  o.note("rank-1 err " + fmt("%.1e", worst_rank1) + ", Var(sigma1) err " + fmt("%.1e", worst_var));
  within_budget(o, seconds_since(t0), 30);
  return o;
}

// ---------------------------------------------------------------- 4, 9, 10
struct DeskRuns {
  fs::path out;
  std::optional<RunManifest> first, second;
  double first_seconds = 0.0, second_seconds = 0.0;

  const RunManifest& run(int which) {
    auto& slot = which == 0 ? first : second;
    if (!slot) {
      const fs::path root = out / (which == 0 ? "desk-a" : "desk-b");
      fs::remove_all(root);
      const auto t0 = std::chrono::steady_clock::now();
      slot = run_pipeline(ExperimentConfig::desk(), root);
      (which == 0 ? first_seconds : second_seconds) = seconds_since(t0);
      std::printf("  desk pipeline %c: %.0f s, %s\n", which == 0 ? 'a' : 'b',
                  which == 0 ? first_seconds : second_seconds, slot->run_dir.string().c_str());
      std::fflush(stdout);
    }
    return *slot;
  }
};

std::vector<Json> results(const RunManifest& m) {
  std::ifstream in(m.run_dir / "results.jsonl");
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(Json::parse(line));
  return rows;
}

void stages_ok(Outcome& o, const RunManifest& m) {
  for (const auto& s : m.stages) o.require(s.status == "ok", s.name + " " + s.status + ": " + s.error);
}

Outcome monotonicity(DeskRuns& desk) {
  Outcome o;
  const auto& m = desk.run(0);
  stages_ok(o, m);
  std::size_t runs = 0, violations = 0;
  for (const auto& r : results(m)) {
    const bool gcg_run = (r["type"] == "attack_run" || r["type"] == "ablation_run") && r["attack"] == "gcg" &&
                         r.value("configuration", "SAE") != "PROMPT";
    if (!gcg_run) continue;
    ++runs;
    if (r.contains("loss_trajectory")) {
      const auto t = r["loss_trajectory"].get<std::vector<double>>();
      for (std::size_t i = 1; i < t.size(); ++i) violations += t[i] > t[i - 1];
    } else {
      violations += !r["non_increasing"].get<bool>();
    }
  }
  o.require(runs > 0, "no GCG runs found");
  o.require(violations == 0, std::to_string(violations) + " violations");
  o.note(std::to_string(runs) + " GCG runs, " + std::to_string(violations) + " violations");
  return o;
}

Outcome desk_directional(DeskRuns& desk) {
  Outcome o;
  const auto& m = desk.run(0);
  stages_ok(o, m);
  const auto rows = results(m);

  // (a) per model, GCG BASE ASR exceeds PROMPT ASR by at least 20 points.
  std::map<std::string, std::map<std::string, double>> rate;
  for (const auto& r : rows)
    if (r["type"] == "asr" && r["attack"] == "gcg")
      rate[r["model_id"]][r["configuration"]] = r["asr"]["rate"].get<double>();
  o.require(!rate.empty(), "(a) no ASR records");
  for (const auto& [id, by] : rate) {
    const double gap = by.at("BASE") - by.at("PROMPT");
    o.require(gap >= kAsrGap, "(a) " + id + " BASE-PROMPT gap " + fmt("%.2f", gap));
    o.note("(a) " + id + " PROMPT " + fmt("%.2f", by.at("PROMPT")) + " BASE " + fmt("%.2f", by.at("BASE")) + " SAE " +
           fmt("%.2f", by.at("SAE")));
  }

  // (b) pooled final GCG loss, SAE above BASE, one-sided Wilcoxon.
  bool found_b = false;
  for (const auto& r : rows)
    if (r["type"] == "loss_comparison" && r["attack"] == "gcg" && r["scope"] == "pooled") {
      found_b = true;
      const double b = r["base_mean"].get<double>(), s = r["sae_mean"].get<double>();
      const double p = r["p_greater"].get<double>();
      o.require(s > b, "(b) mean SAE loss " + fmt("%.4f", s) + " not above BASE " + fmt("%.4f", b));
      o.require(p < kLossP, "(b) one-sided p " + fmt("%.4f", p));
      o.note("(b) loss BASE " + fmt("%.4f", b) + " SAE " + fmt("%.4f", s) + " p " + fmt("%.4g", p));
    }
  o.require(found_b, "(b) no pooled loss comparison");

  // (c) pooled inter-step gradient cosine, SAE above BASE.
  bool found_c = false;
  for (const auto& r : rows)
    if (r["type"] == "spectral_comparison" && r["scope"] == "pooled" && r.contains("rows"))
      for (const auto& c : r["rows"])
        if (c["metric"] == "cos") {
          found_c = true;
          const double b = c["base_mean"].get<double>(), s = c["sae_mean"].get<double>();
          o.require(s > b, "(c) mean cosine SAE " + fmt("%.4f", s) + " not above BASE " + fmt("%.4f", b));
          o.note("(c) cos BASE " + fmt("%.4f", b) + " SAE " + fmt("%.4f", s));
        }
  o.require(found_c, "(c) no pooled cosine comparison");
  within_budget(o, desk.first_seconds, 1800);
  o.note("runtime " + fmt("%.0f", desk.first_seconds) + " s");
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(DeskRuns& desk) {
  Outcome o;
  const auto& a = desk.run(0);
  const auto& b = desk.run(1);
  stages_ok(o, b);
  const std::string ra = slurp(a.run_dir / "results.jsonl"), rb = slurp(b.run_dir / "results.jsonl");
  o.require(!ra.empty(), "empty results log");
  o.require(ra == rb, "results logs differ");
  o.require(a.artifacts == b.artifacts, "artifact lists differ");
  o.note(std::to_string(ra.size()) + " bytes compared");
  within_budget(o, desk.first_seconds + desk.second_seconds, 3600);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  DeskRuns desk;
  desk.out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance-out");
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"routing correctness", routing_correctness},
      {"attack oracles", attack_oracles},
      {"monotonicity", [&] { return monotonicity(desk); }},
      {"SAE quality", sae_quality},
      {"statistics oracles", statistics_oracles},
      {"transfer protocol fidelity", transfer_protocol},
      {"spectral properties", spectral_properties},
      {"desk-scale directional experiment", [&] { return desk_directional(desk); }},
      {"determinism", [&] { return determinism(desk); }},
  };
  // The pipeline-backed criteria go last so the quick ones report first.
  const std::vector<int> order{1, 2, 3, 5, 6, 7, 8, 4, 9, 10};

  int failures = 0;
  for (int id : order) {
    if (!only.empty() && !only.count(id)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failures += !out.pass;
    std::printf("criterion %2d %-34s %s  %s\n", id, name.c_str(), out.pass ? "PASS" : "FAIL", out.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
