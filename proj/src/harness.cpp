// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "records.hpp"
#include "saelab/analysis.hpp"
#include "saelab/evaluation.hpp"
#include "saelab/stats.hpp"

#ifndef SAELAB_VERSION_STRING
#define SAELAB_VERSION_STRING "unknown"
#endif

namespace saelab {

namespace fs = std::filesystem;
using records::Json;

std::string code_version() { return SAELAB_VERSION_STRING; }

std::size_t worker_count() {
  if (const char* env = std::getenv("SAELAB_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::gen_corpus: return "gen-corpus";
    case Stage::train_lm: return "train-lm";
    case Stage::train_sae: return "train-sae";
    case Stage::attack: return "attack";
    case Stage::transfer: return "transfer";
    case Stage::analyze: return "analyze";
    case Stage::stats: return "stats";
  }
  return "?";
}

std::vector<Stage> all_stages() {
  return {Stage::gen_corpus, Stage::train_lm, Stage::train_sae, Stage::attack,
          Stage::transfer,   Stage::analyze,  Stage::stats};
}

Stage parse_stage(const std::string& text) {
  for (Stage s : all_stages())
    if (to_string(s) == text) return s;
  throw InvalidInput("unknown stage '" + text + "'");
}

bool RunManifest::ok() const {
  return std::all_of(stages.begin(), stages.end(), [](const StageRecord& s) { return s.status == "ok"; });
}

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

fs::path run_directory(const ExperimentConfig& config, const fs::path& out_root) { return out_root / config.hash(); }

namespace {

// ---------------------------------------------------------------- helpers

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RngStream stream_for(const ExperimentConfig& c, const std::string& label) {
  return RngStream(c.seed, fnv1a(label));
}

std::string lambda_label(double l) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", l);
  return buf;
}

std::string sae_variant(std::size_t layer, double lambda) {
  return "layer" + std::to_string(layer) + "-lambda" + lambda_label(lambda);
}

std::vector<int> token_list(const TokenSequence& t) { return {t.begin(), t.end()}; }

TokenSequence token_seq(const Json& j) {
  TokenSequence t;
  for (const auto& v : j) t.push_back(v.get<TokenId>());
  return t;
}

const std::vector<Configuration>& protocol() {
  static const std::vector<Configuration> c{Configuration::prompt, Configuration::base, Configuration::sae};
  return c;
}

struct Run {
  const ExperimentConfig& cfg;
  fs::path dir;

  fs::path log(Stage s) const { return dir / "logs" / (to_string(s) + ".jsonl"); }
  fs::path model_dir(const std::string& id) const { return dir / "models" / id; }
  fs::path sae_dir(const std::string& id, const std::string& variant) const { return dir / "saes" / id / variant; }

  RefusalCorpus corpus() const { return load_corpus(dir / "corpus.tsv"); }

  std::shared_ptr<const TransformerParams> model(const std::string& id) const {
    const fs::path p = model_dir(id);
    if (!fs::exists(p)) throw IoError("missing model checkpoint " + p.string() + " (run train-lm)");
    return std::make_shared<TransformerParams>(load_model(p));
  }

  std::vector<Json> read(Stage s) const {
    const fs::path p = log(s);
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run " + to_string(s) + ")");
    return records::read_jsonl(p);
  }

  /// Selected SAE per model: (variant, layer, lambda).
  std::map<std::string, Json> selections() const {
    std::map<std::string, Json> out;
    for (const auto& r : records::of_type(read(Stage::train_sae), "sae_selection"))
      out[r["model_id"].get<std::string>()] = r;
    return out;
  }

  ModelRegistry registry() const {
    const auto sel = selections();
    ModelRegistry reg;
    for (const auto& m : cfg.models) {
      auto it = sel.find(m.id);
      if (it == sel.end()) throw IoError("no SAE selected for model " + m.id + " (run train-sae)");
      auto sae = std::make_shared<SaeParams>(load_sae(sae_dir(m.id, it->second["variant"].get<std::string>())));
      reg.add({m.id, model(m.id), sae, it->second["layer"].get<std::size_t>()});
    }
    return reg;
  }
};

Matrix stack_rows(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

/// Residual rows at `layer` for every non-special token of `seqs`.
Matrix residual_rows(const TransformerParams& model, std::size_t layer, const std::vector<TokenSequence>& seqs) {
  std::vector<std::vector<double>> rows;
  for (const auto& s : seqs) {
    const auto trace = forward(model, s, {}, {layer});
    const Matrix& h = trace.residuals.at(layer);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (tokens::is_special(s[i])) continue;
      const auto r = h.row(i);
      rows.emplace_back(r.begin(), r.end());
    }
  }
  return stack_rows(rows, model.config.d_model);
}

Matrix subsample_rows(const Matrix& m, std::size_t max_rows, RngStream rng) {
  if (m.rows() <= max_rows) return m;
  std::vector<std::size_t> idx(m.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < max_rows; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  Matrix out(max_rows, m.cols());
  for (std::size_t i = 0; i < max_rows; ++i) {
    const auto r = m.row(idx[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

std::vector<TokenSequence> sequences_of(const RefusalCorpus& corpus, Split split) {
  std::vector<TokenSequence> out;
  for (const auto& p : corpus.split(split)) {
    TokenSequence s = corpus.prompt_tokens(p);
    const auto c = corpus.continuation_tokens(p);
    s.insert(s.end(), c.begin(), c.end());
    s.push_back(tokens::eos);
    out.push_back(std::move(s));
  }
  return out;
}

/// Fraction of held-out harmful prompts whose greedy answer is judged a refusal.
double heldout_refusal(const RefusalCorpus& corpus, const TransformerParams& model, const HookList& hooks,
                       const Detector& detector, std::size_t max_new) {
  std::size_t refused = 0, total = 0;
  for (const auto& p : corpus.split(Split::heldout)) {
    if (!p.harmful) continue;
    const PromptCase c{p.id, corpus.prompt_tokens(p), {}};
    refused += judge_suffix(detector, model, hooks, c, {}, {max_new}).verdict == Verdict::refused ? 1 : 0;
    ++total;
  }
  return static_cast<double>(refused) / static_cast<double>(total);
}

/// Fraction of held-out prompts answered with exactly their class continuation.
double heldout_exact(const RefusalCorpus& corpus, const TransformerParams& model) {
  std::size_t ok = 0, total = 0;
  for (const auto& p : corpus.split(Split::heldout)) {
    const auto want = corpus.continuation_tokens(p);
    const auto got = generate(model, corpus.prompt_tokens(p), {}, want.size());
    ok += got == want ? 1 : 0;
    ++total;
  }
  return static_cast<double>(ok) / static_cast<double>(total);
}

GcgConfig gcg_for(const ExperimentConfig& c) {
  GcgConfig g = c.attacks.gcg_config;
  g.seed = fnv1a("gcg/" + std::to_string(c.seed)) ^ g.seed;
  return g;
}

BeastConfig beast_for(const ExperimentConfig& c) {
  BeastConfig b = c.attacks.beast_config;
  b.seed = fnv1a("beast/" + std::to_string(c.seed)) ^ b.seed;
  return b;
}

/// Runs `attack` ("gcg" | "beast") or evaluates the bare prompt for PROMPT.
SuffixResult execute(const std::string& attack, const AttackInstance& inst, const ExperimentConfig& c) {
  if (inst.configuration == Configuration::prompt) {
    SuffixResult r;
    r.attack = "none";
    r.instance_id = inst.id;
    r.model_id = inst.model_id;
    r.configuration = inst.configuration;
    r.final_loss = target_loss(*inst.model, inst.prompt, {}, inst.target, inst.hooks);
    r.loss_trajectory = {r.final_loss};
    r.stream = inst.stream;
    return r;
  }
  if (attack == "gcg") return run_gcg(inst, gcg_for(c), c.attacks.snapshot_every);
  return run_beast(inst, beast_for(c));
}

bool non_increasing(const std::vector<double>& t) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[i - 1]) return false;
  return true;
}

std::string snapshot_name(const std::string& attack, const std::string& model, Configuration c,
                          const std::string& prompt) {
  return "snapshots/" + attack + "-" + model + "-" + to_string(c) + "-" + prompt + ".bin";
}

void save_snapshots(const fs::path& file, const std::vector<GradientSnapshot>& snaps) {
  std::vector<std::vector<double>> rows;
  for (const auto& s : snaps) rows.emplace_back(s.gradient.values().begin(), s.gradient.values().end());
  fs::create_directories(file.parent_path());
  save_matrix(file, stack_rows(rows, snaps.front().gradient.rows() * snaps.front().gradient.cols()));
}

std::vector<Matrix> load_snapshots(const fs::path& file, std::size_t rows, std::size_t cols) {
  const Matrix stacked = load_matrix(file);
  require(stacked.cols() == rows * cols, "snapshot file " + file.string() + " has the wrong width");
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < stacked.rows(); ++i) {
    Matrix g(rows, cols);
    const auto r = stacked.row(i);
    std::copy(r.begin(), r.end(), g.values().begin());
    out.push_back(std::move(g));
  }
  return out;
}

Json asr_json(const AsrEstimate& e) {
  Json j;
  j["successes"] = e.successes;
  j["trials"] = e.trials;
  j["rate"] = e.rate;
  j["standard_error"] = e.standard_error;
  return j;
}

Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// ---------------------------------------------------------------- stages

void stage_gen_corpus(const Run& run) {
  const auto corpus = gen_corpus(run.cfg.corpus, stream_for(run.cfg, "corpus"));
  const fs::path file = run.dir / "corpus.tsv";
  save_corpus(file, corpus);
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();

  std::vector<Json> log;
  Json r = records::make("corpus");
  r["hash"] = fnv1a(ss.str());
  for (Split s : {Split::train, Split::heldout, Split::attack, Split::blackbox}) {
    std::size_t harmful = 0, benign = 0;
    for (const auto& p : corpus.split(s)) (p.harmful ? harmful : benign)++;
    r["splits"][to_string(s)] = {{"harmful", harmful}, {"benign", benign}};
  }
  r["refusal"] = corpus.refusal;
  r["compliance"] = corpus.compliance;
  log.push_back(r);
  records::write_jsonl(run.log(Stage::gen_corpus), log);
}

void stage_train_lm(const Run& run) {
  const auto corpus = run.corpus();
  const auto seqs = corpus.training_sequences();
  const RefusalDetector detector;
  std::vector<Json> rows(run.cfg.models.size());
  parallel_for(run.cfg.models.size(), [&](std::size_t i) {
    const ModelSpec& m = run.cfg.models[i];
    RngStream rng(m.model.seed, fnv1a("lm/" + m.id + "/" + std::to_string(run.cfg.seed)));
    TrainReport report;
    const auto params = train_lm(m.model, seqs, run.cfg.lm, rng, &report);
    save_model(run.model_dir(m.id), params);
    Json r = records::make("lm");
    r["model_id"] = m.id;
    r["d_model"] = m.model.d_model;
    r["n_layers"] = m.model.n_layers;
    r["epochs"] = report.epoch_loss.size();
    r["final_loss"] = report.epoch_loss.empty() ? Json(nullptr) : Json(report.epoch_loss.back());
    r["epoch_loss"] = report.epoch_loss;
    r["heldout_exact"] = heldout_exact(corpus, params);
    r["heldout_refusal"] = heldout_refusal(corpus, params, {}, detector, run.cfg.evaluation.max_new_tokens);
    r["checkpoint"] = "models/" + m.id;
    rows[i] = r;
  });
  records::write_jsonl(run.log(Stage::train_lm), rows);
}

struct SaeJob {
  std::size_t model;
  std::size_t layer;
  double lambda;
  std::string role;  // grid | layer
};

Json train_one_sae(const Run& run, const SaeJob& job, const RefusalCorpus& corpus, const TransformerParams& model,
                   double base_refusal) {
  const ModelSpec& m = run.cfg.models[job.model];
  const auto train_seqs = corpus.training_sequences();
  const auto heldout_seqs = sequences_of(corpus, Split::heldout);
  const std::string variant = sae_variant(job.layer, job.lambda);
  const Matrix acts = subsample_rows(residual_rows(model, job.layer, train_seqs), run.cfg.sae.max_rows,
                                     stream_for(run.cfg, "sae-rows/" + m.id + "/" + std::to_string(job.layer)));
  const Matrix held = residual_rows(model, job.layer, heldout_seqs);

  Json r = records::make("sae");
  r["model_id"] = m.id;
  r["variant"] = variant;
  r["role"] = job.role;
  r["layer"] = job.layer;
  r["lambda"] = job.lambda;
  SaeConfig sc{m.model.d_model, m.model.d_model * run.cfg.sae.expansion, SparsityMode::l1(job.lambda),
               fnv1a("sae/" + m.id + "/" + variant) ^ run.cfg.seed};
  try {
    SaeTrainReport report;
    const auto sae = std::make_shared<SaeParams>(train_sae(sc, acts, run.cfg.sae.train, &report));
    const double l0 = measure_l0(*sae, held);
    save_sae(run.sae_dir(m.id, variant), *sae, {fnv1a(corpus.refusal + corpus.compliance), l0, job.layer});
    const HookList hooks{RoutingHook{job.layer, std::make_shared<SaeRouting>(sae)}};
    r["status"] = "ok";
    r["train_rows"] = acts.rows();
    r["l0"] = l0;
    r["r2"] = reconstruction_r2(*sae, held);
    r["heldout_refusal"] =
        heldout_refusal(corpus, model, hooks, RefusalDetector{}, run.cfg.evaluation.max_new_tokens);
    r["base_refusal"] = base_refusal;
    r["checkpoint"] = "saes/" + m.id + "/" + variant;
  } catch (const SaeTrainingFailure& e) {
    r["status"] = "failed";
    r["error"] = e.what();
  }
  return r;
}

void stage_train_sae(const Run& run) {
  const auto corpus = run.corpus();
  const auto& cfg = run.cfg;
  std::vector<std::shared_ptr<const TransformerParams>> models;
  std::vector<double> base_refusal;
  for (const auto& m : cfg.models) {
    models.push_back(run.model(m.id));
    base_refusal.push_back(
        heldout_refusal(corpus, *models.back(), {}, RefusalDetector{}, cfg.evaluation.max_new_tokens));
  }

  std::vector<SaeJob> jobs;
  for (std::size_t i = 0; i < cfg.models.size(); ++i)
    for (double l : cfg.sae.lambda_grid) jobs.push_back({i, cfg.models[i].sae_layer, l, "grid"});
  std::vector<Json> rows(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    rows[j] = train_one_sae(run, jobs[j], corpus, *models[jobs[j].model], base_refusal[jobs[j].model]);
  });

  // Sparsest grid point whose routed model keeps refusing held-out harmful prompts.
  std::vector<Json> selections;
  std::map<std::string, double> chosen_lambda;
  for (std::size_t i = 0; i < cfg.models.size(); ++i) {
    const Json* best = nullptr;
    const Json* fallback = nullptr;
    for (const auto& r : rows) {
      if (r["model_id"] != cfg.models[i].id || r["status"] != "ok") continue;
      const double drop = r["base_refusal"].get<double>() - r["heldout_refusal"].get<double>();
      if (drop <= cfg.sae.selection_tolerance + 1e-12 &&
          (!best || r["l0"].get<double>() < (*best)["l0"].get<double>()))
        best = &r;
      if (!fallback || r["heldout_refusal"].get<double>() > (*fallback)["heldout_refusal"].get<double>())
        fallback = &r;
    }
    if (!fallback) throw Error(ErrorCode::stage_failure, "every SAE failed to train for model " + cfg.models[i].id);
    const Json& pick = best ? *best : *fallback;
    Json s = records::make("sae_selection");
    s["model_id"] = cfg.models[i].id;
    s["variant"] = pick["variant"];
    s["layer"] = pick["layer"];
    s["lambda"] = pick["lambda"];
    s["l0"] = pick["l0"];
    s["rule"] = best ? "sparsest within tolerance" : "no grid point within tolerance; highest refusal";
    selections.push_back(s);
    chosen_lambda[cfg.models[i].id] = pick["lambda"].get<double>();
  }

  if (cfg.ablation.enabled) {
    const std::size_t mi = static_cast<std::size_t>(
        std::find_if(cfg.models.begin(), cfg.models.end(), [&](const ModelSpec& m) { return m.id == cfg.ablation.model; }) -
        cfg.models.begin());
    std::vector<SaeJob> layer_jobs;
    for (auto layer : cfg.ablation.layers)
      layer_jobs.push_back({mi, layer, chosen_lambda[cfg.ablation.model], "layer"});
    std::vector<Json> layer_rows(layer_jobs.size());
    parallel_for(layer_jobs.size(), [&](std::size_t j) {
      // The grid already holds the variant at the model's own SAE layer.
      const std::string variant = sae_variant(layer_jobs[j].layer, layer_jobs[j].lambda);
      for (const auto& r : rows)
        if (r["model_id"] == cfg.models[mi].id && r["variant"] == variant) {
          layer_rows[j] = r;
          layer_rows[j]["role"] = "layer";
          return;
        }
      layer_rows[j] = train_one_sae(run, layer_jobs[j], corpus, *models[mi], base_refusal[mi]);
    });
    rows.insert(rows.end(), layer_rows.begin(), layer_rows.end());
  }
  rows.insert(rows.end(), selections.begin(), selections.end());
  records::write_jsonl(run.log(Stage::train_sae), rows);
}

struct AttackUnit {
  std::string attack;
  std::size_t model;
  Configuration configuration;
  std::size_t prompt;
};

void stage_attack(const Run& run) {
  const auto& cfg = run.cfg;
  const auto corpus = run.corpus();
  const auto cases = corpus.attack_cases();
  const ModelRegistry registry = run.registry();
  const RefusalDetector detector;
  const GenerationSettings gen{cfg.evaluation.max_new_tokens};

  std::vector<AttackUnit> units;
  for (const auto& attack : cfg.attacks.enabled())
    for (std::size_t m = 0; m < cfg.models.size(); ++m)
      for (Configuration c : protocol())
        for (std::size_t p = 0; p < cases.size(); ++p) units.push_back({attack, m, c, p});

  std::vector<Json> rows(units.size());
  parallel_for(units.size(), [&](std::size_t u) {
    const AttackUnit& unit = units[u];
    const std::string& id = cfg.models[unit.model].id;
    const PromptCase& pc = cases[unit.prompt];
    const RegistryEntry& entry = registry.at(id);
    AttackInstance inst{pc.id, id, unit.configuration, pc.prompt, pc.target, entry.model,
                        registry.hooks_for(id, unit.configuration), unit.prompt};
    const SuffixResult r = execute(unit.attack, inst, cfg);
    const auto judged = judge_suffix(detector, *entry.model, inst.hooks, pc, r.suffix, gen);

    Json j = records::make("attack_run");
    j["attack"] = unit.attack;
    j["model_id"] = id;
    j["configuration"] = to_string(unit.configuration);
    j["prompt_id"] = pc.id;
    j["prompt_index"] = unit.prompt;
    j["suffix"] = token_list(r.suffix);
    j["suffix_text"] = decode_tokens(r.suffix);
    j["final_loss"] = r.final_loss;
    j["loss_trajectory"] = r.loss_trajectory;
    j["non_increasing"] = non_increasing(r.loss_trajectory);
    j["response"] = judged.response;
    j["verdict"] = to_string(judged.verdict);
    j["detector"] = judged.detector;
    if (!r.snapshots.empty()) {
      const std::string rel = snapshot_name(unit.attack, id, unit.configuration, pc.id);
      save_snapshots(run.dir / rel, r.snapshots);
      std::vector<std::size_t> steps;
      for (const auto& s : r.snapshots) steps.push_back(s.step);
      j["snapshots"] = rel;
      j["snapshot_steps"] = steps;
    } else {
      j["snapshots"] = nullptr;
    }
    rows[u] = j;
  });

  // Black-box prompts: no suffix, judged under the plain and the routed model.
  const auto bb = corpus.attack_cases(Split::blackbox);
  std::vector<std::pair<std::size_t, Configuration>> routes;
  for (std::size_t m = 0; m < cfg.models.size(); ++m)
    for (Configuration c : {Configuration::base, Configuration::sae}) routes.emplace_back(m, c);
  std::vector<Json> bb_rows(routes.size());
  parallel_for(routes.size(), [&](std::size_t i) {
    const std::string& id = cfg.models[routes[i].first].id;
    const HookList hooks = registry.hooks_for(id, routes[i].second);
    std::vector<Verdict> v;
    for (const auto& pc : bb) v.push_back(judge_suffix(detector, *registry.at(id).model, hooks, pc, {}, gen).verdict);
    Json j = records::make("blackbox");
    j["model_id"] = id;
    j["configuration"] = to_string(routes[i].second);
    j["asr"] = asr_json(asr(v));
    bb_rows[i] = j;
  });
  rows.insert(rows.end(), bb_rows.begin(), bb_rows.end());

  // Sparsity and layer ablations on one model with a prompt subset. PROMPT
  // verdicts under each variant are the no-suffix side effect.
  if (cfg.ablation.enabled) {
    const std::string& id = cfg.ablation.model;
    const auto model = registry.at(id).model;
    const std::string attack = cfg.attacks.enabled().front();
    std::vector<Json> variants;
    for (const auto& r : records::of_type(run.read(Stage::train_sae), "sae"))
      if (r["model_id"] == id && r["status"] == "ok" &&
          std::none_of(variants.begin(), variants.end(), [&](const Json& v) { return v["variant"] == r["variant"]; }))
        variants.push_back(r);
    struct AblationUnit {
      std::size_t variant;
      std::size_t prompt;
    };
    std::vector<AblationUnit> aunits;
    for (std::size_t v = 0; v < variants.size(); ++v)
      for (std::size_t p = 0; p < cfg.ablation.prompts; ++p) aunits.push_back({v, p});
    std::vector<std::shared_ptr<const SaeParams>> saes;
    for (const auto& v : variants)
      saes.push_back(std::make_shared<SaeParams>(load_sae(run.sae_dir(id, v["variant"].get<std::string>()))));
    std::vector<Json> arows(aunits.size());
    parallel_for(aunits.size(), [&](std::size_t u) {
      const Json& v = variants[aunits[u].variant];
      const PromptCase& pc = cases[aunits[u].prompt];
      const HookList hooks{RoutingHook{v["layer"].get<std::size_t>(), std::make_shared<SaeRouting>(saes[aunits[u].variant])}};
      AttackInstance inst{pc.id, id, Configuration::sae, pc.prompt, pc.target, model, hooks, aunits[u].prompt};
      GcgConfig g = gcg_for(cfg);
      const SuffixResult r = attack == "gcg" ? run_gcg(inst, g, 0) : run_beast(inst, beast_for(cfg));
      Json j = records::make("ablation_run");
      j["attack"] = attack;
      j["model_id"] = id;
      j["variant"] = v["variant"];
      j["layer"] = v["layer"];
      j["lambda"] = v["lambda"];
      j["prompt_id"] = pc.id;
      j["final_loss"] = r.final_loss;
      j["non_increasing"] = attack != "gcg" || non_increasing(r.loss_trajectory);
      j["verdict"] = to_string(judge_suffix(detector, *model, hooks, pc, r.suffix, gen).verdict);
      j["prompt_verdict"] = to_string(judge_suffix(detector, *model, hooks, pc, {}, gen).verdict);
      arows[u] = j;
    });
    rows.insert(rows.end(), arows.begin(), arows.end());
  }
  records::write_jsonl(run.log(Stage::attack), rows);
}

std::vector<Json> main_runs(const Run& run) { return records::of_type(run.read(Stage::attack), "attack_run"); }

void stage_transfer(const Run& run) {
  const auto& cfg = run.cfg;
  const auto corpus = run.corpus();
  const auto cases = corpus.attack_cases();
  const ModelRegistry registry = run.registry();
  const auto runs = main_runs(run);
  const RefusalDetector detector;

  std::vector<TransferKey> keys;
  for (const auto& m : cfg.models)
    for (Configuration c : {Configuration::base, Configuration::sae}) keys.push_back({m.id, c});

  std::vector<Json> rows;
  for (const auto& attack : cfg.attacks.enabled()) {
    std::vector<BankedSuffix> bank;
    for (const auto& r : runs) {
      if (r["attack"] != attack || r["configuration"] == "PROMPT") continue;
      bank.push_back({r["prompt_id"].get<std::string>(),
                      {r["model_id"].get<std::string>(), parse_configuration(r["configuration"].get<std::string>())},
                      token_seq(r["suffix"])});
    }
    // One target column per work unit keeps the evaluation parallel.
    std::vector<TransferMatrix> columns(keys.size());
    parallel_for(keys.size(), [&](std::size_t t) {
      columns[t] = evaluate_transfer(bank, cases, registry, keys, std::span(&keys[t], 1), detector,
                                     {cfg.evaluation.max_new_tokens});
    });
    for (std::size_t s = 0; s < keys.size(); ++s)
      for (std::size_t t = 0; t < keys.size(); ++t) {
        const TransferCell& cell = columns[t].cells[s][0];
        Json j = records::make("transfer_cell");
        j["attack"] = attack;
        j["source"] = keys[s].label();
        j["target"] = keys[t].label();
        j["evaluated"] = cell.evaluated;
        j["asr"] = cell.evaluated ? asr_json(cell.estimate) : Json(nullptr);
        rows.push_back(j);
      }
  }
  records::write_jsonl(run.log(Stage::transfer), rows);
}

Json spectral_json(const SpectralMetrics& m) {
  Json j;
  j["r_eff"] = m.r_eff;
  j["spectral_gap"] = m.spectral_gap;
  j["kappa"] = m.kappa;
  j["var_sigma1"] = m.var_sigma1;
  j["mean_cosine"] = m.mean_cosine;
  j["mean_loss"] = m.mean_loss;
  j["floored_gaps"] = m.floored_gaps;
  j["snapshots"] = m.snapshots.size();
  return j;
}

void stage_analyze(const Run& run) {
  const auto& cfg = run.cfg;
  const auto runs = main_runs(run);
  std::vector<Json> rows;

  // Spectral statistics of every GCG run with snapshots.
  std::vector<const Json*> with_snaps;
  for (const auto& r : runs)
    if (r["snapshots"].is_string()) with_snaps.push_back(&r);
  std::vector<Json> spectral(with_snaps.size());
  parallel_for(with_snaps.size(), [&](std::size_t i) {
    const Json& r = *with_snaps[i];
    const auto& m = cfg.model(r["model_id"].get<std::string>());
    const auto snaps = load_snapshots(run.dir / r["snapshots"].get<std::string>(), r["suffix"].size(),
                                      m.model.d_model);
    const auto losses = r["loss_trajectory"].get<std::vector<double>>();
    Json j = records::make("spectral");
    j["attack"] = r["attack"];
    j["model_id"] = r["model_id"];
    j["configuration"] = r["configuration"];
    j["prompt_id"] = r["prompt_id"];
    j["metrics"] = spectral_json(spectral_trace(snaps, losses));
    spectral[i] = j;
  });
  rows.insert(rows.end(), spectral.begin(), spectral.end());

  // Sparse-feature overlap of BASE suffixes against random suffixes.
  const auto corpus = run.corpus();
  const auto cases = corpus.attack_cases();
  const ModelRegistry registry = run.registry();
  const auto sel = run.selections();
  std::vector<Json> overlap(cfg.models.size());
  parallel_for(cfg.models.size(), [&](std::size_t mi) {
    const std::string& id = cfg.models[mi].id;
    const RegistryEntry& e = registry.at(id);
    const double l0 = sel.at(id)["l0"].get<double>();
    const std::size_t k = cfg.analysis.feature_k > 0 ? cfg.analysis.feature_k
                                                     : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(l0)));
    std::map<std::string, std::vector<FeatureSet>> groups;
    std::size_t suffix_len = 1;
    for (const auto& r : runs) {
      if (r["model_id"] != id || r["configuration"] != "BASE") continue;
      const auto suffix = token_seq(r["suffix"]);
      if (suffix.empty()) continue;
      suffix_len = std::max(suffix_len, suffix.size());
      const PromptCase& pc = cases[r["prompt_index"].get<std::size_t>()];
      groups[r["attack"].get<std::string>()].push_back(
          top_k_features(*e.sae, suffix_activations(*e.model, e.sae_layer, pc.prompt, suffix), k,
                         r["prompt_id"].get<std::string>()));
    }
    RngStream rng = stream_for(cfg, "random-baseline/" + id);
    for (std::size_t b = 0; b < cfg.analysis.random_baselines; ++b) {
      const auto suffix = random_suffix(rng, suffix_len, e.model->config.vocab_size);
      const PromptCase& pc = cases[b % cases.size()];
      groups["random"].push_back(top_k_features(*e.sae, suffix_activations(*e.model, e.sae_layer, pc.prompt, suffix),
                                                k, "random-" + std::to_string(b)));
    }
    Json j = records::make("overlap");
    j["model_id"] = id;
    j["k"] = k;
    auto pair_json = [](const PairStats& p) {
      Json x;
      x["pairs"] = p.values.size();
      x["mean"] = p.mean;
      x["std"] = p.std;
      return x;
    };
    try {
      const auto study = overlap_study(groups);
      j["within"] = pair_json(study.within);
      j["across"] = study.across ? pair_json(*study.across) : Json(nullptr);
      j["vs_random"] = pair_json(study.vs_random);
    } catch (const Error& err) {
      j["error"] = err.what();
    }
    for (const auto& [label, sets] : groups) {
      if (label == "random") continue;
      std::map<std::string, std::vector<FeatureSet>> single{{label, sets}, {"random", groups["random"]}};
      try {
        const auto s = overlap_study(single);
        j["per_attack"][label] = {{"within", pair_json(s.within)}, {"vs_random", pair_json(s.vs_random)}};
      } catch (const Error& err) {
        j["per_attack"][label] = {{"error", err.what()}};
      }
    }
    overlap[mi] = j;
  });
  rows.insert(rows.end(), overlap.begin(), overlap.end());
  records::write_jsonl(run.log(Stage::analyze), rows);
}

Json comparison_json(const MetricComparison& c) {
  Json j;
  j["metric"] = c.metric;
  j["base_mean"] = c.base_mean;
  j["base_std"] = c.base_std;
  j["sae_mean"] = c.sae_mean;
  j["sae_std"] = c.sae_std;
  j["delta_percent"] = nullable(c.delta_percent);
  j["p_value"] = c.p_value;
  j["degenerate"] = c.degenerate;
  return j;
}

SpectralMetrics metrics_from(const Json& m) {
  SpectralMetrics s;
  s.r_eff = m["r_eff"].get<double>();
  s.spectral_gap = m["spectral_gap"].get<double>();
  s.kappa = m["kappa"].get<double>();
  s.var_sigma1 = m["var_sigma1"].get<double>();
  s.mean_cosine = m["mean_cosine"].get<double>();
  s.mean_loss = m["mean_loss"].get<double>();
  return s;
}

void stage_stats(const Run& run) {
  const auto& cfg = run.cfg;
  const auto attack_log = run.read(Stage::attack);
  const auto runs = records::of_type(attack_log, "attack_run");
  std::vector<Json> rows;

  // Monotonicity of every GCG trajectory, main and ablation.
  {
    std::size_t total = 0, violations = 0;
    for (const auto& r : attack_log) {
      const auto type = r.value("type", "");
      if ((type != "attack_run" && type != "ablation_run") || r["attack"] != "gcg") continue;
      if (type == "attack_run" && r["configuration"] == "PROMPT") continue;
      ++total;
      violations += r["non_increasing"].get<bool>() ? 0 : 1;
    }
    Json j = records::make("monotonicity");
    j["attack"] = "gcg";
    j["runs"] = total;
    j["violations"] = violations;
    rows.push_back(j);
  }

  // ASR per (attack, model, configuration) and the Table-1 style comparison.
  for (const auto& attack : cfg.attacks.enabled()) {
    std::map<Configuration, std::vector<double>> per_config;
    for (const auto& m : cfg.models)
      for (Configuration c : protocol()) {
        std::vector<Verdict> v;
        for (const auto& r : runs)
          if (r["attack"] == attack && r["model_id"] == m.id && r["configuration"] == to_string(c))
            v.push_back(r["verdict"] == "harmful" ? Verdict::harmful : Verdict::refused);
        const auto e = asr(v);
        per_config[c].push_back(e.rate);
        Json j = records::make("asr");
        j["attack"] = attack;
        j["model_id"] = m.id;
        j["configuration"] = to_string(c);
        j["asr"] = asr_json(e);
        rows.push_back(j);
      }
    for (Configuration c : protocol()) {
      Json j = records::make("asr_table");
      j["attack"] = attack;
      j["configuration"] = to_string(c);
      j["median"] = median(per_config[c]);
      j["per_model"] = per_config[c];
      rows.push_back(j);
    }
    Json t = records::make("asr_test");
    t["attack"] = attack;
    t["comparison"] = "BASE vs SAE";
    const auto mw = mann_whitney_u(per_config[Configuration::base], per_config[Configuration::sae]);
    t["test"] = "mann-whitney";
    t["u"] = mw.statistic;
    t["p_value"] = mw.p_value;
    t["method"] = mw.method == TestMethod::exact ? "exact" : "approximate";
    t["n"] = mw.n;
    rows.push_back(t);
  }

  // Final-loss comparison SAE vs BASE per model and pooled (one-sided).
  for (const auto& attack : cfg.attacks.enabled()) {
    std::vector<double> pooled_diff, pooled_base, pooled_sae;
    auto emit = [&](const std::string& scope, const std::vector<double>& b, const std::vector<double>& s,
                    const std::vector<double>& d) {
      Json j = records::make("loss_comparison");
      j["attack"] = attack;
      j["scope"] = scope;
      j["n"] = d.size();
      j["base_mean"] = mean(b);
      j["sae_mean"] = mean(s);
      j["sae_higher"] = std::count_if(d.begin(), d.end(), [](double x) { return x > 0; });
      try {
        const auto w = wilcoxon_signed_rank(d, Alternative::greater);
        j["p_greater"] = w.p_value;
        j["method"] = w.method == TestMethod::exact ? "exact" : "approximate";
      } catch (const Error& e) {
        j["p_greater"] = 1.0;
        j["degenerate"] = e.what();
      }
      rows.push_back(j);
    };
    for (const auto& m : cfg.models) {
      std::map<std::string, double> base, sae;
      for (const auto& r : runs) {
        if (r["attack"] != attack || r["model_id"] != m.id) continue;
        if (r["configuration"] == "BASE") base[r["prompt_id"]] = r["final_loss"].get<double>();
        if (r["configuration"] == "SAE") sae[r["prompt_id"]] = r["final_loss"].get<double>();
      }
      std::vector<double> b, s, d;
      for (const auto& [pid, bl] : base) {
        b.push_back(bl);
        s.push_back(sae.at(pid));
        d.push_back(sae.at(pid) - bl);
      }
      pooled_base.insert(pooled_base.end(), b.begin(), b.end());
      pooled_sae.insert(pooled_sae.end(), s.begin(), s.end());
      pooled_diff.insert(pooled_diff.end(), d.begin(), d.end());
      emit(m.id, b, s, d);
    }
    emit("pooled", pooled_base, pooled_sae, pooled_diff);
  }

  // Black-box ASR.
  for (const auto& r : records::of_type(attack_log, "blackbox")) rows.push_back(r);

  // Transfer groupings with bootstrap intervals.
  if (fs::exists(run.log(Stage::transfer))) {
    const auto cells = records::of_type(run.read(Stage::transfer), "transfer_cell");
    for (const auto& attack : cfg.attacks.enabled()) {
      TransferMatrix m;
      for (const auto& mm : cfg.models)
        for (Configuration c : {Configuration::base, Configuration::sae}) m.sources.push_back({mm.id, c});
      m.targets = m.sources;
      m.cells.assign(m.sources.size(), std::vector<TransferCell>(m.targets.size()));
      std::size_t found = 0;
      for (const auto& c : cells) {
        if (c["attack"] != attack) continue;
        for (std::size_t s = 0; s < m.sources.size(); ++s)
          for (std::size_t t = 0; t < m.targets.size(); ++t)
            if (c["source"] == m.sources[s].label() && c["target"] == m.targets[t].label() && c["evaluated"].get<bool>()) {
              m.cells[s][t].evaluated = true;
              m.cells[s][t].estimate.rate = c["asr"]["rate"].get<double>();
              ++found;
            }
      }
      if (found == 0) continue;
      for (auto g : all_groupings()) {
        Json j = records::make("transfer_summary");
        j["attack"] = attack;
        j["grouping"] = to_string(g);
        try {
          const auto s = aggregate_transfer(m, g, stream_for(cfg, "transfer-ci/" + attack + "/" + to_string(g)),
                                            cfg.analysis.bootstrap_resamples);
          j["n"] = s.n;
          j["median"] = s.median;
          j["ci_lower"] = s.interval.lower;
          j["ci_upper"] = s.interval.upper;
          j["ci_method"] = s.interval.method;
        } catch (const Error& e) {
          j["error"] = e.what();
        }
        rows.push_back(j);
      }
    }
  }

  // Spectral paired comparison per model and pooled.
  if (fs::exists(run.log(Stage::analyze))) {
    const auto spectral = records::of_type(run.read(Stage::analyze), "spectral");
    std::vector<SpectralMetrics> pooled_b, pooled_s;
    auto emit = [&](const std::string& scope, const std::vector<SpectralMetrics>& b,
                    const std::vector<SpectralMetrics>& s) {
      Json j = records::make("spectral_comparison");
      j["attack"] = "gcg";
      j["scope"] = scope;
      j["n"] = b.size();
      try {
        for (const auto& c : paired_comparison(b, s)) j["rows"].push_back(comparison_json(c));
      } catch (const Error& e) {
        j["error"] = e.what();
      }
      rows.push_back(j);
    };
    for (const auto& m : cfg.models) {
      std::map<std::string, SpectralMetrics> b, s;
      for (const auto& r : spectral) {
        if (r["model_id"] != m.id || r["attack"] != "gcg") continue;
        (r["configuration"] == "BASE" ? b : s)[r["prompt_id"]] = metrics_from(r["metrics"]);
      }
      std::vector<SpectralMetrics> bv, sv;
      for (const auto& [pid, x] : b)
        if (s.count(pid)) {
          bv.push_back(x);
          sv.push_back(s.at(pid));
        }
      if (bv.empty()) continue;
      pooled_b.insert(pooled_b.end(), bv.begin(), bv.end());
      pooled_s.insert(pooled_s.end(), sv.begin(), sv.end());
      emit(m.id, bv, sv);
    }
    if (!pooled_b.empty()) emit("pooled", pooled_b, pooled_s);
    for (const auto& r : records::of_type(run.read(Stage::analyze), "overlap")) rows.push_back(r);
  }

  // Ablation tables.
  if (cfg.ablation.enabled) {
    const auto sae_rows = records::of_type(run.read(Stage::train_sae), "sae");
    const auto ablation = records::of_type(attack_log, "ablation_run");
    for (const auto& s : sae_rows) {
      if (s["model_id"] != cfg.ablation.model || s["status"] != "ok") continue;
      std::vector<double> losses;
      std::vector<Verdict> v, pv;
      for (const auto& a : ablation) {
        if (a["variant"] != s["variant"]) continue;
        losses.push_back(a["final_loss"].get<double>());
        v.push_back(a["verdict"] == "harmful" ? Verdict::harmful : Verdict::refused);
        pv.push_back(a["prompt_verdict"] == "harmful" ? Verdict::harmful : Verdict::refused);
      }
      if (losses.empty()) continue;
      Json j = records::make(s["role"] == "grid" ? "ablation_sparsity" : "ablation_layer");
      j["model_id"] = s["model_id"];
      j["variant"] = s["variant"];
      j["layer"] = s["layer"];
      j["lambda"] = s["lambda"];
      j["l0"] = s["l0"];
      j["r2"] = s["r2"];
      j["heldout_refusal"] = s["heldout_refusal"];
      j["attack"] = ablation.front()["attack"];
      j["prompt_asr"] = asr(pv).rate;
      j["attack_asr"] = asr(v).rate;
      j["mean_final_loss"] = mean(losses);
      j["n"] = losses.size();
      rows.push_back(j);
    }
  }
  records::write_jsonl(run.log(Stage::stats), rows);
}

void execute_stage(const Run& run, Stage s) {
  switch (s) {
    case Stage::gen_corpus: return stage_gen_corpus(run);
    case Stage::train_lm: return stage_train_lm(run);
    case Stage::train_sae: return stage_train_sae(run);
    case Stage::attack: return stage_attack(run);
    case Stage::transfer: return stage_transfer(run);
    case Stage::analyze: return stage_analyze(run);
    case Stage::stats: return stage_stats(run);
  }
}

std::vector<Stage> dependencies(Stage s) {
  switch (s) {
    case Stage::gen_corpus: return {};
    case Stage::train_lm: return {Stage::gen_corpus};
    case Stage::train_sae: return {Stage::train_lm};
    case Stage::attack: return {Stage::train_sae};
    case Stage::transfer: return {Stage::attack};
    case Stage::analyze: return {Stage::attack};
    case Stage::stats: return {Stage::attack};
  }
  return {};
}

// ---------------------------------------------------------------- manifest

Json manifest_json(const RunManifest& m) {
  Json j;
  j["schema"] = records::schema_version;
  j["config_hash"] = m.config_hash;
  j["code_version"] = m.code_version;
  j["seed"] = m.seed;
  j["created"] = m.created;
  j["stages"] = Json::array();
  for (const auto& s : m.stages)
    j["stages"].push_back(
        {{"name", s.name}, {"status", s.status}, {"error", s.error}, {"started", s.started}, {"finished", s.finished}});
  j["artifacts"] = m.artifacts;
  return j;
}

void refresh_artifacts(RunManifest& m) {
  m.artifacts.clear();
  if (!fs::exists(m.run_dir)) return;
  for (const auto& e : fs::recursive_directory_iterator(m.run_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), m.run_dir).generic_string();
    if (rel != "manifest.json") m.artifacts.push_back(rel);
  }
  std::sort(m.artifacts.begin(), m.artifacts.end());
}

void write_results(const Run& run) {
  std::string text;
  for (Stage s : all_stages()) {
    const fs::path p = run.log(s);
    if (!fs::exists(p)) continue;
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    text += ss.str();
  }
  records::write_text(run.dir / "results.jsonl", text);
}

void save_manifest(RunManifest& m) {
  refresh_artifacts(m);
  records::write_text(m.run_dir / "manifest.json", manifest_json(m).dump(2) + "\n");
}

RunManifest open_manifest(const ExperimentConfig& config, const fs::path& dir) {
  RunManifest m;
  if (fs::exists(dir / "manifest.json")) m = load_manifest(dir);
  m.run_dir = dir;
  m.config_hash = config.hash();
  m.code_version = code_version();
  m.seed = config.seed;
  if (m.created.empty()) m.created = utc_now();
  return m;
}

void set_stage(RunManifest& m, StageRecord rec) {
  for (auto& s : m.stages)
    if (s.name == rec.name) {
      s = std::move(rec);
      return;
    }
  m.stages.push_back(std::move(rec));
  std::sort(m.stages.begin(), m.stages.end(), [](const StageRecord& a, const StageRecord& b) {
    return parse_stage(a.name) < parse_stage(b.name);
  });
}

StageRecord attempt(const Run& run, Stage s) {
  StageRecord rec{to_string(s), "ok", "", utc_now(), ""};
  try {
    execute_stage(run, s);
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
  }
  rec.finished = utc_now();
  write_results(run);
  return rec;
}

void prepare(const Run& run) {
  fs::create_directories(run.dir / "logs");
  records::write_text(run.dir / "config.yaml", run.cfg.to_yaml());
}

}  // namespace

RunManifest load_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("missing manifest in " + run_dir.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("malformed manifest in " + run_dir.string() + ": " + e.what());
  }
  RunManifest m;
  m.run_dir = run_dir;
  m.config_hash = j.value("config_hash", "");
  m.code_version = j.value("code_version", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.created = j.value("created", "");
  for (const auto& s : j.value("stages", Json::array()))
    m.stages.push_back({s.value("name", ""), s.value("status", ""), s.value("error", ""), s.value("started", ""),
                        s.value("finished", "")});
  m.artifacts = j.value("artifacts", std::vector<std::string>{});
  return m;
}

RunManifest run_stage(const ExperimentConfig& config, const fs::path& out_root, Stage stage) {
  config.validate();
  const Run run{config, run_directory(config, out_root)};
  prepare(run);
  RunManifest m = open_manifest(config, run.dir);
  set_stage(m, attempt(run, stage));
  save_manifest(m);
  return m;
}

RunManifest run_pipeline(const ExperimentConfig& config, const fs::path& out_root) {
  config.validate();
  const Run run{config, run_directory(config, out_root)};
  prepare(run);
  RunManifest m = open_manifest(config, run.dir);
  std::map<Stage, bool> ok;
  for (Stage s : all_stages()) {
    bool ready = true;
    for (Stage d : dependencies(s)) ready = ready && ok[d];
    if (!ready) {
      set_stage(m, {to_string(s), "skipped", "an upstream stage failed", utc_now(), utc_now()});
      ok[s] = false;
    } else {
      auto rec = attempt(run, s);
      ok[s] = rec.status == "ok";
      set_stage(m, std::move(rec));
    }
    save_manifest(m);
  }
  export_report(run.dir);
  save_manifest(m);
  return m;
}

}  // namespace saelab
