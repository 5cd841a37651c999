// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace saelab {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> AttackSpec::enabled() const {
  std::vector<std::string> out;
  if (gcg) out.push_back("gcg");
  if (beast) out.push_back("beast");
  return out;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  auto model = [](const char* id, std::size_t d, std::size_t layers, std::size_t sae_layer, std::uint64_t seed) {
    ModelSpec m;
    m.id = id;
    m.model.vocab_size = 128;
    m.model.d_model = d;
    m.model.n_layers = layers;
    m.model.n_heads = 4;
    m.model.context_len = 64;
    m.model.seed = seed;
    m.sae_layer = sae_layer;
    return m;
  };
  c.models = {model("m32", 32, 4, 2, 1), model("m64", 64, 2, 1, 2)};
  return c;
}

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c = desk();
  c.corpus.harmful_train = 400;
  c.corpus.benign_train = 400;
  c.corpus.attack = 218;
  c.corpus.blackbox = 218;
  c.models.clear();
  const std::size_t dims[] = {32, 48, 64, 64, 96, 128};
  for (std::size_t i = 0; i < 6; ++i) {
    ModelSpec m;
    m.id = "m" + std::to_string(i) + "-d" + std::to_string(dims[i]);
    m.model.vocab_size = 128;
    m.model.d_model = dims[i];
    m.model.n_layers = 4;
    m.model.n_heads = 4;
    m.model.context_len = 96;
    m.model.seed = 10 + i;
    m.sae_layer = 2;
    c.models.push_back(m);
  }
  c.attacks.gcg_config = GcgConfig{};
  c.attacks.beast_config = BeastConfig{};
  c.ablation.model = c.models.front().id;
  c.ablation.prompts = 50;
  return c;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  require(!models.empty(), "config: models must not be empty");
  std::set<std::string> ids;
  for (const auto& m : models) {
    require(!m.id.empty() && m.id.find_first_of("/\\ \t") == std::string::npos,
            "config: model id '" + m.id + "' must be nonempty without spaces or slashes");
    require(ids.insert(m.id).second, "config: duplicate model id " + m.id);
    m.model.validate();
    require(m.model.vocab_size == corpus.vocab_size, "config: model " + m.id + " vocab_size differs from the corpus");
    require(m.sae_layer <= m.model.n_layers, "config: model " + m.id + " sae_layer exceeds n_layers");
    if (attacks.gcg) attacks.gcg_config.validate(m.model);
  }
  require(lm.epochs >= 1 && lm.learning_rate > 0.0 && lm.batch_size >= 1, "config: lm training settings must be positive");
  require(sae.expansion >= 1, "config: sae.expansion must be >= 1");
  require(!sae.lambda_grid.empty(), "config: sae.lambda_grid must not be empty");
  for (double l : sae.lambda_grid) require(l > 0.0, "config: sae.lambda_grid values must be positive");
  require(sae.max_rows >= 64, "config: sae.max_rows must be >= 64");
  require(sae.train.epochs >= 1 && sae.train.learning_rate > 0.0 && sae.train.batch_size >= 1,
          "config: sae training settings must be positive");
  require(sae.selection_tolerance >= 0.0 && sae.selection_tolerance <= 1.0,
          "config: sae.selection_tolerance must lie in [0, 1]");
  require(!attacks.enabled().empty(), "config: at least one attack must be enabled");
  attacks.beast_config.validate();
  require(evaluation.detector == "refusal-heuristic", "config: unknown detector '" + evaluation.detector + "'");
  require(evaluation.max_new_tokens >= 1, "config: evaluation.max_new_tokens must be positive");
  if (ablation.enabled) {
    require(ids.count(ablation.model) == 1, "config: ablation.model '" + ablation.model + "' is not a registered model");
    require(!ablation.layers.empty(), "config: ablation.layers must not be empty");
    require(ablation.prompts >= 5 && ablation.prompts <= corpus.attack,
            "config: ablation.prompts must lie in [5, corpus.attack]");
    for (auto l : ablation.layers)
      require(l <= model(ablation.model).model.n_layers, "config: ablation layer out of range");
  }
  require(analysis.random_baselines >= 2, "config: analysis.random_baselines must be >= 2");
  require(analysis.bootstrap_resamples >= 100, "config: analysis.bootstrap_resamples must be >= 100");
  require(corpus.attack >= 5, "config: at least 5 attack prompts for paired tests");
}

const ModelSpec& ExperimentConfig::model(const std::string& id) const {
  for (const auto& m : models)
    if (m.id == id) return m;
  throw InvalidInput("config: unknown model id '" + id + "'");
}

namespace {

using Path = std::string;

Path join(const Path& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

void check_keys(const YAML::Node& n, const Path& path, std::initializer_list<const char*> allowed) {
  if (!n.IsMap()) throw InvalidInput(path.empty() ? "config: expected a mapping at the top level" : path + ": expected a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidInput(join(path, key) + ": unknown key");
  }
}

template <typename T>
T scalar(const YAML::Node& v, const Path& path) {
  if (!v.IsScalar()) throw InvalidInput(path + ": expected a scalar");
  try {
    if constexpr (std::is_same_v<T, bool>) {
      return v.as<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      const auto text = v.as<std::string>();
      if (!text.empty() && text[0] == '-') throw InvalidInput(path + ": expected a non-negative integer");
      return v.as<T>();
    } else {
      return v.as<T>();
    }
  } catch (const YAML::Exception&) {
    if constexpr (std::is_same_v<T, bool>) throw InvalidInput(path + ": expected true or false");
    else if constexpr (std::is_integral_v<T>) throw InvalidInput(path + ": expected an integer");
    else if constexpr (std::is_floating_point_v<T>) throw InvalidInput(path + ": expected a number");
    else throw InvalidInput(path + ": expected a string");
  }
}

template <typename T>
void read(const YAML::Node& n, const char* key, const Path& path, T& out) {
  if (const auto v = n[key]) out = scalar<T>(v, join(path, key));
}

template <typename T>
void read_list(const YAML::Node& n, const char* key, const Path& path, std::vector<T>& out) {
  const auto v = n[key];
  if (!v) return;
  const Path p = join(path, key);
  if (!v.IsSequence()) throw InvalidInput(p + ": expected a list");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(scalar<T>(v[i], p + "[" + std::to_string(i) + "]"));
}

void read_token(const YAML::Node& n, const char* key, const Path& path, TokenId& out) {
  const auto v = n[key];
  if (!v) return;
  const auto text = scalar<std::string>(v, join(path, key));
  if (text.size() != 1) throw InvalidInput(join(path, key) + ": expected a single character");
  out = static_cast<unsigned char>(text[0]);
}

void read_model(const YAML::Node& n, const Path& path, ModelSpec& m) {
  check_keys(n, path, {"id", "vocab_size", "d_model", "n_layers", "n_heads", "context_len", "seed", "sae_layer"});
  if (!n["id"]) throw InvalidInput(join(path, "id") + ": required");
  read(n, "id", path, m.id);
  read(n, "vocab_size", path, m.model.vocab_size);
  read(n, "d_model", path, m.model.d_model);
  read(n, "n_layers", path, m.model.n_layers);
  read(n, "n_heads", path, m.model.n_heads);
  read(n, "context_len", path, m.model.context_len);
  read(n, "seed", path, m.model.seed);
  read(n, "sae_layer", path, m.sae_layer);
}

void overlay(const YAML::Node& root, ExperimentConfig& c) {
  if (!root || root.IsNull()) return;
  check_keys(root, "", {"seed", "corpus", "lm", "models", "sae", "attacks", "evaluation", "ablation", "analysis"});
  read(root, "seed", "", c.seed);
  if (const auto n = root["corpus"]) {
    const Path p = "corpus";
    check_keys(n, p, {"harmful_train", "benign_train", "harmful_heldout", "benign_heldout", "attack", "blackbox",
                      "min_words", "max_words", "refusal", "compliance", "vocab_size"});
    read(n, "harmful_train", p, c.corpus.harmful_train);
    read(n, "benign_train", p, c.corpus.benign_train);
    read(n, "harmful_heldout", p, c.corpus.harmful_heldout);
    read(n, "benign_heldout", p, c.corpus.benign_heldout);
    read(n, "attack", p, c.corpus.attack);
    read(n, "blackbox", p, c.corpus.blackbox);
    read(n, "min_words", p, c.corpus.min_words);
    read(n, "max_words", p, c.corpus.max_words);
    read(n, "refusal", p, c.corpus.refusal);
    read(n, "compliance", p, c.corpus.compliance);
    read(n, "vocab_size", p, c.corpus.vocab_size);
  }
  if (const auto n = root["lm"]) {
    const Path p = "lm";
    check_keys(n, p, {"epochs", "learning_rate", "batch_size", "clip_norm"});
    read(n, "epochs", p, c.lm.epochs);
    read(n, "learning_rate", p, c.lm.learning_rate);
    read(n, "batch_size", p, c.lm.batch_size);
    read(n, "clip_norm", p, c.lm.clip_norm);
  }
  if (const auto n = root["models"]) {
    if (!n.IsSequence()) throw InvalidInput("models: expected a list");
    c.models.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      ModelSpec m = ExperimentConfig::desk().models.front();
      read_model(n[i], "models[" + std::to_string(i) + "]", m);
      c.models.push_back(m);
    }
  }
  if (const auto n = root["sae"]) {
    const Path p = "sae";
    check_keys(n, p, {"expansion", "epochs", "learning_rate", "batch_size", "max_rows", "lambda_grid",
                      "selection_tolerance"});
    read(n, "expansion", p, c.sae.expansion);
    read(n, "epochs", p, c.sae.train.epochs);
    read(n, "learning_rate", p, c.sae.train.learning_rate);
    read(n, "batch_size", p, c.sae.train.batch_size);
    read(n, "max_rows", p, c.sae.max_rows);
    read_list(n, "lambda_grid", p, c.sae.lambda_grid);
    read(n, "selection_tolerance", p, c.sae.selection_tolerance);
  }
  if (const auto n = root["attacks"]) {
    check_keys(n, "attacks", {"gcg", "beast"});
    if (const auto g = n["gcg"]) {
      const Path p = "attacks.gcg";
      check_keys(g, p, {"enabled", "steps", "suffix_len", "topk", "batch", "filler", "seed", "snapshot_every"});
      read(g, "enabled", p, c.attacks.gcg);
      read(g, "steps", p, c.attacks.gcg_config.steps);
      read(g, "suffix_len", p, c.attacks.gcg_config.suffix_len);
      read(g, "topk", p, c.attacks.gcg_config.topk);
      read(g, "batch", p, c.attacks.gcg_config.batch);
      read_token(g, "filler", p, c.attacks.gcg_config.filler);
      read(g, "seed", p, c.attacks.gcg_config.seed);
      read(g, "snapshot_every", p, c.attacks.snapshot_every);
    }
    if (const auto b = n["beast"]) {
      const Path p = "attacks.beast";
      check_keys(b, p, {"enabled", "k1", "k2", "depth", "seed"});
      read(b, "enabled", p, c.attacks.beast);
      read(b, "k1", p, c.attacks.beast_config.k1);
      read(b, "k2", p, c.attacks.beast_config.k2);
      read(b, "depth", p, c.attacks.beast_config.depth);
      read(b, "seed", p, c.attacks.beast_config.seed);
    }
  }
  if (const auto n = root["evaluation"]) {
    check_keys(n, "evaluation", {"detector", "max_new_tokens"});
    read(n, "detector", "evaluation", c.evaluation.detector);
    read(n, "max_new_tokens", "evaluation", c.evaluation.max_new_tokens);
  }
  if (const auto n = root["ablation"]) {
    check_keys(n, "ablation", {"enabled", "model", "prompts", "layers"});
    read(n, "enabled", "ablation", c.ablation.enabled);
    read(n, "model", "ablation", c.ablation.model);
    read(n, "prompts", "ablation", c.ablation.prompts);
    read_list(n, "layers", "ablation", c.ablation.layers);
  }
  if (const auto n = root["analysis"]) {
    check_keys(n, "analysis", {"random_baselines", "feature_k", "bootstrap_resamples"});
    read(n, "random_baselines", "analysis", c.analysis.random_baselines);
    read(n, "feature_k", "analysis", c.analysis.feature_k);
    read(n, "bootstrap_resamples", "analysis", c.analysis.bootstrap_resamples);
  }
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml, const ExperimentConfig& base, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw InvalidInput(source + ": " + e.what());
  }
  ExperimentConfig c = base;
  try {
    overlay(root, c);
  } catch (const InvalidInput& e) {
    throw InvalidInput(source + ": " + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file, const ExperimentConfig& base) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base, file.string());
}

std::string ExperimentConfig::to_yaml() const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << seed;
  out << YAML::Key << "corpus" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "harmful_train" << YAML::Value << corpus.harmful_train;
  out << YAML::Key << "benign_train" << YAML::Value << corpus.benign_train;
  out << YAML::Key << "harmful_heldout" << YAML::Value << corpus.harmful_heldout;
  out << YAML::Key << "benign_heldout" << YAML::Value << corpus.benign_heldout;
  out << YAML::Key << "attack" << YAML::Value << corpus.attack;
  out << YAML::Key << "blackbox" << YAML::Value << corpus.blackbox;
  out << YAML::Key << "min_words" << YAML::Value << corpus.min_words;
  out << YAML::Key << "max_words" << YAML::Value << corpus.max_words;
  out << YAML::Key << "refusal" << YAML::Value << YAML::DoubleQuoted << corpus.refusal;
  out << YAML::Key << "compliance" << YAML::Value << YAML::DoubleQuoted << corpus.compliance;
  out << YAML::Key << "vocab_size" << YAML::Value << corpus.vocab_size;
  out << YAML::EndMap;
  out << YAML::Key << "lm" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << lm.epochs;
  out << YAML::Key << "learning_rate" << YAML::Value << number(lm.learning_rate);
  out << YAML::Key << "batch_size" << YAML::Value << lm.batch_size;
  out << YAML::Key << "clip_norm" << YAML::Value << number(lm.clip_norm);
  out << YAML::EndMap;
  out << YAML::Key << "models" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : models) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << m.id;
    out << YAML::Key << "vocab_size" << YAML::Value << m.model.vocab_size;
    out << YAML::Key << "d_model" << YAML::Value << m.model.d_model;
    out << YAML::Key << "n_layers" << YAML::Value << m.model.n_layers;
    out << YAML::Key << "n_heads" << YAML::Value << m.model.n_heads;
    out << YAML::Key << "context_len" << YAML::Value << m.model.context_len;
    out << YAML::Key << "seed" << YAML::Value << m.model.seed;
    out << YAML::Key << "sae_layer" << YAML::Value << m.sae_layer;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "sae" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "expansion" << YAML::Value << sae.expansion;
  out << YAML::Key << "epochs" << YAML::Value << sae.train.epochs;
  out << YAML::Key << "learning_rate" << YAML::Value << number(sae.train.learning_rate);
  out << YAML::Key << "batch_size" << YAML::Value << sae.train.batch_size;
  out << YAML::Key << "max_rows" << YAML::Value << sae.max_rows;
  out << YAML::Key << "lambda_grid" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double l : sae.lambda_grid) out << number(l);
  out << YAML::EndSeq;
  out << YAML::Key << "selection_tolerance" << YAML::Value << number(sae.selection_tolerance);
  out << YAML::EndMap;
  out << YAML::Key << "attacks" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "gcg" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << attacks.gcg;
  out << YAML::Key << "steps" << YAML::Value << attacks.gcg_config.steps;
  out << YAML::Key << "suffix_len" << YAML::Value << attacks.gcg_config.suffix_len;
  out << YAML::Key << "topk" << YAML::Value << attacks.gcg_config.topk;
  out << YAML::Key << "batch" << YAML::Value << attacks.gcg_config.batch;
  out << YAML::Key << "filler" << YAML::Value << YAML::DoubleQuoted
      << std::string(1, static_cast<char>(attacks.gcg_config.filler));
  out << YAML::Key << "seed" << YAML::Value << attacks.gcg_config.seed;
  out << YAML::Key << "snapshot_every" << YAML::Value << attacks.snapshot_every;
  out << YAML::EndMap;
  out << YAML::Key << "beast" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << attacks.beast;
  out << YAML::Key << "k1" << YAML::Value << attacks.beast_config.k1;
  out << YAML::Key << "k2" << YAML::Value << attacks.beast_config.k2;
  out << YAML::Key << "depth" << YAML::Value << attacks.beast_config.depth;
  out << YAML::Key << "seed" << YAML::Value << attacks.beast_config.seed;
  out << YAML::EndMap;
  out << YAML::EndMap;
  out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "detector" << YAML::Value << evaluation.detector;
  out << YAML::Key << "max_new_tokens" << YAML::Value << evaluation.max_new_tokens;
  out << YAML::EndMap;
  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << ablation.enabled;
  out << YAML::Key << "model" << YAML::Value << ablation.model;
  out << YAML::Key << "prompts" << YAML::Value << ablation.prompts;
  out << YAML::Key << "layers" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto l : ablation.layers) out << l;
  out << YAML::EndSeq;
  out << YAML::EndMap;
  out << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "random_baselines" << YAML::Value << analysis.random_baselines;
  out << YAML::Key << "feature_k" << YAML::Value << analysis.feature_k;
  out << YAML::Key << "bootstrap_resamples" << YAML::Value << analysis.bootstrap_resamples;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_yaml())));
  return buf;
}

}  // namespace saelab
