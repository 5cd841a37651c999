// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration. Every stage reads its inputs from and writes its
// outputs to the run directory <out>/<config hash>, so stages can run one at
// a time from the CLI or back to back through run_pipeline.
//
// Run directory layout:
//   config.yaml            canonical configuration
//   corpus.tsv
//   models/<id>/           checkpoints
//   saes/<id>/<variant>/   SAE checkpoints
//   snapshots/*.bin        GCG gradient snapshots, one stacked matrix per run
//   logs/<stage>.jsonl     per-stage records
//   results.jsonl          all stage logs concatenated in stage order
//   report/                markdown and CSV tables
//   manifest.json          stages, timestamps and the artifact list

#ifndef SAELAB_HARNESS_HPP
#define SAELAB_HARNESS_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "saelab/config.hpp"

namespace saelab {

enum class Stage { gen_corpus, train_lm, train_sae, attack, transfer, analyze, stats };

std::string to_string(Stage s);
Stage parse_stage(const std::string& text);
std::vector<Stage> all_stages();

struct StageRecord {
  std::string name;
  std::string status;  // ok | failed | skipped
  std::string error;
  std::string started;
  std::string finished;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::string created;
  std::vector<StageRecord> stages;
  std::vector<std::string> artifacts;  // relative to run_dir, sorted

  bool ok() const;
  const StageRecord* stage(const std::string& name) const;
};

std::string code_version();

std::filesystem::path run_directory(const ExperimentConfig& config, const std::filesystem::path& out_root);

/// Runs one stage and refreshes the manifest. A stage whose inputs are
/// missing fails with a message naming them.
RunManifest run_stage(const ExperimentConfig& config, const std::filesystem::path& out_root, Stage stage);

/// All stages in order. A failed stage is recorded and every stage depending
/// on it is skipped.
RunManifest run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_root);

RunManifest load_manifest(const std::filesystem::path& run_dir);

struct ReportOutcome {
  std::filesystem::path dir;
  std::vector<std::string> present;
  std::vector<std::string> missing;
  bool complete() const { return missing.empty(); }
};

/// Writes report/report.md and the CSV tables from results.jsonl. Sections
/// without inputs are marked absent.
ReportOutcome export_report(const std::filesystem::path& run_dir);

/// SAELAB_WORKERS if set, else the hardware concurrency (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. The first
/// exception by index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace saelab

#endif  // SAELAB_HARNESS_HPP
