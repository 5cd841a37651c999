// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C API.
//
// Exit codes: 0 success, 1 invalid input or unreadable files, 2 a stage
// failed or the report is incomplete.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "saelab/saelab.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool paper_scale = false;
  std::string run_dir;
};

using ConfigPtr = std::unique_ptr<saelab_config, decltype(&saelab_config_free)>;
using RunPtr = std::unique_ptr<saelab_run, decltype(&saelab_run_free)>;
using ReportPtr = std::unique_ptr<saelab_report, decltype(&saelab_report_free)>;

int exit_code(saelab_status s) {
  switch (s) {
    case SAELAB_OK: return 0;
    case SAELAB_STAGE_FAILURE:
    case SAELAB_TRAINING_FAILURE: return 2;
    default: return 1;
  }
}

int fail(saelab_status s) {
  std::fprintf(stderr, "saelab: %s: %s\n", saelab_status_name(s), saelab_last_error());
  return exit_code(s);
}

ConfigPtr load(const Options& o, saelab_status& status) {
  saelab_config* base = nullptr;
  status = o.paper_scale ? saelab_config_paper_scale(&base) : saelab_config_desk(&base);
  ConfigPtr cfg(base, &saelab_config_free);
  if (status != SAELAB_OK) return ConfigPtr(nullptr, &saelab_config_free);
  if (!o.config.empty()) {
    saelab_config* loaded = nullptr;
    status = saelab_config_load(o.config.c_str(), cfg.get(), &loaded);
    if (status != SAELAB_OK) return ConfigPtr(nullptr, &saelab_config_free);
    cfg.reset(loaded);
  }
  if (o.seed) saelab_config_set_seed(cfg.get(), *o.seed);
  return cfg;
}

void print_run(const saelab_run* run) {
  std::printf("run %s\n", saelab_run_dir(run));
  for (std::size_t i = 0; i < saelab_run_stage_records(run); ++i) {
    const char *name = nullptr, *status = nullptr, *error = nullptr;
    saelab_run_stage_record(run, i, &name, &status, &error);
    if (*error)
      std::printf("  %-10s %s: %s\n", name, status, error);
    else
      std::printf("  %-10s %s\n", name, status);
  }
}

int report(const std::string& run_dir) {
  saelab_report* raw = nullptr;
  const saelab_status s = saelab_export_report(run_dir.c_str(), &raw);
  ReportPtr r(raw, &saelab_report_free);
  if (!r) return fail(s);
  std::printf("report %s\n", saelab_report_dir(r.get()));
  for (std::size_t i = 0; i < saelab_report_present_count(r.get()); ++i)
    std::printf("  %-16s written\n", saelab_report_present(r.get(), i));
  for (std::size_t i = 0; i < saelab_report_missing_count(r.get()); ++i)
    std::printf("  %-16s absent\n", saelab_report_missing(r.get(), i));
  return s == SAELAB_OK ? 0 : fail(s);
}

int run_stage(const Options& o, const std::string& stage) {
  saelab_status s;
  auto cfg = load(o, s);
  if (!cfg) return fail(s);
  saelab_run* raw = nullptr;
  s = stage == "pipeline" ? saelab_run_pipeline(cfg.get(), o.out.c_str(), &raw)
                          : saelab_run_stage(cfg.get(), o.out.c_str(), stage.c_str(), &raw);
  RunPtr run(raw, &saelab_run_free);
  if (run) print_run(run.get());
  if (s != SAELAB_OK) return fail(s);
  if (stage == "pipeline") return report(saelab_run_dir(run.get()));
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("-c,--config", o.config, "YAML file overlaid on the defaults")->check(CLI::ExistingFile);
  sub->add_option("-s,--seed", o.seed, "Experiment seed");
  sub->add_option("-o,--out", o.out, "Output root; runs go to <out>/<config hash>");
  sub->add_flag("--paper-scale", o.paper_scale, "Start from the full-size defaults instead of the desk ones");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saelab: adversarial suffix experiments on SAE-routed language models"};
  app.set_version_flag("--version", std::string(saelab_version()));
  app.require_subcommand(1);
  Options o;

  std::vector<std::pair<std::string, std::string>> stages;
  for (std::size_t i = 0; i < saelab_stage_count(); ++i) stages.emplace_back(saelab_stage_name(i), "");
  stages[0].second = "Generate the prompt corpus";
  stages[1].second = "Train the language models";
  stages[2].second = "Train SAEs over the sparsity grid and pick one per model";
  stages[3].second = "Run suffix attacks under PROMPT, BASE and SAE";
  stages[4].second = "Evaluate suffix transfer across models";
  stages[5].second = "Gradient spectra and feature overlap";
  stages[6].second = "Statistical tests and tables";

  std::string chosen;
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, o);
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage, then write the report");
  add_common(pipeline, o);
  pipeline->callback([&] { chosen = "pipeline"; });

  auto* rep = app.add_subcommand("report", "Write markdown and CSV tables for a run");
  add_common(rep, o);
  rep->add_option("-r,--run-dir", o.run_dir, "Run directory (default: derived from the configuration)");
  rep->callback([&] { chosen = "report"; });

  auto* show = app.add_subcommand("config", "Print the resolved configuration and its hash");
  add_common(show, o);
  show->callback([&] { chosen = "config"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (chosen == "config") {
    saelab_status s;
    auto cfg = load(o, s);
    if (!cfg) return fail(s);
    std::printf("# hash %s\n%s", saelab_config_hash(cfg.get()), saelab_config_yaml(cfg.get()));
    return 0;
  }
  if (chosen == "report") {
    if (!o.run_dir.empty()) return report(o.run_dir);
    saelab_status s;
    auto cfg = load(o, s);
    if (!cfg) return fail(s);
    return report(o.out + "/" + saelab_config_hash(cfg.get()));
  }
  return run_stage(o, chosen);
}
