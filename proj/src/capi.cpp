// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/saelab.h"

#include <exception>
#include <new>
#include <string>

#include "saelab/harness.hpp"

struct saelab_config {
  saelab::ExperimentConfig value;
  std::string hash;
  std::string yaml;
};

struct saelab_run {
  saelab::RunManifest value;
  std::string dir;
};

struct saelab_report {
  saelab::ReportOutcome value;
  std::string dir;
};

namespace {

thread_local std::string last_error;

saelab_status status_of(saelab::ErrorCode code) {
  switch (code) {
    case saelab::ErrorCode::invalid_input: return SAELAB_INVALID_INPUT;
    case saelab::ErrorCode::degenerate_input: return SAELAB_DEGENERATE_INPUT;
    case saelab::ErrorCode::training_failure: return SAELAB_TRAINING_FAILURE;
    case saelab::ErrorCode::io_error: return SAELAB_IO_ERROR;
    case saelab::ErrorCode::stage_failure: return SAELAB_STAGE_FAILURE;
  }
  return SAELAB_INTERNAL_ERROR;
}

template <typename F>
saelab_status guarded(F&& f) {
  last_error.clear();
  try {
    return f();
  } catch (const saelab::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return SAELAB_INTERNAL_ERROR;
}

saelab_status null_argument(const char* what) {
  last_error = std::string(what) + " must not be null";
  return SAELAB_INVALID_INPUT;
}

saelab_status finish_run(saelab::RunManifest m, saelab_run** out) {
  *out = new saelab_run{m, m.run_dir.string()};
  for (const auto& s : m.stages)
    if (s.status == "failed") {
      last_error = s.name + ": " + s.error;
      return SAELAB_STAGE_FAILURE;
    }
  return SAELAB_OK;
}

}  // namespace

extern "C" {

const char* saelab_version(void) {
  static const std::string v = saelab::code_version();
  return v.c_str();
}

const char* saelab_status_name(saelab_status status) {
  switch (status) {
    case SAELAB_OK: return "ok";
    case SAELAB_INVALID_INPUT: return "invalid input";
    case SAELAB_DEGENERATE_INPUT: return "degenerate input";
    case SAELAB_TRAINING_FAILURE: return "training failure";
    case SAELAB_IO_ERROR: return "i/o error";
    case SAELAB_STAGE_FAILURE: return "stage failure";
    case SAELAB_INTERNAL_ERROR: return "internal error";
  }
  return "unknown status";
}

const char* saelab_last_error(void) { return last_error.c_str(); }

saelab_status saelab_config_desk(saelab_config** out) {
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new saelab_config{saelab::ExperimentConfig::desk(), {}, {}};
    return SAELAB_OK;
  });
}

saelab_status saelab_config_paper_scale(saelab_config** out) {
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new saelab_config{saelab::ExperimentConfig::paper_scale(), {}, {}};
    return SAELAB_OK;
  });
}

saelab_status saelab_config_load(const char* path, const saelab_config* base, saelab_config** out) {
  if (!path) return null_argument("path");
  if (!base) return null_argument("base");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new saelab_config{saelab::load_config(path, base->value), {}, {}};
    return SAELAB_OK;
  });
}

saelab_status saelab_config_parse(const char* yaml, const saelab_config* base, saelab_config** out) {
  if (!yaml) return null_argument("yaml");
  if (!base) return null_argument("base");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new saelab_config{saelab::parse_config(yaml, base->value), {}, {}};
    return SAELAB_OK;
  });
}

saelab_status saelab_config_set_seed(saelab_config* config, uint64_t seed) {
  if (!config) return null_argument("config");
  config->value.seed = seed;
  return SAELAB_OK;
}

saelab_status saelab_config_seed(const saelab_config* config, uint64_t* seed) {
  if (!config) return null_argument("config");
  if (!seed) return null_argument("seed");
  *seed = config->value.seed;
  return SAELAB_OK;
}

const char* saelab_config_hash(saelab_config* config) {
  if (!config) return "";
  config->hash = config->value.hash();
  return config->hash.c_str();
}

const char* saelab_config_yaml(saelab_config* config) {
  if (!config) return "";
  config->yaml = config->value.to_yaml();
  return config->yaml.c_str();
}

void saelab_config_free(saelab_config* config) { delete config; }

size_t saelab_stage_count(void) { return saelab::all_stages().size(); }

const char* saelab_stage_name(size_t index) {
  static const auto names = [] {
    std::vector<std::string> n;
    for (auto s : saelab::all_stages()) n.push_back(saelab::to_string(s));
    return n;
  }();
  return index < names.size() ? names[index].c_str() : nullptr;
}

saelab_status saelab_run_stage(const saelab_config* config, const char* out_root, const char* stage,
                               saelab_run** out) {
  if (!config) return null_argument("config");
  if (!out_root) return null_argument("out_root");
  if (!stage) return null_argument("stage");
  if (!out) return null_argument("out");
  return guarded([&] {
    const auto s = saelab::parse_stage(stage);
    return finish_run(saelab::run_stage(config->value, out_root, s), out);
  });
}

saelab_status saelab_run_pipeline(const saelab_config* config, const char* out_root, saelab_run** out) {
  if (!config) return null_argument("config");
  if (!out_root) return null_argument("out_root");
  if (!out) return null_argument("out");
  return guarded([&] { return finish_run(saelab::run_pipeline(config->value, out_root), out); });
}

saelab_status saelab_run_open(const char* run_dir, saelab_run** out) {
  if (!run_dir) return null_argument("run_dir");
  if (!out) return null_argument("out");
  return guarded([&] {
    auto m = saelab::load_manifest(run_dir);
    *out = new saelab_run{m, m.run_dir.string()};
    return SAELAB_OK;
  });
}

const char* saelab_run_dir(const saelab_run* run) { return run ? run->dir.c_str() : ""; }
const char* saelab_run_config_hash(const saelab_run* run) { return run ? run->value.config_hash.c_str() : ""; }
int saelab_run_ok(const saelab_run* run) { return run && run->value.ok() ? 1 : 0; }
size_t saelab_run_stage_records(const saelab_run* run) { return run ? run->value.stages.size() : 0; }

saelab_status saelab_run_stage_record(const saelab_run* run, size_t index, const char** name, const char** status,
                                      const char** error) {
  if (!run) return null_argument("run");
  if (index >= run->value.stages.size()) {
    last_error = "stage record index out of range";
    return SAELAB_INVALID_INPUT;
  }
  const auto& s = run->value.stages[index];
  if (name) *name = s.name.c_str();
  if (status) *status = s.status.c_str();
  if (error) *error = s.error.c_str();
  return SAELAB_OK;
}

size_t saelab_run_artifact_count(const saelab_run* run) { return run ? run->value.artifacts.size() : 0; }

const char* saelab_run_artifact(const saelab_run* run, size_t index) {
  if (!run || index >= run->value.artifacts.size()) return nullptr;
  return run->value.artifacts[index].c_str();
}

void saelab_run_free(saelab_run* run) { delete run; }

saelab_status saelab_export_report(const char* run_dir, saelab_report** out) {
  if (!run_dir) return null_argument("run_dir");
  if (!out) return null_argument("out");
  return guarded([&] {
    auto r = saelab::export_report(run_dir);
    *out = new saelab_report{r, r.dir.string()};
    if (r.complete()) return SAELAB_OK;
    last_error = std::to_string(r.missing.size()) + " report section(s) absent";
    return SAELAB_STAGE_FAILURE;
  });
}

const char* saelab_report_dir(const saelab_report* report) { return report ? report->dir.c_str() : ""; }
size_t saelab_report_present_count(const saelab_report* report) { return report ? report->value.present.size() : 0; }

const char* saelab_report_present(const saelab_report* report, size_t index) {
  if (!report || index >= report->value.present.size()) return nullptr;
  return report->value.present[index].c_str();
}

size_t saelab_report_missing_count(const saelab_report* report) { return report ? report->value.missing.size() : 0; }

const char* saelab_report_missing(const saelab_report* report, size_t index) {
  if (!report || index >= report->value.missing.size()) return nullptr;
  return report->value.missing[index].c_str();
}

void saelab_report_free(saelab_report* report) { delete report; }

}  // extern "C"
