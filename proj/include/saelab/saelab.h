/* Copyright 2026 The saelab Authors
 * SPDX-License-Identifier: Apache-2.0 */

/* C interface to the experiment harness. Handles are opaque and owned by the
 * caller, who releases them with the matching *_free function. Strings
 * returned by getters stay valid until their handle is freed. Every call
 * that can fail returns a status; saelab_last_error() describes the most
 * recent failure on the calling thread. */

#ifndef SAELAB_SAELAB_H
#define SAELAB_SAELAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(SAELAB_BUILDING_LIBRARY)
#define SAELAB_API __attribute__((visibility("default")))
#else
#define SAELAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum saelab_status {
  SAELAB_OK = 0,
  SAELAB_INVALID_INPUT = 1,
  SAELAB_DEGENERATE_INPUT = 2,
  SAELAB_TRAINING_FAILURE = 3,
  SAELAB_IO_ERROR = 4,
  SAELAB_STAGE_FAILURE = 5,
  SAELAB_INTERNAL_ERROR = 99
} saelab_status;

typedef struct saelab_config saelab_config;
typedef struct saelab_run saelab_run;
typedef struct saelab_report saelab_report;

SAELAB_API const char* saelab_version(void);
SAELAB_API const char* saelab_status_name(saelab_status status);
/* Empty when the last call on this thread succeeded. */
SAELAB_API const char* saelab_last_error(void);

/* Configuration. */
SAELAB_API saelab_status saelab_config_desk(saelab_config** out);
SAELAB_API saelab_status saelab_config_paper_scale(saelab_config** out);
/* Overlays a YAML file (or, with saelab_config_parse, a YAML string) on base. */
SAELAB_API saelab_status saelab_config_load(const char* path, const saelab_config* base, saelab_config** out);
SAELAB_API saelab_status saelab_config_parse(const char* yaml, const saelab_config* base, saelab_config** out);
SAELAB_API saelab_status saelab_config_set_seed(saelab_config* config, uint64_t seed);
SAELAB_API saelab_status saelab_config_seed(const saelab_config* config, uint64_t* seed);
SAELAB_API const char* saelab_config_hash(saelab_config* config);
SAELAB_API const char* saelab_config_yaml(saelab_config* config);
SAELAB_API void saelab_config_free(saelab_config* config);

/* Stages: gen-corpus, train-lm, train-sae, attack, transfer, analyze, stats.
 * A stage that fails still yields a run handle and returns
 * SAELAB_STAGE_FAILURE. */
SAELAB_API size_t saelab_stage_count(void);
SAELAB_API const char* saelab_stage_name(size_t index);
SAELAB_API saelab_status saelab_run_stage(const saelab_config* config, const char* out_root, const char* stage,
                                          saelab_run** out);
SAELAB_API saelab_status saelab_run_pipeline(const saelab_config* config, const char* out_root, saelab_run** out);
SAELAB_API saelab_status saelab_run_open(const char* run_dir, saelab_run** out);

SAELAB_API const char* saelab_run_dir(const saelab_run* run);
SAELAB_API const char* saelab_run_config_hash(const saelab_run* run);
SAELAB_API int saelab_run_ok(const saelab_run* run);
SAELAB_API size_t saelab_run_stage_records(const saelab_run* run);
/* Any of name, status and error may be null. */
SAELAB_API saelab_status saelab_run_stage_record(const saelab_run* run, size_t index, const char** name,
                                                 const char** status, const char** error);
SAELAB_API size_t saelab_run_artifact_count(const saelab_run* run);
SAELAB_API const char* saelab_run_artifact(const saelab_run* run, size_t index);
SAELAB_API void saelab_run_free(saelab_run* run);

/* Writes <run_dir>/report. Returns SAELAB_STAGE_FAILURE when sections are
 * missing; the handle is still produced. */
SAELAB_API saelab_status saelab_export_report(const char* run_dir, saelab_report** out);
SAELAB_API const char* saelab_report_dir(const saelab_report* report);
SAELAB_API size_t saelab_report_present_count(const saelab_report* report);
SAELAB_API const char* saelab_report_present(const saelab_report* report, size_t index);
SAELAB_API size_t saelab_report_missing_count(const saelab_report* report);
SAELAB_API const char* saelab_report_missing(const saelab_report* report, size_t index);
SAELAB_API void saelab_report_free(saelab_report* report);

#ifdef __cplusplus
}
#endif

#endif /* SAELAB_SAELAB_H */
