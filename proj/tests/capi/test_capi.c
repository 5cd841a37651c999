/* Copyright 2026 The saelab Authors
 * SPDX-License-Identifier: Apache-2.0 */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "saelab/saelab.h"

static int failures = 0;

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: CHECK failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static const char* tiny_yaml =
    "seed: 5\n"
    "corpus: {harmful_train: 10, benign_train: 10, harmful_heldout: 10, benign_heldout: 10, attack: 10, blackbox: 10}\n"
    "lm: {epochs: 1}\n"
    "models:\n"
    "  - {id: a, d_model: 8, n_layers: 2, n_heads: 2, context_len: 64, sae_layer: 1}\n"
    "  - {id: b, d_model: 8, n_layers: 2, n_heads: 2, context_len: 64, sae_layer: 1, seed: 9}\n"
    "sae: {expansion: 2, epochs: 1, max_rows: 64, lambda_grid: [0.5]}\n"
    "attacks:\n"
    "  gcg: {steps: 2, suffix_len: 2, topk: 4, batch: 2, snapshot_every: 1}\n"
    "  beast: {enabled: false}\n"
    "evaluation: {max_new_tokens: 16}\n"
    "ablation: {model: a, prompts: 5, layers: [1]}\n"
    "analysis: {random_baselines: 2, bootstrap_resamples: 100}\n";

int main(int argc, char** argv) {
  const char* root = argc > 1 ? argv[1] : "saelab-capi-out";
  saelab_config* desk = NULL;
  saelab_config* tiny = NULL;
  saelab_config* bad = NULL;
  saelab_run* run = NULL;
  saelab_report* report = NULL;

  CHECK(strlen(saelab_version()) > 0);
  CHECK(strcmp(saelab_status_name(SAELAB_STAGE_FAILURE), "stage failure") == 0);

  CHECK(saelab_config_desk(&desk) == SAELAB_OK);
  CHECK(strlen(saelab_config_hash(desk)) == 16);
  CHECK(strstr(saelab_config_yaml(desk), "models:") != NULL);
  CHECK(saelab_config_set_seed(desk, 77) == SAELAB_OK);
  {
    uint64_t seed = 0;
    CHECK(saelab_config_seed(desk, &seed) == SAELAB_OK && seed == 77);
  }

  CHECK(saelab_config_parse("attacks:\n  gcg:\n    stepz: 1\n", desk, &bad) == SAELAB_INVALID_INPUT);
  CHECK(bad == NULL);
  CHECK(strstr(saelab_last_error(), "attacks.gcg.stepz") != NULL);
  CHECK(saelab_config_load("/nonexistent/config.yaml", desk, &bad) == SAELAB_IO_ERROR);
  CHECK(saelab_config_desk(NULL) == SAELAB_INVALID_INPUT);

  CHECK(saelab_stage_count() == 7);
  CHECK(strcmp(saelab_stage_name(0), "gen-corpus") == 0);
  CHECK(saelab_stage_name(7) == NULL);
  CHECK(saelab_run_stage(desk, root, "train", &run) == SAELAB_INVALID_INPUT);
  CHECK(run == NULL);

  {
    char empty[1024];
    snprintf(empty, sizeof empty, "%s/empty-run", root);
    CHECK(saelab_export_report(empty, &report) == SAELAB_STAGE_FAILURE);
  }
  CHECK(report != NULL);
  if (report) {
    CHECK(saelab_report_missing_count(report) > 0);
    CHECK(saelab_report_present_count(report) == 0);
    saelab_report_free(report);
    report = NULL;
  }

  CHECK(saelab_config_parse(tiny_yaml, desk, &tiny) == SAELAB_OK);
  if (tiny) {
    saelab_status s = saelab_run_pipeline(tiny, root, &run);
    if (s != SAELAB_OK) fprintf(stderr, "pipeline: %s\n", saelab_last_error());
    CHECK(s == SAELAB_OK);
    CHECK(run != NULL);
    if (run) {
      size_t i;
      CHECK(saelab_run_ok(run) == 1);
      CHECK(strcmp(saelab_run_config_hash(run), saelab_config_hash(tiny)) == 0);
      CHECK(saelab_run_stage_records(run) == 7);
      for (i = 0; i < saelab_run_stage_records(run); ++i) {
        const char* name = NULL;
        const char* status = NULL;
        CHECK(saelab_run_stage_record(run, i, &name, &status, NULL) == SAELAB_OK);
        CHECK(strcmp(name, saelab_stage_name(i)) == 0);
        CHECK(strcmp(status, "ok") == 0);
      }
      CHECK(saelab_run_stage_record(run, 99, NULL, NULL, NULL) == SAELAB_INVALID_INPUT);
      CHECK(saelab_run_artifact_count(run) > 0);
      CHECK(saelab_run_artifact(run, saelab_run_artifact_count(run)) == NULL);

      CHECK(saelab_export_report(saelab_run_dir(run), &report) == SAELAB_OK);
      CHECK(saelab_report_missing_count(report) == 0);
      saelab_report_free(report);

      {
        saelab_run* reopened = NULL;
        CHECK(saelab_run_open(saelab_run_dir(run), &reopened) == SAELAB_OK);
        CHECK(saelab_run_ok(reopened) == 1);
        saelab_run_free(reopened);
      }
      saelab_run_free(run);
    }
  }

  saelab_config_free(tiny);
  saelab_config_free(desk);
  saelab_run_free(NULL);
  if (failures) fprintf(stderr, "%d check(s) failed\n", failures);
  return failures ? 1 : 0;
}
