/*
 * Copyright 2026 The debias-nmt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#include "debias/debias.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static void count_lines(const char *message, void *user) {
  (void)message;
  ++*(int *)user;
}

static int file_exists(const char *path) { return access(path, F_OK) == 0; }

int main(void) {
  char root[256];
  snprintf(root, sizeof root, "/tmp/debias-capi-%d", (int)getpid());

  EXPECT(strlen(debias_version()) > 0);
  EXPECT(strcmp(debias_status_name(DEBIAS_OK), "ok") == 0);
  EXPECT(strcmp(debias_status_name(DEBIAS_ERR_STAGE), "stage failure") == 0);
  EXPECT(debias_stage_count() == 12);
  EXPECT(strcmp(debias_stage_name(0), "gen-lexicon") == 0);
  EXPECT(debias_stage_name(99) == NULL);

  EXPECT(debias_config_new(NULL) == DEBIAS_ERR_NULL);
  EXPECT(debias_config_load("/nonexistent/config.json", &(debias_config *){NULL}) == DEBIAS_ERR_CONFIG);
  EXPECT(strlen(debias_last_error()) > 0);

  debias_config *config = NULL;
  EXPECT(debias_config_load(DEBIAS_SOURCE_DIR "/configs/tiny.json", &config) == DEBIAS_OK);
  EXPECT(strcmp(debias_last_error(), "") == 0);
  EXPECT(debias_config_set(config, "corpus.bogus", "1") == DEBIAS_ERR_CONFIG);
  EXPECT(debias_config_set(config, "corpus.bias_ratio", "0.2") == DEBIAS_ERR_CONFIG);
  EXPECT(debias_config_set(config, NULL, "1") == DEBIAS_ERR_NULL);
  EXPECT(debias_config_set(config, "output_dir", root) == DEBIAS_OK);

  char *json = NULL;
  EXPECT(debias_config_to_json(config, &json) == DEBIAS_OK);
  EXPECT(json && strstr(json, "\"bias_ratio\": 0.9") != NULL);
  debias_string_free(json);

  int lines = 0;
  debias_run *run = NULL;
  EXPECT(debias_run_open(config, count_lines, &lines, &run) == DEBIAS_OK);
  debias_config_free(config);

  char *run_root = NULL;
  EXPECT(debias_run_root(run, &run_root) == DEBIAS_OK);
  EXPECT(run_root && strcmp(run_root, root) == 0);
  debias_string_free(run_root);

  EXPECT(debias_run_stage(run, "fly") == DEBIAS_ERR_INVALID_ARGUMENT);
  EXPECT(debias_run_stage(run, "train") == DEBIAS_ERR_STAGE);
  EXPECT(strcmp(debias_last_failed_stage(), "train") == 0);

  EXPECT(debias_run_pipeline(run) == DEBIAS_OK);
  EXPECT(lines > 0);
  EXPECT(strcmp(debias_last_failed_stage(), "") == 0);

  char path[512], hyps[512], out[512];
  snprintf(path, sizeof path, "%s/report.tsv", root);
  EXPECT(file_exists(path));

  double lambda = 1e6;
  EXPECT(debias_run_adapt(run, "handcrafted", "epochs:1", &lambda, "capi_ewc") == DEBIAS_OK);
  EXPECT(debias_run_adapt(run, "handcrafted", "sometimes", NULL, "bad") == DEBIAS_ERR_INVALID_ARGUMENT);
  EXPECT(debias_run_adapt(run, "nonsense", "epochs:1", NULL, "bad") == DEBIAS_ERR_STAGE);
  EXPECT(strcmp(debias_last_failed_stage(), "adapt") == 0);
  EXPECT(debias_run_translate(run, "capi_ewc", 1) == DEBIAS_OK);
  EXPECT(debias_run_evaluate(run, "capi_ewc") == DEBIAS_OK);
  snprintf(path, sizeof path, "%s/metrics/capi_ewc.json", root);
  EXPECT(file_exists(path));

  snprintf(path, sizeof path, "%s/data/challenge.src", root);
  snprintf(hyps, sizeof hyps, "%s/hyps/blackbox.challenge.txt", root);
  snprintf(out, sizeof out, "%s/capi_rescored.txt", root);
  EXPECT(debias_run_rescore(run, "handcrafted", path, hyps, out) == DEBIAS_OK);
  EXPECT(file_exists(out));
  EXPECT(debias_run_rescore(run, "handcrafted", path, NULL, out) == DEBIAS_ERR_NULL);

  debias_run_close(run);
  debias_run_close(NULL);
  debias_config_free(NULL);

  char cleanup[300];
  snprintf(cleanup, sizeof cleanup, "rm -rf %s", root);
  if (system(cleanup) != 0) ++failures;

  if (failures) fprintf(stderr, "%d check(s) failed\n", failures);
  else printf("capi: all checks passed\n");
  return failures ? 1 : 0;
}
