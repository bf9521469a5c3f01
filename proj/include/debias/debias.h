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

#ifndef DEBIAS_DEBIAS_H
#define DEBIAS_DEBIAS_H

#include <stddef.h>

#if defined(_WIN32)
#define DEBIAS_API __declspec(dllexport)
#else
#define DEBIAS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum debias_status {
  DEBIAS_OK = 0,
  DEBIAS_ERR_NULL = 1,
  DEBIAS_ERR_INVALID_ARGUMENT = 2,
  DEBIAS_ERR_CONFIG = 3,
  DEBIAS_ERR_IO = 4,
  DEBIAS_ERR_INVALID_STATE = 5,
  DEBIAS_ERR_BUDGET = 6,
  DEBIAS_ERR_DIVERGED = 7,
  DEBIAS_ERR_STAGE = 8,
  DEBIAS_ERR_INTERNAL = 9,
} debias_status;

typedef struct debias_config debias_config;
typedef struct debias_run debias_run;

typedef void (*debias_log_fn)(const char *message, void *user);

DEBIAS_API const char *debias_version(void);
DEBIAS_API const char *debias_status_name(debias_status status);

/* Message of the last failed call on this thread ("" after a success). */
DEBIAS_API const char *debias_last_error(void);
/* Stage named by the last failure on this thread, or "". */
DEBIAS_API const char *debias_last_failed_stage(void);

DEBIAS_API void debias_string_free(char *s);

/* Configuration */
DEBIAS_API debias_status debias_config_new(debias_config **out);
DEBIAS_API debias_status debias_config_load(const char *path, debias_config **out);
/* key is dotted ("corpus.train"); value is JSON, bare strings allowed. */
DEBIAS_API debias_status debias_config_set(debias_config *config, const char *key,
                                           const char *value);
DEBIAS_API debias_status debias_config_to_json(const debias_config *config, char **out);
DEBIAS_API void debias_config_free(debias_config *config);

/* Runs. A run snapshots the configuration it was opened with. */
DEBIAS_API debias_status debias_run_open(const debias_config *config, debias_log_fn log,
                                         void *user, debias_run **out);
DEBIAS_API void debias_run_close(debias_run *run);
DEBIAS_API debias_status debias_run_root(const debias_run *run, char **out);

DEBIAS_API size_t debias_stage_count(void);
DEBIAS_API const char *debias_stage_name(size_t index);

DEBIAS_API debias_status debias_run_stage(debias_run *run, const char *stage);
DEBIAS_API debias_status debias_run_pipeline(debias_run *run);

/* One adaptation run from the baseline checkpoint. ewc_lambda may be NULL. */
DEBIAS_API debias_status debias_run_adapt(debias_run *run, const char *set, const char *stop,
                                          const double *ewc_lambda, const char *system);
/* system NULL translates every checkpoint of the run. */
DEBIAS_API debias_status debias_run_translate(debias_run *run, const char *system, size_t beam);
DEBIAS_API debias_status debias_run_rescore(debias_run *run, const char *model,
                                            const char *sources, const char *hypotheses,
                                            const char *output);
/* system NULL evaluates every system with hypotheses. */
DEBIAS_API debias_status debias_run_evaluate(debias_run *run, const char *system);

#ifdef __cplusplus
}
#endif

#endif /* DEBIAS_DEBIAS_H */
