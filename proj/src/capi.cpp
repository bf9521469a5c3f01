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

#include "debias/debias.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "debias/error.hpp"
#include "debias/pipeline.hpp"

struct debias_config {
  debias::PipelineConfig value;
};

struct debias_run {
  debias::Pipeline pipeline;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_stage;

debias_status fail(debias_status status, const std::string& message, std::string stage = {}) {
  g_error = message;
  g_stage = std::move(stage);
  return status;
}

debias_status ok() {
  g_error.clear();
  g_stage.clear();
  return DEBIAS_OK;
}

// Maps the exception in flight to a status code.
debias_status translate_exception(const std::string& stage = {}) {
  try {
    throw;
  } catch (const debias::StageFailure& e) {
    return fail(DEBIAS_ERR_STAGE, e.what(), e.stage());
  } catch (const debias::ConfigError& e) {
    return fail(DEBIAS_ERR_CONFIG, e.what(), stage);
  } catch (const debias::InvalidArgument& e) {
    return fail(stage.empty() ? DEBIAS_ERR_INVALID_ARGUMENT : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (const debias::IoError& e) {
    return fail(stage.empty() ? DEBIAS_ERR_IO : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (const debias::BudgetExceeded& e) {
    return fail(stage.empty() ? DEBIAS_ERR_BUDGET : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (const debias::TrainingDivergence& e) {
    return fail(stage.empty() ? DEBIAS_ERR_DIVERGED : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (const debias::InvalidState& e) {
    return fail(stage.empty() ? DEBIAS_ERR_INVALID_STATE : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (const std::bad_alloc&) {
    return fail(DEBIAS_ERR_INTERNAL, "out of memory", stage);
  } catch (const std::exception& e) {
    return fail(stage.empty() ? DEBIAS_ERR_INTERNAL : DEBIAS_ERR_STAGE, e.what(), stage);
  } catch (...) {
    return fail(DEBIAS_ERR_INTERNAL, "unknown error", stage);
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* debias_version(void) { return "0.1.0"; }

const char* debias_status_name(debias_status status) {
  switch (status) {
    case DEBIAS_OK: return "ok";
    case DEBIAS_ERR_NULL: return "null argument";
    case DEBIAS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DEBIAS_ERR_CONFIG: return "invalid config";
    case DEBIAS_ERR_IO: return "i/o error";
    case DEBIAS_ERR_INVALID_STATE: return "invalid state";
    case DEBIAS_ERR_BUDGET: return "budget exceeded";
    case DEBIAS_ERR_DIVERGED: return "training diverged";
    case DEBIAS_ERR_STAGE: return "stage failure";
    case DEBIAS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* debias_last_error(void) { return g_error.c_str(); }
const char* debias_last_failed_stage(void) { return g_stage.c_str(); }

void debias_string_free(char* s) { std::free(s); }

debias_status debias_config_new(debias_config** out) {
  if (out == nullptr) return fail(DEBIAS_ERR_NULL, "out is null");
  *out = nullptr;
  try {
    *out = new debias_config{};
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

debias_status debias_config_load(const char* path, debias_config** out) {
  if (path == nullptr || out == nullptr) return fail(DEBIAS_ERR_NULL, "path or out is null");
  *out = nullptr;
  try {
    *out = new debias_config{debias::PipelineConfig::load(path)};
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

debias_status debias_config_set(debias_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr) {
    return fail(DEBIAS_ERR_NULL, "config, key or value is null");
  }
  try {
    config->value.set(key, value);
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

debias_status debias_config_to_json(const debias_config* config, char** out) {
  if (config == nullptr || out == nullptr) return fail(DEBIAS_ERR_NULL, "config or out is null");
  try {
    *out = copy_string(config->value.to_json().dump(2));
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

void debias_config_free(debias_config* config) { delete config; }

debias_status debias_run_open(const debias_config* config, debias_log_fn log, void* user,
                              debias_run** out) {
  if (config == nullptr || out == nullptr) return fail(DEBIAS_ERR_NULL, "config or out is null");
  *out = nullptr;
  try {
    debias::LogSink sink;
    if (log != nullptr) sink = [log, user](const std::string& m) { log(m.c_str(), user); };
    *out = new debias_run{debias::Pipeline(config->value, std::move(sink))};
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

void debias_run_close(debias_run* run) { delete run; }

debias_status debias_run_root(const debias_run* run, char** out) {
  if (run == nullptr || out == nullptr) return fail(DEBIAS_ERR_NULL, "run or out is null");
  try {
    *out = copy_string(run->pipeline.layout().root().string());
  } catch (...) {
    return translate_exception();
  }
  return ok();
}

size_t debias_stage_count(void) { return debias::all_stages().size(); }

const char* debias_stage_name(size_t index) {
  const auto& stages = debias::all_stages();
  if (index >= stages.size()) return nullptr;
  return debias::stage_name(stages[index]).data();
}

debias_status debias_run_stage(debias_run* run, const char* stage) {
  if (run == nullptr || stage == nullptr) return fail(DEBIAS_ERR_NULL, "run or stage is null");
  const auto parsed = debias::parse_stage(stage);
  if (!parsed) return fail(DEBIAS_ERR_INVALID_ARGUMENT, std::string("unknown stage '") + stage + "'");
  try {
    run->pipeline.run_stage(*parsed);
  } catch (...) {
    return translate_exception(stage);
  }
  return ok();
}

debias_status debias_run_pipeline(debias_run* run) {
  if (run == nullptr) return fail(DEBIAS_ERR_NULL, "run is null");
  try {
    run->pipeline.run_all();
  } catch (...) {
    return translate_exception("pipeline");
  }
  return ok();
}

debias_status debias_run_adapt(debias_run* run, const char* set, const char* stop,
                               const double* ewc_lambda, const char* system) {
  if (run == nullptr || set == nullptr || stop == nullptr || system == nullptr) {
    return fail(DEBIAS_ERR_NULL, "run, set, stop or system is null");
  }
  debias::StopRule rule;
  try {
    rule = debias::StopRule::parse(stop);
  } catch (...) {
    return translate_exception();
  }
  try {
    std::optional<double> lambda;
    if (ewc_lambda != nullptr) lambda = *ewc_lambda;
    run->pipeline.adapt(set, rule, lambda, system);
  } catch (...) {
    return translate_exception("adapt");
  }
  return ok();
}

debias_status debias_run_translate(debias_run* run, const char* system, size_t beam) {
  if (run == nullptr) return fail(DEBIAS_ERR_NULL, "run is null");
  try {
    if (system == nullptr && beam == 0) {
      run->pipeline.run_stage(debias::Stage::Translate);
    } else if (system == nullptr) {
      for (const auto& s : debias::decoded_systems()) {
        if (std::filesystem::exists(run->pipeline.layout().model(s))) {
          run->pipeline.translate(s, beam);
        }
      }
    } else {
      run->pipeline.translate(system, beam == 0 ? run->pipeline.config().beam : beam);
    }
  } catch (...) {
    return translate_exception("translate");
  }
  return ok();
}

debias_status debias_run_rescore(debias_run* run, const char* model, const char* sources,
                                 const char* hypotheses, const char* output) {
  if (run == nullptr) return fail(DEBIAS_ERR_NULL, "run is null");
  try {
    if (model == nullptr && sources == nullptr && hypotheses == nullptr && output == nullptr) {
      run->pipeline.run_stage(debias::Stage::Rescore);
    } else if (model == nullptr || sources == nullptr || hypotheses == nullptr ||
               output == nullptr) {
      return fail(DEBIAS_ERR_NULL, "model, sources, hypotheses and output must all be given");
    } else {
      run->pipeline.rescore_file(model, sources, hypotheses, output);
    }
  } catch (...) {
    return translate_exception("rescore");
  }
  return ok();
}

debias_status debias_run_evaluate(debias_run* run, const char* system) {
  if (run == nullptr) return fail(DEBIAS_ERR_NULL, "run is null");
  try {
    if (system == nullptr) {
      run->pipeline.run_stage(debias::Stage::Evaluate);
    } else {
      run->pipeline.evaluate(system);
    }
  } catch (...) {
    return translate_exception("evaluate");
  }
  return ok();
}

}  // extern "C"
