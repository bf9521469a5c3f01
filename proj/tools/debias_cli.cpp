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

// Command-line front end. Talks to the library only through debias.h.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "debias/debias.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void print_log(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

int report_failure(debias_status status) {
  const std::string stage = debias_last_failed_stage();
  if (!stage.empty()) {
    std::fprintf(stderr, "error in stage %s: %s\n", stage.c_str(), debias_last_error());
  } else {
    std::fprintf(stderr, "error: %s (%s)\n", debias_last_error(), debias_status_name(status));
  }
  switch (status) {
    case DEBIAS_ERR_CONFIG:
    case DEBIAS_ERR_INVALID_ARGUMENT:
      return stage.empty() ? kExitConfig : kExitStage;
    default:
      return kExitStage;
  }
}

struct ConfigDeleter {
  void operator()(debias_config* c) const { debias_config_free(c); }
};
struct RunDeleter {
  void operator()(debias_run* r) const { debias_run_close(r); }
};
using ConfigPtr = std::unique_ptr<debias_config, ConfigDeleter>;
using RunPtr = std::unique_ptr<debias_run, RunDeleter>;

struct GlobalOptions {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=value
  std::optional<unsigned long long> seed;
  std::optional<double> bias_ratio;
  std::optional<unsigned long long> train_size;
  bool quiet = false;
};

// Builds the configuration: file, then convenience flags, then -D overrides.
std::optional<int> build_config(const GlobalOptions& g, ConfigPtr& out) {
  debias_config* raw = nullptr;
  debias_status st = g.config_path.empty() ? debias_config_new(&raw)
                                           : debias_config_load(g.config_path.c_str(), &raw);
  if (st != DEBIAS_OK) return report_failure(st);
  out.reset(raw);
  std::vector<std::pair<std::string, std::string>> sets;
  if (!g.out_dir.empty()) sets.emplace_back("output_dir", g.out_dir);
  if (g.seed) sets.emplace_back("seed", std::to_string(*g.seed));
  if (g.bias_ratio) sets.emplace_back("corpus.bias_ratio", std::to_string(*g.bias_ratio));
  if (g.train_size) sets.emplace_back("corpus.train", std::to_string(*g.train_size));
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: override '%s' is not KEY=VALUE\n", kv.c_str());
      return kExitConfig;
    }
    sets.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [key, value] : sets) {
    st = debias_config_set(out.get(), key.c_str(), value.c_str());
    if (st != DEBIAS_OK) return report_failure(st);
  }
  return std::nullopt;
}

std::optional<int> open_run(const GlobalOptions& g, RunPtr& run) {
  ConfigPtr config;
  if (auto rc = build_config(g, config)) return rc;
  debias_run* raw = nullptr;
  const debias_status st =
      debias_run_open(config.get(), g.quiet ? nullptr : print_log, nullptr, &raw);
  if (st != DEBIAS_OK) return report_failure(st);
  run.reset(raw);
  return std::nullopt;
}

int finish(debias_status st) { return st == DEBIAS_OK ? kExitOk : report_failure(st); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gender-debiasing experiments for a synthetic translation task"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "JSON configuration file");
  app.add_option("-o,--out", g.out_dir, "Output directory (default: $DEBIAS_OUT or ./debias-run)");
  app.add_option("-D,--define", g.overrides, "Override a config value, e.g. -D corpus.train=2000");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--bias-ratio", g.bias_ratio, "Share of stereotypical referents");
  app.add_option("--train-size", g.train_size, "Training pairs");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const char* name : {"gen-lexicon", "gen-corpus", "gen-challenge", "train",
                           "counterfactual", "fisher", "ewc", "report"}) {
    stage_cmds.emplace_back(app.add_subcommand(name, std::string("Run the ") + name + " stage"),
                            name);
  }

  auto* adapt = app.add_subcommand("adapt", "Fine-tune the baseline (all adaptation runs by default)");
  std::string adapt_set, adapt_stop = "epochs:1", adapt_name;
  std::optional<double> adapt_lambda;
  adapt->add_option("--set", adapt_set,
                    "original | ftrans_original | ftrans_swapped | balanced | handcrafted | "
                    "handcrafted_no_overlap");
  adapt->add_option("--stop", adapt_stop,
                    "epochs:N | bleu:PCT:MAX_EPOCHS[:EVAL_STEPS] | converge:MAX_EPOCHS:LOSS");
  adapt->add_option("--ewc-lambda", adapt_lambda, "EWC strength (uses the stored Fisher)");
  adapt->add_option("--name", adapt_name, "Checkpoint name (default: derived from the set)");

  auto* translate = app.add_subcommand("translate", "Decode challenge and test sets");
  std::string translate_model;
  std::size_t translate_beam = 0;
  translate->add_option("--model", translate_model, "Checkpoint name (default: all)");
  translate->add_option("--beam", translate_beam, "Beam width (default: from config)");

  auto* rescore = app.add_subcommand("rescore", "Lattice-rescore hypotheses with a debiased model");
  std::string rescore_model, rescore_src, rescore_hyps, rescore_output;
  rescore->add_option("--model", rescore_model, "Rescoring checkpoint name");
  rescore->add_option("--src", rescore_src, "Source sentences, one per line");
  rescore->add_option("--hyps", rescore_hyps, "Hypotheses to rescore (black-box mode)");
  rescore->add_option("--output", rescore_output, "Where to write rescored hypotheses");

  auto* evaluate = app.add_subcommand("evaluate", "Compute metrics.json files");
  std::string evaluate_system;
  evaluate->add_option("--system", evaluate_system, "System name (default: all)");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  std::string pipeline_stage;
  pipeline->add_option("--stage", pipeline_stage, "Run only this stage");

  auto* show = app.add_subcommand("config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (show->parsed()) {
    ConfigPtr config;
    if (auto rc = build_config(g, config)) return *rc;
    char* text = nullptr;
    const debias_status st = debias_config_to_json(config.get(), &text);
    if (st != DEBIAS_OK) return report_failure(st);
    std::printf("%s\n", text);
    debias_string_free(text);
    return kExitOk;
  }

  RunPtr run;
  if (auto rc = open_run(g, run)) return *rc;

  for (const auto& [cmd, name] : stage_cmds) {
    if (cmd->parsed()) return finish(debias_run_stage(run.get(), name.c_str()));
  }
  if (adapt->parsed()) {
    if (adapt_set.empty() && !adapt_lambda) return finish(debias_run_stage(run.get(), "adapt"));
    if (adapt_set.empty()) adapt_set = "handcrafted";
    if (adapt_name.empty()) {
      const bool known_hand = adapt_set.rfind("handcrafted", 0) == 0;
      adapt_name = (known_hand ? "" : "cf_") + adapt_set + (adapt_lambda ? "_ewc" : "");
    }
    return finish(debias_run_adapt(run.get(), adapt_set.c_str(), adapt_stop.c_str(),
                                   adapt_lambda ? &*adapt_lambda : nullptr, adapt_name.c_str()));
  }
  if (translate->parsed()) {
    return finish(debias_run_translate(run.get(),
                                       translate_model.empty() ? nullptr : translate_model.c_str(),
                                       translate_beam));
  }
  if (rescore->parsed()) {
    const bool any = !rescore_model.empty() || !rescore_src.empty() || !rescore_hyps.empty() ||
                     !rescore_output.empty();
    if (!any) return finish(debias_run_rescore(run.get(), nullptr, nullptr, nullptr, nullptr));
    if (rescore_model.empty() || rescore_src.empty() || rescore_hyps.empty() ||
        rescore_output.empty()) {
      std::fprintf(stderr, "error: rescore needs --model, --src, --hyps and --output together\n");
      return kExitConfig;
    }
    return finish(debias_run_rescore(run.get(), rescore_model.c_str(), rescore_src.c_str(),
                                     rescore_hyps.c_str(), rescore_output.c_str()));
  }
  if (evaluate->parsed()) {
    return finish(debias_run_evaluate(run.get(),
                                      evaluate_system.empty() ? nullptr : evaluate_system.c_str()));
  }
  if (pipeline->parsed()) {
    if (pipeline_stage.empty()) return finish(debias_run_pipeline(run.get()));
    return finish(debias_run_stage(run.get(), pipeline_stage.c_str()));
  }
  return kExitConfig;
}
