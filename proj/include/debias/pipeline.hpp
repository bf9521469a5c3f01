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

#ifndef DEBIAS_PIPELINE_HPP
#define DEBIAS_PIPELINE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "debias/corpus.hpp"
#include "debias/lattice.hpp"
#include "debias/training.hpp"

namespace debias {

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::uint64_t blackbox_seed = 7;  // independent baseline for black-box rescoring; 0 disables

  // corpus
  std::size_t professions = 40;
  std::size_t train_size = 20000;
  std::size_t valid_size = 500;
  std::size_t test_size = 500;
  std::size_t challenge_size = 400;
  double bias_ratio = 0.9;
  TemplateMix mix;

  // model
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;

  TrainOptions training;  // training.seed is replaced by seed when a Pipeline is built

  // adaptation
  std::size_t counterfactual_epochs = 1;
  std::string handcrafted_stop = "bleu:5:30";
  std::string converged_stop = "converge:200:0.01";

  // ewc
  std::size_t fisher_samples = 1000;
  std::vector<double> ewc_lambdas = {1e5, 1e6, 1e7, 1e8};
  double ewc_large_lambda = 1e15;
  double lambda_tolerance = 2.0;

  // decoding
  std::size_t beam = 4;
  std::size_t rescore_path_budget = 10000;
  std::size_t rescore_fallback_width = 4;

  // Empty: $DEBIAS_OUT when set, else ./debias-run.
  std::filesystem::path output_dir;

  nlohmann::ordered_json to_json() const;
  // Keys missing from j keep their defaults; unknown keys and ill-typed or
  // out-of-range values raise ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Overrides one value by dotted key, e.g. set("corpus.train", "2000").
  void set(std::string_view dotted_key, std::string_view json_value);

  void validate() const;
};

// Output root used when the config leaves output_dir empty.
inline constexpr const char* kOutputEnv = "DEBIAS_OUT";

// Every artifact path of a run, relative to one root directory.
class RunLayout {
 public:
  explicit RunLayout(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config() const { return root_ / "config.json"; }
  std::filesystem::path lexicon() const { return root_ / "data" / "lexicon.tsv"; }
  std::filesystem::path corpus(std::string_view split) const;  // prefix, no extension
  std::filesystem::path challenge() const { return root_ / "data" / "challenge.jsonl"; }
  std::filesystem::path stopwords() const { return root_ / "data" / "stopwords.tsv"; }
  std::filesystem::path adaptation_prefix() const { return root_ / "data" / "cf"; }
  std::filesystem::path transducer() const { return root_ / "data" / "inflections.fst"; }
  std::filesystem::path model(std::string_view system) const;
  std::filesystem::path optimizer(std::string_view system) const;
  std::filesystem::path train_log(std::string_view system) const;
  std::filesystem::path fisher() const { return root_ / "models" / "baseline.fisher"; }
  std::filesystem::path ewc_grid() const { return root_ / "ewc_grid.json"; }
  std::filesystem::path hyps(std::string_view system, std::string_view set) const;
  std::filesystem::path rescore_stats(std::string_view system) const;
  std::filesystem::path metrics(std::string_view system) const;
  std::filesystem::path report_tsv() const { return root_ / "report.tsv"; }
  std::filesystem::path report_md() const { return root_ / "report.md"; }

 private:
  std::filesystem::path root_;
};

enum class Stage {
  GenLexicon,
  GenCorpus,
  GenChallenge,
  Train,
  Counterfactual,
  Adapt,
  Fisher,
  Ewc,
  Translate,
  Rescore,
  Evaluate,
  Report,
};

const std::vector<Stage>& all_stages();
std::string_view stage_name(Stage stage);
std::optional<Stage> parse_stage(std::string_view name);

// Systems decoded directly from a checkpoint, in report order.
const std::vector<std::string>& decoded_systems();
// Rescoring rows: output system, model doing the rescoring, system whose
// hypotheses are rescored.
struct RescoreRow {
  std::string system;
  std::string model;
  std::string hypotheses;
};
const std::vector<RescoreRow>& rescore_rows();
// Every row of the report, in order.
const std::vector<std::string>& report_systems();

using LogSink = std::function<void(const std::string&)>;

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, LogSink log = {});

  const PipelineConfig& config() const { return config_; }
  const RunLayout& layout() const { return layout_; }

  // Throws StageFailure naming the stage; artifacts written so far are kept.
  void run_stage(Stage stage);
  void run_all();

  // Single adaptation run from the baseline. set is a counterfactual set
  // name, "handcrafted" or "handcrafted_no_overlap".
  TrainLog adapt(const std::string& set, const StopRule& stop, std::optional<double> ewc_lambda,
                 const std::string& system);
  void translate(const std::string& system, std::size_t beam);
  // Black-box rescoring of a hypothesis file with a stored checkpoint.
  RescoreStats rescore_file(const std::string& model, const std::filesystem::path& sources,
                            const std::filesystem::path& hypotheses,
                            const std::filesystem::path& output);
  void evaluate(const std::string& system);

 private:
  void log(const std::string& message) const;
  void dispatch(Stage stage);

  void gen_lexicon();
  void gen_corpus();
  void gen_challenge();
  void train();
  void counterfactual();
  void adapt_all();
  void fisher();
  void ewc();
  void translate_all();
  void rescore_all();
  void evaluate_all();
  void report();

  PipelineConfig config_;
  RunLayout layout_;
  LogSink log_;
};

// Report table built from metrics files present on disk.
std::string render_report_tsv(const RunLayout& layout);
std::string render_report_markdown(const RunLayout& layout);

}  // namespace debias

#endif  // DEBIAS_PIPELINE_HPP
