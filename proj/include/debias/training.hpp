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

#ifndef DEBIAS_TRAINING_HPP
#define DEBIAS_TRAINING_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "debias/error.hpp"
#include "debias/model.hpp"

namespace debias {

struct ValidationSet {
  std::vector<TokenIds> sources;
  std::vector<TokenIds> references;  // without EOS

  static ValidationSet from(const std::vector<TrainingExample>& examples);
  bool empty() const { return sources.empty(); }
};

// Corpus BLEU of greedy (or beam) decodes against the references.
double validation_bleu(const ModelParams& params, const ValidationSet& valid,
                       std::size_t beam_width = 1);

struct TrainOptions {
  std::size_t batch_size = 32;
  AdamOptions adam{.learning_rate = 2e-3};
  std::size_t eval_every = 500;  // optimizer steps between validations
  std::size_t patience = 3;      // evaluations without improvement before stopping
  double min_delta = 0.1;        // BLEU improvement that counts as progress
  std::size_t max_steps = 20000;
  std::uint64_t seed = 0;        // data order
  std::size_t valid_beam = 1;
};

struct LogRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> valid_bleu;
  std::optional<double> accuracy;
};

struct TrainLog {
  std::vector<LogRecord> records;
  std::string stop_reason;
  std::size_t steps = 0;            // optimizer steps taken in this run
  std::size_t epochs_completed = 0;  // full passes over the data
  double reference_bleu = 0.0;      // validation BLEU before the run, when measured

  void write_jsonl(const std::filesystem::path& path) const;
  static TrainLog read_jsonl(const std::filesystem::path& path);
};

// Optional hook evaluated alongside validation BLEU (e.g. challenge accuracy).
using AccuracyProbe = std::function<double(const ModelParams&)>;

struct TrainResult {
  ModelParams params;
  AdamState adam;
  TrainLog log;
};

class DivergedRun : public TrainingDivergence {
 public:
  DivergedRun(const std::string& what, std::size_t batch_index, TrainLog log)
      : TrainingDivergence(what, batch_index), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

// Trains until validation BLEU fails to improve by more than min_delta for
// `patience` consecutive evaluations; returns the best-BLEU checkpoint.
TrainResult train_baseline(const ModelParams& init, const std::vector<TrainingExample>& train,
                           const ValidationSet& valid, const TrainOptions& options,
                           const AccuracyProbe& probe = {});

struct StopRule {
  enum class Kind { Epochs, BleuDegradation, Converge };
  Kind kind = Kind::Epochs;
  std::size_t epochs = 1;             // Epochs: exact count; others: upper bound
  double degradation_pct = 5.0;       // BleuDegradation
  double loss_threshold = 0.01;       // Converge: mean epoch loss
  std::size_t eval_every_steps = 0;   // BleuDegradation: 0 = once per epoch

  static StopRule fixed_epochs(std::size_t n);
  static StopRule bleu_degradation(double pct, std::size_t max_epochs,
                                   std::size_t eval_every_steps = 0);
  static StopRule converge(std::size_t max_epochs, double loss_threshold);

  std::string describe() const;
  static StopRule parse(const std::string& text);
};

// Elastic weight consolidation term lambda * sum_j F_j (theta_j - anchor_j)^2.
struct EwcTerm {
  const ModelParams* anchor = nullptr;
  const ModelParams* fisher = nullptr;
  double lambda = 0.0;
};

double ewc_penalty(const ModelParams& params, const ModelParams& anchor, const ModelParams& fisher,
                   double lambda);
// Adds 2 * lambda * F_j * (theta_j - anchor_j) to grads.
void add_ewc_gradient(const ModelParams& params, const ModelParams& anchor,
                      const ModelParams& fisher, double lambda, ModelParams& grads);
// Closed-form minimizer of step_size * penalty + |theta - params|^2 / 2, applied
// after each optimizer update so the pull toward the anchor is not rescaled by Adam.
void apply_ewc_proximal(ModelParams& params, const ModelParams& anchor, const ModelParams& fisher,
                        double lambda, double step_size);

// Continues optimization from (params, adam) without resetting the optimizer.
TrainResult fine_tune(const ModelParams& params, const AdamState& adam,
                      const std::vector<TrainingExample>& adaptation, const ValidationSet& valid,
                      const StopRule& stop, const TrainOptions& options,
                      const std::optional<EwcTerm>& ewc = std::nullopt,
                      const AccuracyProbe& probe = {});

struct FisherEstimate {
  ModelParams values;
  std::size_t sample_count = 0;
};

// Empirical Fisher: mean over sampled pairs of the squared per-pair gradient
// of the mean token loss. Draws without replacement when n_samples does not
// exceed the pool.
FisherEstimate estimate_fisher(const ModelParams& params,
                               const std::vector<TrainingExample>& pool, std::size_t n_samples,
                               std::uint64_t seed);

void save_fisher(const FisherEstimate& fisher, const std::filesystem::path& path);
FisherEstimate load_fisher(const std::filesystem::path& path);

TrainResult fine_tune_ewc(const ModelParams& anchor, const AdamState& adam,
                          const FisherEstimate& fisher,
                          const std::vector<TrainingExample>& adaptation,
                          const ValidationSet& valid, double lambda, const StopRule& stop,
                          const TrainOptions& options, const AccuracyProbe& probe = {});

struct LambdaPoint {
  double lambda = 0.0;
  double valid_bleu = 0.0;
  double accuracy = 0.0;
  double weighted_displacement = 0.0;  // sum_j F_j (theta_j - anchor_j)^2
  TrainResult result;
};

std::vector<LambdaPoint> ewc_lambda_grid(const ModelParams& anchor, const AdamState& adam,
                                         const FisherEstimate& fisher,
                                         const std::vector<TrainingExample>& adaptation,
                                         const ValidationSet& valid,
                                         const std::vector<double>& lambdas,
                                         const StopRule& stop, const TrainOptions& options,
                                         const AccuracyProbe& accuracy);

// Largest lambda whose accuracy is within `tolerance` points of the
// unregularized reference; falls back to the most accurate point.
std::size_t select_lambda(const std::vector<LambdaPoint>& grid, double reference_accuracy,
                          double tolerance = 2.0);

}  // namespace debias

#endif  // DEBIAS_TRAINING_HPP
