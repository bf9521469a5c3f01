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

#include "debias/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "debias/eval.hpp"
#include "debias/rng.hpp"

namespace debias {

ValidationSet ValidationSet::from(const std::vector<TrainingExample>& examples) {
  ValidationSet v;
  for (const auto& ex : examples) {
    v.sources.push_back(ex.source);
    v.references.push_back(ex.target);
  }
  return v;
}

namespace {

Sentence ids_as_words(std::span<const TokenId> ids) {
  Sentence out;
  for (TokenId i : ids) {
    if (i == kEos) break;
    out.push_back(std::to_string(i));
  }
  return out;
}

}  // namespace

double validation_bleu(const ModelParams& params, const ValidationSet& valid,
                       std::size_t beam_width) {
  if (valid.empty()) throw InvalidArgument("empty validation set");
  std::vector<Sentence> hyps, refs;
  hyps.reserve(valid.sources.size());
  refs.reserve(valid.sources.size());
  for (std::size_t i = 0; i < valid.sources.size(); ++i) {
    const auto& src = valid.sources[i];
    auto h = beam_search(params, src, beam_width, default_max_len(src.size()));
    hyps.push_back(ids_as_words(h.tokens));
    refs.push_back(ids_as_words(valid.references[i]));
  }
  return corpus_bleu(hyps, refs);
}

// ---------------------------------------------------------------------------
// Logs

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["loss"] = r.train_loss;
    j["bleu"] = r.valid_bleu ? nlohmann::ordered_json(*r.valid_bleu) : nullptr;
    j["accuracy"] = r.accuracy ? nlohmann::ordered_json(*r.accuracy) : nullptr;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json last;
  last["stop_reason"] = stop_reason;
  last["steps"] = steps;
  last["epochs_completed"] = epochs_completed;
  last["reference_bleu"] = reference_bleu;
  out << last.dump() << '\n';
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  TrainLog log;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (j.contains("stop_reason")) {
        log.stop_reason = j.at("stop_reason").get<std::string>();
        log.steps = j.at("steps").get<std::size_t>();
        log.epochs_completed = j.at("epochs_completed").get<std::size_t>();
        log.reference_bleu = j.at("reference_bleu").get<double>();
        continue;
      }
      LogRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.epoch = j.at("epoch").get<std::size_t>();
      r.train_loss = j.at("loss").get<double>();
      if (!j.at("bleu").is_null()) r.valid_bleu = j.at("bleu").get<double>();
      if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
      log.records.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return log;
}

// ---------------------------------------------------------------------------
// Shared optimization loop pieces

namespace {

class BatchStream {
 public:
  BatchStream(const std::vector<TrainingExample>& data, std::size_t batch_size,
              std::uint64_t seed)
      : data_(data), batch_size_(std::max<std::size_t>(1, batch_size)), seed_(seed) {
    order_.resize(data.size());
    reshuffle();
  }

  // Next batch of the current epoch; sets epoch_done after the last one.
  std::vector<TrainingExample> next(bool& epoch_done) {
    std::vector<TrainingExample> batch;
    const std::size_t end = std::min(pos_ + batch_size_, order_.size());
    for (std::size_t i = pos_; i < end; ++i) batch.push_back(data_[order_[i]]);
    pos_ = end;
    epoch_done = pos_ >= order_.size();
    if (epoch_done) {
      ++epoch_;
      pos_ = 0;
      reshuffle();
    }
    return batch;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, epoch_));
    rng.shuffle(order_);
  }

  const std::vector<TrainingExample>& data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

// One optimizer update; returns the (penalized) batch loss.
double update(ModelParams& params, AdamState& adam, std::span<const TrainingExample> batch,
              const TrainOptions& options, const std::optional<EwcTerm>& ewc, std::size_t step,
              const TrainLog& log) {
  LossAndGrad lg;
  try {
    lg = loss_and_grad(params, batch);
  } catch (const TrainingDivergence& e) {
    TrainLog aborted = log;
    aborted.stop_reason = "diverged";
    aborted.steps = step;
    throw DivergedRun("non-finite loss at batch " + std::to_string(step), step, aborted);
  }
  double loss = lg.loss;
  adam_step(params, lg.grads, adam, options.adam);
  if (ewc && ewc->lambda != 0.0) {
    loss += ewc_penalty(params, *ewc->anchor, *ewc->fisher, ewc->lambda);
    apply_ewc_proximal(params, *ewc->anchor, *ewc->fisher, ewc->lambda,
                       options.adam.learning_rate);
  }
  if (!params.all_finite()) {
    TrainLog aborted = log;
    aborted.stop_reason = "diverged";
    aborted.steps = step;
    throw DivergedRun("non-finite parameters after batch " + std::to_string(step), step,
                      aborted);
  }
  return loss;
}

void check_shapes(const ModelParams& a, const ModelParams& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

}  // namespace

TrainResult train_baseline(const ModelParams& init, const std::vector<TrainingExample>& train,
                           const ValidationSet& valid, const TrainOptions& options,
                           const AccuracyProbe& probe) {
  if (train.empty()) throw InvalidArgument("empty training corpus");
  if (valid.empty()) throw InvalidArgument("empty validation set");
  if (options.eval_every == 0) throw InvalidArgument("eval_every must be positive");

  TrainResult best{init, AdamState::zeros_like(init), {}};
  ModelParams params = init;
  AdamState adam = AdamState::zeros_like(init);
  TrainLog log;
  BatchStream stream(train, options.batch_size, options.seed);
  double best_bleu = -1.0;
  std::size_t stale = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  bool evaluated_last = false;

  auto evaluate = [&](std::size_t step) {
    LogRecord r;
    r.step = step;
    r.epoch = stream.epoch();
    r.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    r.valid_bleu = validation_bleu(params, valid, options.valid_beam);
    if (probe) r.accuracy = probe(params);
    log.records.push_back(r);
    loss_sum = 0.0;
    loss_count = 0;
    const double bleu = *r.valid_bleu;
    if (bleu > best_bleu + options.min_delta || best_bleu < 0.0) {
      stale = 0;
    } else {
      ++stale;
    }
    if (bleu > best_bleu) {
      best_bleu = bleu;
      best.params = params;
      best.adam = adam;
    }
  };

  std::size_t step = 0;
  while (true) {
    bool epoch_done = false;
    auto batch = stream.next(epoch_done);
    loss_sum += update(params, adam, batch, options, std::nullopt, step, log);
    ++loss_count;
    ++step;
    if (epoch_done) ++log.epochs_completed;
    evaluated_last = false;
    if (step % options.eval_every == 0) {
      evaluate(step);
      evaluated_last = true;
      if (stale >= options.patience) {
        log.stop_reason = "converged";
        break;
      }
    }
    if (step >= options.max_steps) {
      if (!evaluated_last) evaluate(step);
      log.stop_reason = "max_steps";
      break;
    }
  }
  log.steps = step;
  best.log = std::move(log);
  return best;
}

// ---------------------------------------------------------------------------
// Stop rules

StopRule StopRule::fixed_epochs(std::size_t n) {
  StopRule s;
  s.kind = Kind::Epochs;
  s.epochs = n;
  return s;
}

StopRule StopRule::bleu_degradation(double pct, std::size_t max_epochs,
                                    std::size_t eval_every_steps) {
  StopRule s;
  s.kind = Kind::BleuDegradation;
  s.degradation_pct = pct;
  s.epochs = max_epochs;
  s.eval_every_steps = eval_every_steps;
  return s;
}

StopRule StopRule::converge(std::size_t max_epochs, double loss_threshold) {
  StopRule s;
  s.kind = Kind::Converge;
  s.epochs = max_epochs;
  s.loss_threshold = loss_threshold;
  return s;
}

std::string StopRule::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Epochs: os << "epochs:" << epochs; break;
    case Kind::BleuDegradation:
      os << "bleu:" << degradation_pct << ":" << epochs;
      if (eval_every_steps) os << ":" << eval_every_steps;
      break;
    case Kind::Converge: os << "converge:" << epochs << ":" << loss_threshold; break;
  }
  return os.str();
}

StopRule StopRule::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  auto bad = [&]() { return InvalidArgument("bad stop rule '" + text + "'"); };
  auto count = [&](const std::string& field) {
    std::size_t used = 0;
    const unsigned long v = std::stoul(field, &used);
    if (used != field.size() || field.front() == '-') throw bad();
    return static_cast<std::size_t>(v);
  };
  auto real = [&](const std::string& field) {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !(v >= 0.0)) throw bad();
    return v;
  };
  try {
    if (parts.size() == 2 && parts[0] == "epochs") return fixed_epochs(count(parts[1]));
    if ((parts.size() == 3 || parts.size() == 4) && parts[0] == "bleu") {
      return bleu_degradation(real(parts[1]), count(parts[2]),
                              parts.size() == 4 ? count(parts[3]) : 0);
    }
    if (parts.size() == 3 && parts[0] == "converge") {
      return converge(count(parts[1]), real(parts[2]));
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
  throw bad();
}

// ---------------------------------------------------------------------------
// EWC

double ewc_penalty(const ModelParams& params, const ModelParams& anchor, const ModelParams& fisher,
                   double lambda) {
  check_shapes(params, anchor, "ewc_penalty");
  check_shapes(params, fisher, "ewc_penalty");
  if (lambda < 0.0) throw InvalidArgument("ewc lambda must be non-negative");
  auto p = params.tensors();
  auto a = anchor.tensors();
  auto f = fisher.tensors();
  double total = 0.0;
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    total += (f[i]->array() * (p[i]->array() - a[i]->array()).square()).sum();
  }
  return lambda * total;
}

void add_ewc_gradient(const ModelParams& params, const ModelParams& anchor,
                      const ModelParams& fisher, double lambda, ModelParams& grads) {
  check_shapes(params, anchor, "add_ewc_gradient");
  check_shapes(params, fisher, "add_ewc_gradient");
  check_shapes(params, grads, "add_ewc_gradient");
  auto p = params.tensors();
  auto a = anchor.tensors();
  auto f = fisher.tensors();
  auto g = grads.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    g[i]->array() += 2.0 * lambda * f[i]->array() * (p[i]->array() - a[i]->array());
  }
}

void apply_ewc_proximal(ModelParams& params, const ModelParams& anchor, const ModelParams& fisher,
                        double lambda, double step_size) {
  check_shapes(params, anchor, "apply_ewc_proximal");
  check_shapes(params, fisher, "apply_ewc_proximal");
  auto p = params.tensors();
  auto a = anchor.tensors();
  auto f = fisher.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    const Eigen::ArrayXXd c = 2.0 * step_size * lambda * f[i]->array();
    p[i]->array() = (p[i]->array() + c * a[i]->array()) / (1.0 + c);
  }
}

// ---------------------------------------------------------------------------
// Fine-tuning

TrainResult fine_tune(const ModelParams& start, const AdamState& start_adam,
                      const std::vector<TrainingExample>& adaptation, const ValidationSet& valid,
                      const StopRule& stop, const TrainOptions& options,
                      const std::optional<EwcTerm>& ewc, const AccuracyProbe& probe) {
  if (adaptation.empty()) throw InvalidArgument("empty adaptation set");
  if (!start.all_finite()) throw InvalidArgument("starting parameters are not finite");
  check_shapes(start, start_adam.m, "fine_tune");
  if (ewc) {
    if (ewc->anchor == nullptr || ewc->fisher == nullptr) {
      throw InvalidArgument("EWC term needs anchor parameters and a Fisher estimate");
    }
    check_shapes(start, *ewc->anchor, "fine_tune");
    check_shapes(start, *ewc->fisher, "fine_tune");
    if (ewc->lambda < 0.0) throw InvalidArgument("ewc lambda must be non-negative");
  }
  const bool bleu_stop = stop.kind == StopRule::Kind::BleuDegradation;
  if (bleu_stop && valid.empty()) throw InvalidArgument("BLEU stop rule needs a validation set");
  if (stop.epochs == 0) throw InvalidArgument("stop rule needs at least one epoch");

  ModelParams params = start;
  AdamState adam = start_adam;
  TrainLog log;
  TrainResult kept{start, start_adam, {}};
  std::size_t kept_epochs = 0;
  std::size_t kept_step = 0;

  auto record = [&](std::size_t step, std::size_t epoch, double loss, bool with_bleu) {
    LogRecord r;
    r.step = step;
    r.epoch = epoch;
    r.train_loss = loss;
    if (with_bleu && !valid.empty()) r.valid_bleu = validation_bleu(params, valid, options.valid_beam);
    if (probe) r.accuracy = probe(params);
    log.records.push_back(r);
    return r;
  };

  if (!valid.empty()) {
    log.reference_bleu = validation_bleu(start, valid, options.valid_beam);
  }
  const double floor_bleu = log.reference_bleu * (1.0 - stop.degradation_pct / 100.0);

  BatchStream stream(adaptation, options.batch_size, options.seed);
  std::size_t step = 0;
  bool stopped = false;
  for (std::size_t epoch = 0; epoch < stop.epochs && !stopped; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool epoch_done = false;
    while (!epoch_done) {
      auto batch = stream.next(epoch_done);
      const std::optional<EwcTerm> term = ewc;
      loss_sum += update(params, adam, batch, options, term, step, log);
      ++loss_count;
      ++step;
      if (bleu_stop && stop.eval_every_steps && step % stop.eval_every_steps == 0 && !epoch_done) {
        auto r = record(step, epoch, loss_sum / loss_count, true);
        if (*r.valid_bleu < floor_bleu) {
          log.stop_reason = "bleu_degraded";
          stopped = true;
          break;
        }
        kept = TrainResult{params, adam, {}};
        kept_epochs = epoch;
        kept_step = step;
      }
    }
    if (stopped) break;
    const double epoch_loss = loss_sum / static_cast<double>(loss_count);
    ++log.epochs_completed;
    switch (stop.kind) {
      case StopRule::Kind::Epochs:
        record(step, epoch + 1, epoch_loss, epoch + 1 == stop.epochs);
        break;
      case StopRule::Kind::BleuDegradation: {
        auto r = record(step, epoch + 1, epoch_loss, true);
        if (*r.valid_bleu < floor_bleu) {
          log.stop_reason = "bleu_degraded";
          stopped = true;
        } else {
          kept = TrainResult{params, adam, {}};
          kept_epochs = epoch + 1;
          kept_step = step;
        }
        break;
      }
      case StopRule::Kind::Converge:
        if (epoch_loss < stop.loss_threshold) {
          record(step, epoch + 1, epoch_loss, true);
          log.stop_reason = "loss_converged";
          stopped = true;
        } else {
          record(step, epoch + 1, epoch_loss, epoch + 1 == stop.epochs);
        }
        break;
    }
  }
  if (!stopped) log.stop_reason = "max_epochs";

  TrainResult out;
  if (bleu_stop) {
    out = std::move(kept);
    log.epochs_completed = kept_epochs;
    log.steps = kept_step;
  } else {
    out = TrainResult{std::move(params), std::move(adam), {}};
    log.steps = step;
  }
  out.log = std::move(log);
  return out;
}

FisherEstimate estimate_fisher(const ModelParams& params,
                               const std::vector<TrainingExample>& pool, std::size_t n_samples,
                               std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("n_samples must be at least 1");
  if (pool.empty()) throw InvalidArgument("empty Fisher sample pool");
  Rng rng(seed);
  std::vector<std::size_t> picks;
  if (n_samples <= pool.size()) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    picks.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_samples));
  } else {
    for (std::size_t i = 0; i < n_samples; ++i) picks.push_back(rng.below(pool.size()));
  }
  FisherEstimate f{params.zeros_like(), n_samples};
  auto acc = f.values.tensors();
  for (std::size_t idx : picks) {
    auto lg = loss_and_grad(params, std::span<const TrainingExample>(&pool[idx], 1));
    auto g = lg.grads.tensors();
    for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
      acc[i]->array() += g[i]->array().square();
    }
  }
  for (auto* t : acc) *t /= static_cast<double>(n_samples);
  return f;
}

void save_fisher(const FisherEstimate& fisher, const std::filesystem::path& path) {
  save_params(fisher.values, path);
  std::ofstream meta(path.string() + ".count", std::ios::binary);
  meta << fisher.sample_count << '\n';
}

FisherEstimate load_fisher(const std::filesystem::path& path) {
  FisherEstimate f;
  f.values = load_params(path);
  std::ifstream meta(path.string() + ".count", std::ios::binary);
  if (meta) meta >> f.sample_count;
  for (const auto* t : f.values.tensors()) {
    if ((t->array() < 0.0).any()) throw InvalidArgument(path.string() + ": negative Fisher value");
  }
  return f;
}

TrainResult fine_tune_ewc(const ModelParams& anchor, const AdamState& adam,
                          const FisherEstimate& fisher,
                          const std::vector<TrainingExample>& adaptation,
                          const ValidationSet& valid, double lambda, const StopRule& stop,
                          const TrainOptions& options, const AccuracyProbe& probe) {
  return fine_tune(anchor, adam, adaptation, valid, stop, options,
                   EwcTerm{&anchor, &fisher.values, lambda}, probe);
}

std::vector<LambdaPoint> ewc_lambda_grid(const ModelParams& anchor, const AdamState& adam,
                                         const FisherEstimate& fisher,
                                         const std::vector<TrainingExample>& adaptation,
                                         const ValidationSet& valid,
                                         const std::vector<double>& lambdas,
                                         const StopRule& stop, const TrainOptions& options,
                                         const AccuracyProbe& accuracy) {
  std::vector<LambdaPoint> grid;
  for (double lambda : lambdas) {
    LambdaPoint pt;
    pt.lambda = lambda;
    pt.result = fine_tune_ewc(anchor, adam, fisher, adaptation, valid, lambda, stop, options);
    pt.valid_bleu = validation_bleu(pt.result.params, valid, options.valid_beam);
    pt.accuracy = accuracy ? accuracy(pt.result.params) : 0.0;
    pt.weighted_displacement = ewc_penalty(pt.result.params, anchor, fisher.values, 1.0);
    grid.push_back(std::move(pt));
  }
  return grid;
}

std::size_t select_lambda(const std::vector<LambdaPoint>& grid, double reference_accuracy,
                          double tolerance) {
  if (grid.empty()) throw InvalidArgument("empty lambda grid");
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].accuracy >= reference_accuracy - tolerance &&
        (!chosen || grid[i].lambda > grid[*chosen].lambda)) {
      chosen = i;
    }
  }
  if (chosen) return *chosen;
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i].accuracy > grid[best].accuracy ||
        (grid[i].accuracy == grid[best].accuracy && grid[i].lambda > grid[best].lambda)) {
      best = i;
    }
  }
  return best;
}

}  // namespace debias
