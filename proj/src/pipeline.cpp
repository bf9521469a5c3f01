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

#include "debias/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "debias/counterfactual.hpp"
#include "debias/error.hpp"
#include "debias/eval.hpp"
#include "debias/lattice.hpp"
#include "debias/model.hpp"

namespace debias {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["blackbox_seed"] = blackbox_seed;
  j["output_dir"] = output_dir.string();
  auto& c = j["corpus"];
  c["professions"] = professions;
  c["train"] = train_size;
  c["valid"] = valid_size;
  c["test"] = test_size;
  c["challenge"] = challenge_size;
  c["bias_ratio"] = bias_ratio;
  auto& m = c["mix"];
  m["simple"] = mix.simple;
  m["transitive"] = mix.transitive;
  m["coreference"] = mix.coreference;
  m["adjective_rate"] = mix.adjective_rate;
  m["cue_reliability"] = mix.cue_reliability;
  m["coref_primary"] = mix.coref_primary;
  m["coref_secondary"] = mix.coref_secondary;
  m["unmentioned_fem"] = mix.unmentioned_fem;
  j["model"]["embed_dim"] = embed_dim;
  j["model"]["hidden_dim"] = hidden_dim;
  auto& t = j["training"];
  t["learning_rate"] = training.adam.learning_rate;
  t["batch_size"] = training.batch_size;
  t["eval_every"] = training.eval_every;
  t["patience"] = training.patience;
  t["min_delta"] = training.min_delta;
  t["max_steps"] = training.max_steps;
  auto& a = j["adaptation"];
  a["counterfactual_epochs"] = counterfactual_epochs;
  a["handcrafted_stop"] = handcrafted_stop;
  a["converged_stop"] = converged_stop;
  auto& e = j["ewc"];
  e["fisher_samples"] = fisher_samples;
  e["lambdas"] = ewc_lambdas;
  e["large_lambda"] = ewc_large_lambda;
  e["selection_tolerance"] = lambda_tolerance;
  auto& d = j["decoding"];
  d["beam"] = beam;
  d["rescore_path_budget"] = rescore_path_budget;
  d["rescore_fallback_width"] = rescore_fallback_width;
  return j;
}

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

bool same_kind(const ordered_json& expected, const json& given) {
  if (expected.is_number_unsigned()) return given.is_number_unsigned();
  if (expected.is_number()) return given.is_number();
  if (expected.is_array()) {
    if (!given.is_array()) return false;
    for (const auto& v : given) {
      if (!v.is_number()) return false;
    }
    return true;
  }
  return expected.type() == given.type();
}

void check_against(const ordered_json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) {
    throw ConfigError("'" + (path.empty() ? std::string("<root>") : path) +
                      "' must be an object");
  }
  for (const auto& [key, value] : given.items()) {
    const std::string where = join_path(path, key);
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    const auto& expected = defaults.at(key);
    if (expected.is_object()) {
      check_against(expected, value, where);
    } else if (!same_kind(expected, value)) {
      throw ConfigError("config key '" + where + "' has the wrong type (expected " +
                        std::string(expected.type_name()) + ")");
    }
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& given) {
  const PipelineConfig defaults;
  ordered_json merged = defaults.to_json();
  check_against(merged, given, "");
  merged.merge_patch(ordered_json(given));

  PipelineConfig c;
  c.seed = merged["seed"].get<std::uint64_t>();
  c.blackbox_seed = merged["blackbox_seed"].get<std::uint64_t>();
  c.output_dir = merged["output_dir"].get<std::string>();
  const auto& co = merged["corpus"];
  c.professions = co["professions"].get<std::size_t>();
  c.train_size = co["train"].get<std::size_t>();
  c.valid_size = co["valid"].get<std::size_t>();
  c.test_size = co["test"].get<std::size_t>();
  c.challenge_size = co["challenge"].get<std::size_t>();
  c.bias_ratio = co["bias_ratio"].get<double>();
  const auto& m = co["mix"];
  c.mix.simple = m["simple"].get<double>();
  c.mix.transitive = m["transitive"].get<double>();
  c.mix.coreference = m["coreference"].get<double>();
  c.mix.adjective_rate = m["adjective_rate"].get<double>();
  c.mix.cue_reliability = m["cue_reliability"].get<double>();
  c.mix.coref_primary = m["coref_primary"].get<double>();
  c.mix.coref_secondary = m["coref_secondary"].get<double>();
  c.mix.unmentioned_fem = m["unmentioned_fem"].get<double>();
  c.embed_dim = merged["model"]["embed_dim"].get<std::size_t>();
  c.hidden_dim = merged["model"]["hidden_dim"].get<std::size_t>();
  const auto& t = merged["training"];
  c.training.adam.learning_rate = t["learning_rate"].get<double>();
  c.training.batch_size = t["batch_size"].get<std::size_t>();
  c.training.eval_every = t["eval_every"].get<std::size_t>();
  c.training.patience = t["patience"].get<std::size_t>();
  c.training.min_delta = t["min_delta"].get<double>();
  c.training.max_steps = t["max_steps"].get<std::size_t>();
  const auto& a = merged["adaptation"];
  c.counterfactual_epochs = a["counterfactual_epochs"].get<std::size_t>();
  c.handcrafted_stop = a["handcrafted_stop"].get<std::string>();
  c.converged_stop = a["converged_stop"].get<std::string>();
  const auto& e = merged["ewc"];
  c.fisher_samples = e["fisher_samples"].get<std::size_t>();
  c.ewc_lambdas = e["lambdas"].get<std::vector<double>>();
  c.ewc_large_lambda = e["large_lambda"].get<double>();
  c.lambda_tolerance = e["selection_tolerance"].get<double>();
  const auto& d = merged["decoding"];
  c.beam = d["beam"].get<std::size_t>();
  c.rescore_path_budget = d["rescore_path_budget"].get<std::size_t>();
  c.rescore_fallback_width = d["rescore_fallback_width"].get<std::size_t>();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void PipelineConfig::set(std::string_view dotted_key, std::string_view json_value) {
  json value;
  try {
    value = json::parse(json_value);
  } catch (const json::parse_error&) {
    value = std::string(json_value);  // bare strings need no quotes
  }
  json patch = json::object();
  json* node = &patch;
  std::string key(dotted_key);
  if (key.empty()) throw ConfigError("empty config key");
  std::size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("bad config key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
  json current = json(to_json());
  check_against(to_json(), patch, "");
  current.merge_patch(patch);
  *this = from_json(current);
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (professions < 2) fail("corpus.professions must be at least 2");
  if (train_size == 0 || valid_size == 0 || test_size == 0 || challenge_size == 0) {
    fail("corpus sizes must be positive");
  }
  if (!(bias_ratio >= 0.5 && bias_ratio <= 1.0)) fail("corpus.bias_ratio must be in [0.5, 1]");
  for (double w : {mix.simple, mix.transitive, mix.coreference}) {
    if (!(w >= 0.0)) fail("template weights must be non-negative");
  }
  if (mix.simple + mix.transitive + mix.coreference <= 0.0) fail("template weights sum to zero");
  for (double p : {mix.adjective_rate, mix.cue_reliability, mix.coref_primary,
                   mix.coref_secondary, mix.unmentioned_fem}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("template probabilities must be in [0, 1]");
  }
  if (mix.coref_primary + mix.coref_secondary > 1.0) {
    fail("corpus.mix.coref_primary + coref_secondary must not exceed 1");
  }
  if (embed_dim == 0 || hidden_dim == 0) fail("model dimensions must be positive");
  if (!(training.adam.learning_rate > 0.0)) fail("training.learning_rate must be positive");
  if (training.batch_size == 0 || training.eval_every == 0 || training.max_steps == 0) {
    fail("training.batch_size, eval_every and max_steps must be positive");
  }
  if (counterfactual_epochs == 0) fail("adaptation.counterfactual_epochs must be positive");
  for (const auto* rule : {&handcrafted_stop, &converged_stop}) {
    try {
      StopRule::parse(*rule);
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  }
  if (fisher_samples == 0) fail("ewc.fisher_samples must be positive");
  if (ewc_lambdas.empty()) fail("ewc.lambdas must not be empty");
  for (double l : ewc_lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) fail("ewc.lambdas must be finite and non-negative");
  }
  if (!(ewc_large_lambda >= 0.0) || !std::isfinite(ewc_large_lambda)) {
    fail("ewc.large_lambda must be finite and non-negative");
  }
  if (beam == 0 || rescore_fallback_width == 0 || rescore_path_budget == 0) {
    fail("decoding widths and budget must be positive");
  }
}

// ---------------------------------------------------------------------------
// Layout, stages and systems

std::filesystem::path RunLayout::corpus(std::string_view split) const {
  return root_ / "data" / std::string(split);
}
std::filesystem::path RunLayout::model(std::string_view system) const {
  return root_ / "models" / (std::string(system) + ".ckpt");
}
std::filesystem::path RunLayout::optimizer(std::string_view system) const {
  return root_ / "models" / (std::string(system) + ".adam");
}
std::filesystem::path RunLayout::train_log(std::string_view system) const {
  return root_ / "logs" / (std::string(system) + ".jsonl");
}
std::filesystem::path RunLayout::hyps(std::string_view system, std::string_view set) const {
  return root_ / "hyps" / (std::string(system) + "." + std::string(set) + ".txt");
}
std::filesystem::path RunLayout::rescore_stats(std::string_view system) const {
  return root_ / "hyps" / (std::string(system) + ".rescore.json");
}
std::filesystem::path RunLayout::metrics(std::string_view system) const {
  return root_ / "metrics" / (std::string(system) + ".json");
}

namespace {

struct StageEntry {
  Stage stage;
  std::string_view name;
};

const std::vector<StageEntry>& stage_table() {
  static const std::vector<StageEntry> t{
      {Stage::GenLexicon, "gen-lexicon"}, {Stage::GenCorpus, "gen-corpus"},
      {Stage::GenChallenge, "gen-challenge"}, {Stage::Train, "train"},
      {Stage::Counterfactual, "counterfactual"}, {Stage::Adapt, "adapt"},
      {Stage::Fisher, "fisher"}, {Stage::Ewc, "ewc"},
      {Stage::Translate, "translate"}, {Stage::Rescore, "rescore"},
      {Stage::Evaluate, "evaluate"}, {Stage::Report, "report"},
  };
  return t;
}

}  // namespace

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = [] {
    std::vector<Stage> v;
    for (const auto& e : stage_table()) v.push_back(e.stage);
    return v;
  }();
  return s;
}

std::string_view stage_name(Stage stage) {
  for (const auto& e : stage_table()) {
    if (e.stage == stage) return e.name;
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (const auto& e : stage_table()) {
    if (e.name == name) return e.stage;
  }
  return std::nullopt;
}

const std::vector<std::string>& decoded_systems() {
  static const std::vector<std::string> s{
      "baseline",          "cf_original",           "cf_ftrans_original",
      "cf_ftrans_swapped", "cf_balanced",           "handcrafted_no_overlap",
      "handcrafted",       "handcrafted_converged", "handcrafted_ewc",
      "ewc_lambda_large",  "blackbox",
  };
  return s;
}

const std::vector<RescoreRow>& rescore_rows() {
  static const std::vector<RescoreRow> r{
      {"rescore_handcrafted_no_overlap", "handcrafted_no_overlap", "baseline"},
      {"rescore_handcrafted", "handcrafted", "baseline"},
      {"rescore_handcrafted_converged", "handcrafted_converged", "baseline"},
      {"blackbox_rescored", "handcrafted_converged", "blackbox"},
  };
  return r;
}

const std::vector<std::string>& report_systems() {
  static const std::vector<std::string> s{
      "baseline",
      "cf_original",
      "cf_ftrans_original",
      "cf_ftrans_swapped",
      "cf_balanced",
      "handcrafted_no_overlap",
      "handcrafted",
      "handcrafted_converged",
      "handcrafted_ewc",
      "ewc_lambda_large",
      "rescore_handcrafted_no_overlap",
      "rescore_handcrafted",
      "rescore_handcrafted_converged",
      "blackbox",
      "blackbox_rescored",
  };
  return s;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::filesystem::path resolve_root(const PipelineConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return "debias-run";
}

bool uses_blackbox(const std::string& system) { return system.rfind("blackbox", 0) == 0; }

std::vector<std::string> active(const PipelineConfig& config,
                                 const std::vector<std::string>& systems) {
  std::vector<std::string> out;
  for (const auto& s : systems) {
    if (config.blackbox_seed == 0 && uses_blackbox(s)) continue;
    out.push_back(s);
  }
  return out;
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

std::string format_fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Everything derived from the lexicon.
struct Resources {
  Lexicon lexicon;
  Vocab source;
  Vocab target;

  explicit Resources(const RunLayout& layout)
      : lexicon(read_lexicon_tsv(layout.lexicon())),
        source(source_vocab(lexicon)),
        target(target_vocab(lexicon)) {}
};

std::vector<TokenIds> encode_all(const std::vector<Sentence>& sentences, const Vocab& vocab,
                                 std::size_t* unknown = nullptr) {
  std::vector<TokenIds> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(vocab.encode(s, unknown));
  return out;
}

AccuracyProbe challenge_probe(const Resources& r, const std::vector<ChallengeItem>& items) {
  auto sources = std::make_shared<std::vector<TokenIds>>();
  for (const auto& it : items) sources->push_back(r.source.encode(it.source));
  return [&r, &items, sources](const ModelParams& params) {
    std::vector<Sentence> hyps;
    hyps.reserve(sources->size());
    for (const auto& src : *sources) {
      hyps.push_back(r.target.decode(greedy_decode(params, src, default_max_len(src.size())).tokens));
    }
    return evaluate_challenge(hyps, items, r.lexicon).accuracy;
  };
}

std::vector<Sentence> challenge_sources(const std::vector<ChallengeItem>& items) {
  std::vector<Sentence> out;
  for (const auto& it : items) out.push_back(it.source);
  return out;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config, LogSink log)
    : config_(std::move(config)), layout_(resolve_root(config_)), log_(std::move(log)) {
  config_.validate();
  config_.training.seed = config_.seed;
}

void Pipeline::log(const std::string& message) const {
  if (log_) log_(message);
}

void Pipeline::run_stage(Stage stage) {
  const std::string name(stage_name(stage));
  const auto start = std::chrono::steady_clock::now();
  log("[" + name + "] start");
  try {
    std::filesystem::create_directories(layout_.root());
    dispatch(stage);
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log("[" + name + "] done in " + format_fixed(secs, 1) + "s");
}

void Pipeline::run_all() {
  for (Stage s : all_stages()) run_stage(s);
}

void Pipeline::dispatch(Stage stage) {
  switch (stage) {
    case Stage::GenLexicon: return gen_lexicon();
    case Stage::GenCorpus: return gen_corpus();
    case Stage::GenChallenge: return gen_challenge();
    case Stage::Train: return train();
    case Stage::Counterfactual: return counterfactual();
    case Stage::Adapt: return adapt_all();
    case Stage::Fisher: return fisher();
    case Stage::Ewc: return ewc();
    case Stage::Translate: return translate_all();
    case Stage::Rescore: return rescore_all();
    case Stage::Evaluate: return evaluate_all();
    case Stage::Report: return report();
  }
}

void Pipeline::gen_lexicon() {
  config_.save(layout_.config());
  const Lexicon lex = generate_lexicon(config_.professions, config_.seed);
  ensure_parent(layout_.lexicon());
  write_lexicon_tsv(lex, layout_.lexicon());
  const Vocab tv = target_vocab(lex);
  write_fst_text(build_flower_transducer(InflectionTable::from_lexicon(lex, tv), tv.size()), tv,
                 layout_.transducer());
  log("[gen-lexicon] " + std::to_string(lex.entries().size()) + " entries, " +
      std::to_string(lex.professions().size()) + " professions");
}

void Pipeline::gen_corpus() {
  const Lexicon lex = read_lexicon_tsv(layout_.lexicon());
  const CorpusSplits splits =
      generate_splits(lex, config_.train_size, config_.valid_size, config_.test_size,
                      config_.bias_ratio, config_.seed, config_.mix);
  write_corpus(splits.train, layout_.corpus("train"));
  write_corpus(splits.valid, layout_.corpus("valid"));
  write_corpus(splits.test, layout_.corpus("test"));
  write_corpus(generate_handcrafted(lex, false), layout_.corpus("handcrafted"));
  write_corpus(generate_handcrafted(lex, true), layout_.corpus("handcrafted_no_overlap"));
  write_stopwords(StopwordMap::for_lexicon(lex), layout_.stopwords());
  log("[gen-corpus] train " + std::to_string(splits.train.size()) + ", valid " +
      std::to_string(splits.valid.size()) + ", test " + std::to_string(splits.test.size()));
}

void Pipeline::gen_challenge() {
  const Lexicon lex = read_lexicon_tsv(layout_.lexicon());
  const auto items = generate_challenge_set(lex, config_.challenge_size, config_.seed);
  write_challenge_jsonl(items, layout_.challenge());
  write_sentences(challenge_sources(items), layout_.corpus("challenge").concat(".src"));
  log("[gen-challenge] " + std::to_string(items.size()) + " items");
}

void Pipeline::train() {
  const Resources r(layout_);
  const auto items = read_challenge_jsonl(layout_.challenge());
  const auto train = encode_corpus(read_corpus(layout_.corpus("train")), r.source, r.target);
  const auto valid =
      ValidationSet::from(encode_corpus(read_corpus(layout_.corpus("valid")), r.source, r.target));
  const AccuracyProbe probe = challenge_probe(r, items);
  std::vector<std::pair<std::string, std::uint64_t>> runs{{"baseline", config_.seed}};
  if (config_.blackbox_seed != 0) runs.emplace_back("blackbox", config_.blackbox_seed);
  for (const auto& [system, seed] : runs) {
    TrainOptions options = config_.training;
    options.seed = seed;
    const ModelConfig mc =
        model_config_for(r.lexicon, config_.embed_dim, config_.hidden_dim, seed);
    const TrainResult res = train_baseline(init_params(mc), train, valid, options, probe);
    ensure_parent(layout_.model(system));
    ensure_parent(layout_.train_log(system));
    save_params(res.params, layout_.model(system));
    save_adam(res.adam, layout_.optimizer(system));
    res.log.write_jsonl(layout_.train_log(system));
    log("[train] " + system + ": " + std::to_string(res.log.steps) + " steps, " +
        res.log.stop_reason);
  }
}

void Pipeline::counterfactual() {
  const Resources r(layout_);
  const Translator model{r.source, r.target, load_params(layout_.model("baseline"))};
  const AdaptationSets sets = build_adaptation_sets(read_corpus(layout_.corpus("train")),
                                                    read_stopwords(layout_.stopwords()), model);
  for (auto name : AdaptationSets::names()) {
    write_corpus(sets.get(name), layout_.adaptation_prefix().concat("." + std::string(name)));
  }
  log("[counterfactual] " + std::to_string(sets.original.size()) + " gendered sentences, " +
      std::to_string(sets.truncated) + " truncated forward translations");
}

TrainLog Pipeline::adapt(const std::string& set, const StopRule& stop,
                         std::optional<double> ewc_lambda, const std::string& system) {
  const Resources r(layout_);
  const auto items = read_challenge_jsonl(layout_.challenge());
  ParallelCorpus data;
  if (set == "handcrafted" || set == "handcrafted_no_overlap") {
    data = read_corpus(layout_.corpus(set));
  } else {
    bool known = false;
    for (auto n : AdaptationSets::names()) known = known || n == set;
    if (!known) throw InvalidArgument("unknown adaptation set '" + set + "'");
    data = read_corpus(layout_.adaptation_prefix().concat("." + set));
  }
  const auto examples = encode_corpus(data, r.source, r.target);
  const auto valid =
      ValidationSet::from(encode_corpus(read_corpus(layout_.corpus("valid")), r.source, r.target));
  const ModelParams base = load_params(layout_.model("baseline"));
  const AdamState adam = load_adam(layout_.optimizer("baseline"));
  const AccuracyProbe probe = challenge_probe(r, items);
  TrainResult res;
  if (ewc_lambda) {
    const FisherEstimate f = load_fisher(layout_.fisher());
    res = fine_tune_ewc(base, adam, f, examples, valid, *ewc_lambda, stop, config_.training,
                        probe);
  } else {
    res = fine_tune(base, adam, examples, valid, stop, config_.training, std::nullopt, probe);
  }
  ensure_parent(layout_.model(system));
  ensure_parent(layout_.train_log(system));
  save_params(res.params, layout_.model(system));
  res.log.write_jsonl(layout_.train_log(system));
  log("[adapt] " + system + " on " + set + " (" + stop.describe() + "): " +
      std::to_string(res.log.epochs_completed) + " epochs, " + res.log.stop_reason);
  return res.log;
}

void Pipeline::adapt_all() {
  for (auto name : AdaptationSets::names()) {
    adapt(std::string(name), StopRule::fixed_epochs(config_.counterfactual_epochs), std::nullopt,
          "cf_" + std::string(name));
  }
  const StopRule hand = StopRule::parse(config_.handcrafted_stop);
  adapt("handcrafted", hand, std::nullopt, "handcrafted");
  adapt("handcrafted_no_overlap", hand, std::nullopt, "handcrafted_no_overlap");
  adapt("handcrafted", StopRule::parse(config_.converged_stop), std::nullopt,
        "handcrafted_converged");
}

void Pipeline::fisher() {
  const Resources r(layout_);
  const auto train = encode_corpus(read_corpus(layout_.corpus("train")), r.source, r.target);
  const FisherEstimate f = estimate_fisher(load_params(layout_.model("baseline")), train,
                                           config_.fisher_samples, config_.seed);
  save_fisher(f, layout_.fisher());
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto* t : f.values.tensors()) {
    sum += t->sum();
    count += static_cast<std::size_t>(t->size());
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "[fisher] %zu samples, mean %.3g", f.sample_count,
                sum / static_cast<double>(count));
  log(buf);
}

void Pipeline::ewc() {
  const Resources r(layout_);
  const auto items = read_challenge_jsonl(layout_.challenge());
  const auto examples = encode_corpus(read_corpus(layout_.corpus("handcrafted")), r.source,
                                      r.target);
  const auto valid =
      ValidationSet::from(encode_corpus(read_corpus(layout_.corpus("valid")), r.source, r.target));
  const ModelParams base = load_params(layout_.model("baseline"));
  const AdamState adam = load_adam(layout_.optimizer("baseline"));
  const FisherEstimate f = load_fisher(layout_.fisher());
  const AccuracyProbe probe = challenge_probe(r, items);

  // Same number of epochs as the unregularized handcrafted run kept.
  const TrainLog hand_log = TrainLog::read_jsonl(layout_.train_log("handcrafted"));
  const StopRule stop = StopRule::fixed_epochs(std::max<std::size_t>(1, hand_log.epochs_completed));
  const double reference = probe(load_params(layout_.model("handcrafted")));

  auto grid = ewc_lambda_grid(base, adam, f, examples, valid, config_.ewc_lambdas, stop,
                              config_.training, probe);
  const std::size_t chosen = select_lambda(grid, reference, config_.lambda_tolerance);

  ordered_json j;
  j["epochs"] = stop.epochs;
  j["reference_accuracy"] = reference;
  j["tolerance"] = config_.lambda_tolerance;
  j["points"] = ordered_json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ordered_json p;
    p["lambda"] = grid[i].lambda;
    p["valid_bleu"] = grid[i].valid_bleu;
    p["accuracy"] = grid[i].accuracy;
    p["weighted_displacement"] = grid[i].weighted_displacement;
    p["selected"] = i == chosen;
    j["points"].push_back(p);
    char buf[128];
    std::snprintf(buf, sizeof buf, "[ewc] lambda %g: valid bleu %.2f, accuracy %.1f%s",
                  grid[i].lambda, grid[i].valid_bleu, grid[i].accuracy,
                  i == chosen ? " (selected)" : "");
    log(buf);
  }
  j["selected_lambda"] = grid[chosen].lambda;

  ensure_parent(layout_.model("handcrafted_ewc"));
  ensure_parent(layout_.train_log("handcrafted_ewc"));
  save_params(grid[chosen].result.params, layout_.model("handcrafted_ewc"));
  grid[chosen].result.log.write_jsonl(layout_.train_log("handcrafted_ewc"));

  const TrainResult large = fine_tune_ewc(base, adam, f, examples, valid, config_.ewc_large_lambda,
                                          stop, config_.training, probe);
  save_params(large.params, layout_.model("ewc_lambda_large"));
  large.log.write_jsonl(layout_.train_log("ewc_lambda_large"));
  j["large_lambda"] = config_.ewc_large_lambda;

  std::ofstream out(layout_.ewc_grid(), std::ios::binary);
  if (!out) throw IoError("cannot write " + layout_.ewc_grid().string());
  out << j.dump(2) << '\n';
}

void Pipeline::translate(const std::string& system, std::size_t beam) {
  const Resources r(layout_);
  const ModelParams params = load_params(layout_.model(system));
  const auto items = read_challenge_jsonl(layout_.challenge());
  const std::vector<std::pair<std::string, std::vector<Sentence>>> sets{
      {"challenge", challenge_sources(items)},
      {"test", read_sentences(layout_.corpus("test").concat(".src"))},
  };
  for (const auto& [set, sources] : sets) {
    std::vector<Sentence> out;
    out.reserve(sources.size());
    for (const auto& src : encode_all(sources, r.source)) {
      Hypothesis h = beam_search(params, src, beam, default_max_len(src.size()));
      if (h.finished && !h.tokens.empty()) h.tokens.pop_back();
      out.push_back(r.target.decode(h.tokens));
    }
    ensure_parent(layout_.hyps(system, set));
    write_sentences(out, layout_.hyps(system, set));
  }
}

void Pipeline::translate_all() {
  for (const auto& system : active(config_, decoded_systems())) {
    translate(system, config_.beam);
    log("[translate] " + system);
  }
}

RescoreStats Pipeline::rescore_file(const std::string& model,
                                    const std::filesystem::path& sources,
                                    const std::filesystem::path& hypotheses,
                                    const std::filesystem::path& output) {
  const Resources r(layout_);
  const ModelParams params = load_params(layout_.model(model));
  const Fst transducer = read_fst_text(layout_.transducer(), r.target);
  const auto src = encode_all(read_sentences(sources), r.source);
  std::size_t unknown = 0;
  const auto hyps = encode_all(read_sentences(hypotheses), r.target, &unknown);
  if (src.size() != hyps.size()) {
    throw InvalidArgument("rescoring needs one hypothesis per source line (" +
                          std::to_string(src.size()) + " sources, " +
                          std::to_string(hyps.size()) + " hypotheses)");
  }
  RescoreStats stats;
  const auto best = rescore_hypotheses(params, src, hyps, transducer,
                                       config_.rescore_fallback_width,
                                       config_.rescore_path_budget, &stats);
  std::vector<Sentence> out;
  out.reserve(best.size());
  for (const auto& h : best) {
    TokenIds t = h.tokens;
    if (!t.empty() && t.back() == kEos) t.pop_back();
    out.push_back(r.target.decode(t));
  }
  ensure_parent(output);
  write_sentences(out, output);
  if (unknown > 0) log("[rescore] " + std::to_string(unknown) + " out-of-vocabulary tokens");
  return stats;
}

void Pipeline::rescore_all() {
  const std::vector<std::pair<std::string, std::filesystem::path>> sets{
      {"challenge", layout_.corpus("challenge").concat(".src")},
      {"test", layout_.corpus("test").concat(".src")},
  };
  for (const auto& row : rescore_rows()) {
    if (config_.blackbox_seed == 0 && uses_blackbox(row.system)) continue;
    ordered_json j;
    j["model"] = row.model;
    j["hypotheses"] = row.hypotheses;
    for (const auto& [set, src] : sets) {
      const RescoreStats s = rescore_file(row.model, src, layout_.hyps(row.hypotheses, set),
                                          layout_.hyps(row.system, set));
      j[set] = {{"exact", s.exact}, {"beam_fallback", s.beam_fallback}, {"empty", s.empty}};
    }
    std::ofstream out(layout_.rescore_stats(row.system), std::ios::binary);
    if (!out) throw IoError("cannot write " + layout_.rescore_stats(row.system).string());
    out << j.dump(2) << '\n';
    log("[rescore] " + row.system);
  }
}

void Pipeline::evaluate(const std::string& system) {
  const Lexicon lex = read_lexicon_tsv(layout_.lexicon());
  const auto items = read_challenge_jsonl(layout_.challenge());
  const auto challenge = read_sentences(layout_.hyps(system, "challenge"));
  if (challenge.size() != items.size()) {
    throw InvalidArgument(system + ": " + std::to_string(challenge.size()) +
                          " challenge hypotheses for " + std::to_string(items.size()) + " items");
  }
  MetricsReport m = evaluate_challenge(challenge, items, lex);
  const auto test = read_sentences(layout_.hyps(system, "test"));
  const auto refs = read_sentences(layout_.corpus("test").concat(".tgt"));
  if (test.size() != refs.size()) {
    throw InvalidArgument(system + ": test hypothesis count does not match the references");
  }
  m.bleu = corpus_bleu(test, refs);
  ensure_parent(layout_.metrics(system));
  write_metrics_json(m, layout_.metrics(system));
}

void Pipeline::evaluate_all() {
  for (const auto& system : active(config_, report_systems())) {
    evaluate(system);
    const MetricsReport m = read_metrics_json(layout_.metrics(system));
    log("[evaluate] " + system + ": bleu " + format_fixed(m.bleu.value_or(0.0)) + ", accuracy " +
        format_fixed(m.accuracy, 1));
  }
}

void Pipeline::report() {
  const std::string tsv = render_report_tsv(layout_);
  const std::string md = render_report_markdown(layout_);
  for (const auto& [path, text] : {std::pair{layout_.report_tsv(), tsv},
                                   std::pair{layout_.report_md(), md}}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
  }
  log("[report] " + layout_.report_md().string());
}

// ---------------------------------------------------------------------------
// Report

namespace {

struct ReportRow {
  std::string system;
  MetricsReport metrics;
};

std::vector<ReportRow> collect_rows(const RunLayout& layout) {
  std::vector<ReportRow> rows;
  for (const auto& system : report_systems()) {
    if (!std::filesystem::exists(layout.metrics(system))) continue;
    rows.push_back({system, read_metrics_json(layout.metrics(system))});
  }
  if (rows.empty()) throw InvalidState("no metrics under " + layout.root().string());
  return rows;
}

std::string m_f_text(const MetricsReport& m) {
  if (m.m_f_infinite) return "inf";
  if (std::isnan(m.m_f)) return "n/a";
  return format_fixed(m.m_f);
}

}  // namespace

std::string render_report_tsv(const RunLayout& layout) {
  std::ostringstream out;
  out << "system\tbleu\taccuracy\tdelta_g\tdelta_s\tm_f\tunknown\n";
  for (const auto& row : collect_rows(layout)) {
    const auto& m = row.metrics;
    out << row.system << '\t' << format_fixed(m.bleu.value_or(0.0)) << '\t'
        << format_fixed(m.accuracy, 1) << '\t' << format_fixed(m.delta_g, 1) << '\t'
        << format_fixed(m.delta_s, 1) << '\t' << m_f_text(m) << '\t' << m.unknown << '\n';
  }
  return out.str();
}

std::string render_report_markdown(const RunLayout& layout) {
  std::ostringstream out;
  out << "| # | System | BLEU | Acc | ΔG | ΔS | M:F |\n";
  out << "|---|---|---:|---:|---:|---:|---:|\n";
  std::size_t n = 0;
  for (const auto& row : collect_rows(layout)) {
    const auto& m = row.metrics;
    out << "| " << ++n << " | " << row.system << " | " << format_fixed(m.bleu.value_or(0.0))
        << " | " << format_fixed(m.accuracy, 1) << " | " << format_fixed(m.delta_g, 1) << " | "
        << format_fixed(m.delta_s, 1) << " | " << m_f_text(m) << " |\n";
  }
  return out.str();
}

}  // namespace debias
