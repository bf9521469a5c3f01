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

#ifndef DEBIAS_EVAL_HPP
#define DEBIAS_EVAL_HPP

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "debias/corpus.hpp"

namespace debias {

enum class GenderLabel { M, F, Unknown };

const char* label_code(GenderLabel label);

// M if only the masculine form of the item's profession occurs, F if only
// the feminine form, Unknown if neither or both do.
GenderLabel classify_gender(const Sentence& hypothesis, const ChallengeItem& item,
                            const Lexicon& lexicon);

struct CellCounts {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t unknown = 0;
  std::size_t total() const { return correct + incorrect + unknown; }
};

struct MetricsReport {
  double accuracy = 0.0;  // percent
  double delta_g = 0.0;   // F1(M) - F1(F), points
  double delta_s = 0.0;   // acc(pro) - acc(anti), points
  double m_f = 0.0;       // #M predictions / #F predictions; NaN when both are zero
  bool m_f_infinite = false;
  std::optional<double> bleu;
  std::size_t n = 0;
  std::size_t unknown = 0;
  std::size_t predicted_m = 0;
  std::size_t predicted_f = 0;
  // [gold M/F][pro/anti]
  std::array<std::array<CellCounts, 2>, 2> cells{};
};

MetricsReport challenge_metrics(const std::vector<GenderLabel>& predictions,
                                const std::vector<ChallengeItem>& items);

// Classifies every hypothesis and computes the report.
MetricsReport evaluate_challenge(const std::vector<Sentence>& hypotheses,
                                 const std::vector<ChallengeItem>& items, const Lexicon& lexicon);

// Corpus BLEU-4, uniform weights, no smoothing, in [0, 100].
double corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references);

nlohmann::ordered_json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);
void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_metrics_json(const std::filesystem::path& path);

}  // namespace debias

#endif  // DEBIAS_EVAL_HPP
