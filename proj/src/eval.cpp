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

#include "debias/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "debias/error.hpp"

namespace debias {

const char* label_code(GenderLabel label) {
  switch (label) {
    case GenderLabel::M: return "M";
    case GenderLabel::F: return "F";
    case GenderLabel::Unknown: return "U";
  }
  return "U";
}

GenderLabel classify_gender(const Sentence& hypothesis, const ChallengeItem& item,
                            const Lexicon& lexicon) {
  const auto& entry = lexicon.at(item.profession);
  const bool has_m =
      std::find(hypothesis.begin(), hypothesis.end(), entry.masc_target) != hypothesis.end();
  const bool has_f =
      std::find(hypothesis.begin(), hypothesis.end(), entry.fem_target) != hypothesis.end();
  if (has_m == has_f) return GenderLabel::Unknown;
  return has_m ? GenderLabel::M : GenderLabel::F;
}

namespace {

double f1(std::size_t correct, std::size_t predicted, std::size_t gold) {
  const double p = predicted ? static_cast<double>(correct) / predicted : 0.0;
  const double r = gold ? static_cast<double>(correct) / gold : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double percent(std::size_t num, std::size_t den) {
  return den ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

MetricsReport challenge_metrics(const std::vector<GenderLabel>& predictions,
                                const std::vector<ChallengeItem>& items) {
  if (predictions.size() != items.size()) {
    throw InvalidArgument("predictions and challenge items differ in length");
  }
  MetricsReport r;
  r.n = items.size();
  std::array<std::size_t, 2> gold{}, predicted{}, correct_by_gender{};
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int g = items[i].gold == Gender::M ? 0 : 1;
    const int s = items[i].stereotype_class == StereotypeClass::Pro ? 0 : 1;
    auto& cell = r.cells[g][s];
    ++gold[g];
    switch (predictions[i]) {
      case GenderLabel::Unknown:
        ++cell.unknown;
        ++r.unknown;
        break;
      case GenderLabel::M:
      case GenderLabel::F: {
        const int p = predictions[i] == GenderLabel::M ? 0 : 1;
        ++predicted[p];
        if (p == g) {
          ++cell.correct;
          ++correct_by_gender[g];
        } else {
          ++cell.incorrect;
        }
        break;
      }
    }
  }
  r.predicted_m = predicted[0];
  r.predicted_f = predicted[1];
  const std::size_t correct = correct_by_gender[0] + correct_by_gender[1];
  r.accuracy = percent(correct, r.n);
  r.delta_g = 100.0 * (f1(correct_by_gender[0], predicted[0], gold[0]) -
                       f1(correct_by_gender[1], predicted[1], gold[1]));
  std::array<std::size_t, 2> cls_correct{}, cls_total{};
  for (int g = 0; g < 2; ++g) {
    for (int s = 0; s < 2; ++s) {
      cls_correct[s] += r.cells[g][s].correct;
      cls_total[s] += r.cells[g][s].total();
    }
  }
  r.delta_s = percent(cls_correct[0], cls_total[0]) - percent(cls_correct[1], cls_total[1]);
  if (predicted[0] == 0 && predicted[1] == 0) {
    r.m_f = std::numeric_limits<double>::quiet_NaN();
  } else if (predicted[1] == 0) {
    r.m_f_infinite = true;
    r.m_f = std::numeric_limits<double>::infinity();
  } else {
    r.m_f = static_cast<double>(predicted[0]) / static_cast<double>(predicted[1]);
  }
  return r;
}

MetricsReport evaluate_challenge(const std::vector<Sentence>& hypotheses,
                                 const std::vector<ChallengeItem>& items,
                                 const Lexicon& lexicon) {
  if (hypotheses.size() != items.size()) {
    throw InvalidArgument("hypotheses and challenge items differ in length");
  }
  std::vector<GenderLabel> preds;
  preds.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    preds.push_back(classify_gender(hypotheses[i], items[i], lexicon));
  }
  return challenge_metrics(preds, items);
}

double corpus_bleu(const std::vector<Sentence>& hypotheses,
                   const std::vector<Sentence>& references) {
  if (hypotheses.size() != references.size()) {
    throw InvalidArgument("hypotheses and references differ in length");
  }
  if (hypotheses.empty()) throw InvalidArgument("BLEU needs at least one sentence");
  constexpr std::size_t kOrder = 4;
  std::array<std::size_t, kOrder> matches{}, totals{};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) {
        ++ref_counts[std::vector<std::string>(r.begin() + i, r.begin() + i + n)];
      }
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        ++hyp_counts[std::vector<std::string>(h.begin() + i, h.begin() + i + n)];
      }
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  double log_precision = 0.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    if (matches[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp = hyp_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                        : 1.0;
  return 100.0 * bp * std::exp(log_precision / kOrder);
}

namespace {
const char* kCellNames[2][2] = {{"M_pro", "M_anti"}, {"F_pro", "F_anti"}};
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["bleu"] = r.bleu ? nlohmann::ordered_json(*r.bleu) : nlohmann::ordered_json(nullptr);
  j["accuracy"] = r.accuracy;
  j["delta_g"] = r.delta_g;
  j["delta_s"] = r.delta_s;
  if (r.m_f_infinite) {
    j["m_f"] = "inf";
  } else if (std::isnan(r.m_f)) {
    j["m_f"] = nullptr;
  } else {
    j["m_f"] = r.m_f;
  }
  j["n"] = r.n;
  j["unknown"] = r.unknown;
  nlohmann::ordered_json cells;
  for (int g = 0; g < 2; ++g) {
    for (int s = 0; s < 2; ++s) {
      const auto& c = r.cells[g][s];
      cells[kCellNames[g][s]] = {
          {"correct", c.correct}, {"incorrect", c.incorrect}, {"unknown", c.unknown}};
    }
  }
  cells["predicted_M"] = r.predicted_m;
  cells["predicted_F"] = r.predicted_f;
  j["cells"] = cells;
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    if (!j.at("bleu").is_null()) r.bleu = j.at("bleu").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.delta_g = j.at("delta_g").get<double>();
    r.delta_s = j.at("delta_s").get<double>();
    if (j.at("m_f").is_null()) {
      r.m_f = std::numeric_limits<double>::quiet_NaN();
    } else if (j.at("m_f").is_string()) {
      r.m_f_infinite = true;
      r.m_f = std::numeric_limits<double>::infinity();
    } else {
      r.m_f = j.at("m_f").get<double>();
    }
    r.n = j.at("n").get<std::size_t>();
    r.unknown = j.at("unknown").get<std::size_t>();
    const auto& cells = j.at("cells");
    for (int g = 0; g < 2; ++g) {
      for (int s = 0; s < 2; ++s) {
        const auto& c = cells.at(kCellNames[g][s]);
        r.cells[g][s] = CellCounts{c.at("correct").get<std::size_t>(),
                                   c.at("incorrect").get<std::size_t>(),
                                   c.at("unknown").get<std::size_t>()};
      }
    }
    r.predicted_m = cells.at("predicted_M").get<std::size_t>();
    r.predicted_f = cells.at("predicted_F").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed metrics: ") + e.what());
  }
  return r;
}

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << metrics_to_json(report).dump(2) << '\n';
}

MetricsReport read_metrics_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return metrics_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

}  // namespace debias
