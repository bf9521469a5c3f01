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

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "debias/corpus.hpp"
#include "debias/error.hpp"
#include "debias/eval.hpp"
#include "debias/rng.hpp"
#include "support.hpp"

using namespace debias;

namespace {

ChallengeItem item(Gender gold, StereotypeClass cls, const Token& profession = "doctor") {
  ChallengeItem it;
  it.profession = profession;
  it.gold = gold;
  it.stereotype_class = cls;
  return it;
}

std::vector<ChallengeItem> balanced_items() {
  using enum StereotypeClass;
  return {item(Gender::M, Pro), item(Gender::F, Pro), item(Gender::M, Anti),
          item(Gender::F, Anti)};
}

// Straightforward BLEU-4: clipped counts per sentence, pooled, geometric mean,
// brevity penalty.
double reference_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += hyps[s].size();
    ref_len += refs[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<Sentence, int> hc, rc;
      for (std::size_t i = 0; i + n <= hyps[s].size(); ++i) {
        ++hc[Sentence(hyps[s].begin() + i, hyps[s].begin() + i + n)];
      }
      for (std::size_t i = 0; i + n <= refs[s].size(); ++i) {
        ++rc[Sentence(refs[s].begin() + i, refs[s].begin() + i + n)];
      }
      for (const auto& [g, c] : hc) {
        totals[n - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0) return 0.0;
    log_sum += std::log(matches[n] / totals[n]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

}  // namespace

TEST_CASE("classify_gender") {
  const Lexicon lex = generate_lexicon(6, 1);
  const auto* prof = lex.professions()[0];
  ChallengeItem it = item(Gender::F, StereotypeClass::Anti, prof->source);
  CHECK(classify_gender({"la", prof->fem_target, "finishedu"}, it, lex) == GenderLabel::F);
  CHECK(classify_gender({"le", prof->masc_target}, it, lex) == GenderLabel::M);
  CHECK(classify_gender({"le", "worku"}, it, lex) == GenderLabel::Unknown);
  CHECK(classify_gender({prof->masc_target, prof->fem_target}, it, lex) == GenderLabel::Unknown);
}

TEST_CASE("hand-computed confusion matrix") {
  using enum GenderLabel;
  const auto r = challenge_metrics({M, M, F, F}, balanced_items());
  CHECK(r.accuracy == 50.0);
  CHECK(r.delta_s == 0.0);
  CHECK(r.delta_g == 0.0);
  CHECK(r.m_f == 1.0);
  CHECK_FALSE(r.m_f_infinite);
  CHECK(r.n == 4);
  CHECK(r.cells[0][0].correct == 1);  // gold M, pro
  CHECK(r.cells[1][0].incorrect == 1);  // gold F, pro
  CHECK(r.cells[0][1].incorrect == 1);  // gold M, anti
  CHECK(r.cells[1][1].correct == 1);  // gold F, anti
}

TEST_CASE("all-correct identities") {
  using enum GenderLabel;
  const auto r = challenge_metrics({M, F, M, F}, balanced_items());
  CHECK(r.accuracy == 100.0);
  CHECK(r.delta_g == 0.0);
  CHECK(r.delta_s == 0.0);
  CHECK(r.m_f == 1.0);
  CHECK(r.unknown == 0);
}

TEST_CASE("all-masculine predictions") {
  using enum GenderLabel;
  const auto r = challenge_metrics({M, M, M, M}, balanced_items());
  CHECK(r.accuracy == 50.0);
  CHECK(r.delta_s == 0.0);
  CHECK(r.m_f_infinite);
  CHECK(r.delta_g > 0.0);
  CHECK(metrics_to_json(r)["m_f"] == "inf");
}

TEST_CASE("delta_g sign on a masculine-defaulting predictor") {
  using enum GenderLabel;
  std::vector<ChallengeItem> items;
  std::vector<GenderLabel> preds;
  for (int i = 0; i < 10; ++i) {
    items.push_back(item(i % 2 ? Gender::F : Gender::M, StereotypeClass::Pro));
    preds.push_back(M);
  }
  const auto r = challenge_metrics(preds, items);
  CHECK(r.delta_g > 0.0);
  CHECK(r.accuracy == 50.0);
}

TEST_CASE("unknowns are counted and never correct") {
  using enum GenderLabel;
  const auto r = challenge_metrics({Unknown, F, M, Unknown}, balanced_items());
  CHECK(r.unknown == 2);
  CHECK(r.accuracy == 50.0);
  std::size_t total = 0;
  for (const auto& row : r.cells) {
    for (const auto& c : row) total += c.total();
  }
  CHECK(total == r.n);
  CHECK_THROWS_AS(challenge_metrics({M}, balanced_items()), InvalidArgument);
}

TEST_CASE("metrics are invariant to item order") {
  Rng rng(3);
  std::vector<ChallengeItem> items;
  std::vector<GenderLabel> preds;
  for (int i = 0; i < 60; ++i) {
    items.push_back(item(rng.bernoulli(0.5) ? Gender::M : Gender::F,
                         rng.bernoulli(0.5) ? StereotypeClass::Pro : StereotypeClass::Anti));
    const double u = rng.uniform();
    preds.push_back(u < 0.6 ? GenderLabel::M : u < 0.9 ? GenderLabel::F : GenderLabel::Unknown);
  }
  const auto a = challenge_metrics(preds, items);
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<ChallengeItem> items2;
  std::vector<GenderLabel> preds2;
  for (auto i : order) {
    items2.push_back(items[i]);
    preds2.push_back(preds[i]);
  }
  const auto b = challenge_metrics(preds2, items2);
  CHECK(metrics_to_json(a).dump() == metrics_to_json(b).dump());
}

TEST_CASE("BLEU hand-computed cases") {
  const Sentence ref = split("le doctoro finishu le worku .");
  CHECK(corpus_bleu({ref}, {ref}) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu({split("the the the the the the the")}, {split("the cat is on the mat")}) ==
        0.0);
  CHECK(corpus_bleu({split("le doctoro finishu le worku")}, {ref}) ==
        doctest::Approx(81.87).epsilon(0.0001));
  CHECK(std::abs(corpus_bleu({split("le doctoro finishu le worku")}, {ref}) -
                 100.0 * std::exp(1.0 - 6.0 / 5.0)) < 1e-9);
}

TEST_CASE("BLEU edge cases") {
  CHECK_THROWS_AS(corpus_bleu({}, {}), InvalidArgument);
  CHECK_THROWS_AS(corpus_bleu({{"a"}}, {}), InvalidArgument);
  // An empty line contributes length 0 and no matches.
  const Sentence ref = split("a b c d e");
  const double with_empty = corpus_bleu({ref, {}}, {ref, ref});
  CHECK(with_empty > 0.0);
  CHECK(with_empty < 100.0);
}

TEST_CASE("BLEU agrees with a direct implementation on random corpora") {
  std::mt19937 gen(17);
  const std::vector<Token> words{"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Sentence> hyps, refs;
    for (int s = 0; s < 8; ++s) {
      Sentence r, h;
      const int rl = 3 + gen() % 8;
      for (int i = 0; i < rl; ++i) r.push_back(words[gen() % 3]);
      h = r;
      // Perturb: drop, substitute, or append tokens.
      if (gen() % 2 && h.size() > 1) h.pop_back();
      if (gen() % 2) h[gen() % h.size()] = words[gen() % words.size()];
      if (gen() % 3 == 0) h.push_back(words[gen() % words.size()]);
      hyps.push_back(h);
      refs.push_back(r);
    }
    const double got = corpus_bleu(hyps, refs);
    CHECK(got == doctest::Approx(reference_bleu(hyps, refs)).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 100.0);
  }
}

TEST_CASE("dropping the last token never raises the brevity factor") {
  std::mt19937 gen(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Sentence> refs, hyps, shorter;
    for (int s = 0; s < 5; ++s) {
      Sentence r;
      for (int i = 0; i < 6; ++i) r.push_back(std::string(1, static_cast<char>('a' + gen() % 4)));
      refs.push_back(r);
      hyps.push_back(r);
      shorter.push_back(Sentence(r.begin(), r.end() - 1));
    }
    // Identical n-gram structure except for length; precisions of the
    // truncated copies stay 1, so BLEU falls only through the penalty.
    CHECK(corpus_bleu(shorter, refs) <= corpus_bleu(hyps, refs));
  }
}

TEST_CASE("metrics json round trip") {
  using enum GenderLabel;
  testing::TempDir dir;
  auto r = challenge_metrics({M, F, Unknown, F}, balanced_items());
  r.bleu = 42.5;
  write_metrics_json(r, dir / "m.json");
  const auto back = read_metrics_json(dir / "m.json");
  CHECK(metrics_to_json(back).dump() == metrics_to_json(r).dump());
  const auto j = metrics_to_json(r);
  for (const char* key : {"bleu", "accuracy", "delta_g", "delta_s", "m_f", "n", "unknown", "cells"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("ratio is undefined without gendered predictions") {
  using enum GenderLabel;
  const auto r = challenge_metrics({Unknown, Unknown, Unknown, Unknown}, balanced_items());
  CHECK(std::isnan(r.m_f));
  CHECK_FALSE(r.m_f_infinite);
  const auto back = metrics_from_json(metrics_to_json(r));
  CHECK(std::isnan(back.m_f));
  CHECK(metrics_to_json(r)["m_f"].is_null());
}
