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
#include <set>

#include <doctest.h>

#include "debias/corpus.hpp"
#include "debias/error.hpp"
#include "support.hpp"

using namespace debias;

namespace {

// Every pronoun names the primary entity.
TemplateMix pure_mix() {
  TemplateMix m;
  m.simple = 0.5;
  m.transitive = 0.0;
  m.coreference = 0.5;
  m.cue_reliability = 1.0;
  m.coref_primary = 1.0;
  m.coref_secondary = 0.0;
  return m;
}

std::optional<Gender> pronoun_gender(const Sentence& source) {
  for (const auto& w : source) {
    for (const auto& pair : words::gendered_pairs()) {
      if (w == pair.masc) return Gender::M;
      if (w == pair.fem) return Gender::F;
    }
  }
  return std::nullopt;
}

// Gender of the first profession in a target sentence.
Gender first_entity_gender(const Sentence& target, const Lexicon& lex) {
  for (const auto& w : target) {
    if (const auto* p = lex.profession_for_target(w)) {
      return w == p->masc_target ? Gender::M : Gender::F;
    }
  }
  FAIL("no profession in target");
  return Gender::M;
}

}  // namespace

TEST_CASE("lexicon sizes and stereotype split") {
  const Lexicon big = generate_lexicon(194, 1);
  CHECK(big.professions().size() == 194);
  std::size_t masc = 0;
  for (const auto* p : big.professions()) masc += *p->stereotype == Gender::M;
  CHECK(masc == 97);

  const Lexicon four = generate_lexicon(4, 0);
  masc = 0;
  for (const auto* p : four.professions()) masc += *p->stereotype == Gender::M;
  CHECK(four.professions().size() == 4);
  CHECK(masc == 2);

  CHECK_THROWS_AS(generate_lexicon(3, 0), InvalidArgument);
}

TEST_CASE("lexicon is deterministic and follows the morphology scheme") {
  CHECK(lexicon_to_tsv(generate_lexicon(10, 7)) == lexicon_to_tsv(generate_lexicon(10, 7)));
  CHECK(lexicon_to_tsv(generate_lexicon(10, 7)) != lexicon_to_tsv(generate_lexicon(10, 8)));

  const Lexicon lex = generate_lexicon(12, 3);
  for (const auto* p : lex.professions()) {
    CHECK(p->masc_target == p->source + "o");
    CHECK(p->fem_target == p->source + "a");
    CHECK(p->stereotype.has_value());
  }
  CHECK(lex.translate("the", Gender::M) == "le");
  CHECK(lex.translate("the", Gender::F) == "la");
  CHECK(lex.translate("he") == "il");
  CHECK(lex.translate("she") == "el");
  CHECK(lex.translate("busy") == "busyu");
  CHECK(lex.translate(".") == ".");
  CHECK(lex.challenge_professions().size() == 6);

  // Target forms are pairwise distinct across entries.
  std::set<Token> forms;
  std::size_t expected = 0;
  for (const auto& e : lex.entries()) {
    forms.insert(e.masc_target);
    forms.insert(e.fem_target);
    expected += e.masc_target == e.fem_target ? 1 : 2;
  }
  CHECK(forms.size() == expected);
}

TEST_CASE("lexicon tsv round trip") {
  testing::TempDir dir;
  const Lexicon lex = generate_lexicon(9, 5);
  write_lexicon_tsv(lex, dir / "lexicon.tsv");
  const Lexicon back = read_lexicon_tsv(dir / "lexicon.tsv");
  CHECK(back == lex);
  CHECK(testing::slurp(dir / "lexicon.tsv") == lexicon_to_tsv(lex));
}

TEST_CASE("training corpus: determinism and closed vocabulary") {
  const Lexicon lex = generate_lexicon(10, 2);
  const auto a = generate_training_corpus(lex, 500, 0.9, 11);
  const auto b = generate_training_corpus(lex, 500, 0.9, 11);
  CHECK(a == b);
  const auto sv = lex.source_vocabulary();
  const auto tv = lex.target_vocabulary();
  const std::set<Token> src(sv.begin(), sv.end()), tgt(tv.begin(), tv.end());
  for (const auto& p : a.pairs) {
    REQUIRE(!p.source.empty());
    CHECK(p.source.size() == p.target.size());
    for (const auto& w : p.source) CHECK(src.count(w) == 1);
    for (const auto& w : p.target) CHECK(tgt.count(w) == 1);
  }
  CHECK_THROWS_AS(generate_training_corpus(lex, 0, 0.9, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_training_corpus(lex, 10, 0.4, 1), InvalidArgument);
}

TEST_CASE("training corpus: word-by-word agreement") {
  const Lexicon lex = generate_lexicon(10, 2);
  for (const auto& p : generate_training_corpus(lex, 2000, 0.8, 4).pairs) {
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      const auto& e = lex.at(p.source[i]);
      CHECK((p.target[i] == e.masc_target || p.target[i] == e.fem_target));
      // The determiner agrees with the noun it introduces.
      if (p.source[i] == "the") {
        std::size_t j = i + 1;
        while (lex.at(p.source[j]).kind != EntryKind::Profession) ++j;
        const bool fem_noun = p.target[j] == lex.at(p.source[j]).fem_target;
        CHECK(p.target[i] == (fem_noun ? "la" : "le"));
      }
    }
  }
}

TEST_CASE("training corpus: stereotype agreement tracks bias_ratio") {
  const Lexicon lex = generate_lexicon(40, 42);
  const auto corpus = generate_training_corpus(lex, 20000, 0.9, 42, pure_mix());
  std::size_t agree = 0;
  for (const auto& p : corpus.pairs) {
    std::size_t i = 0;
    while (lex.at(p.source[i]).kind != EntryKind::Profession) ++i;
    agree += first_entity_gender(p.target, lex) == *lex.at(p.source[i]).stereotype;
  }
  CHECK(std::abs(static_cast<double>(agree) / corpus.size() - 0.9) <= 0.02);
}

TEST_CASE("training corpus: unbiased sampling is balanced") {
  const Lexicon lex = generate_lexicon(40, 42);
  const auto corpus = generate_training_corpus(lex, 20000, 0.5, 9, pure_mix());
  std::size_t m = 0, f = 0;
  for (const auto& p : corpus.pairs) {
    const auto g = pronoun_gender(p.source);
    REQUIRE(g.has_value());
    (*g == Gender::M ? m : f) += 1;
  }
  CHECK(static_cast<double>(m) / f == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("training corpus: bias 1 makes every named entity stereotypical") {
  const Lexicon lex = generate_lexicon(20, 1);
  for (const auto& p : generate_training_corpus(lex, 3000, 1.0, 3, pure_mix()).pairs) {
    const auto g = pronoun_gender(p.source);
    REQUIRE(g.has_value());
    std::size_t i = 0;
    while (lex.at(p.source[i]).kind != EntryKind::Profession) ++i;
    CHECK(*g == *lex.at(p.source[i]).stereotype);
    CHECK(first_entity_gender(p.target, lex) == *g);
  }
}

TEST_CASE("default mix: pronouns that name an entity still follow the stereotype") {
  // With the default mix an entity is feminine only when a pronoun names it,
  // so feminine entities carry the cued distribution.
  const Lexicon lex = generate_lexicon(40, 42);
  const auto corpus = generate_training_corpus(lex, 20000, 0.9, 42);
  std::size_t fem = 0, fem_stereo = 0;
  for (const auto& p : corpus.pairs) {
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      const auto& e = lex.at(p.source[i]);
      if (e.kind != EntryKind::Profession || p.target[i] != e.fem_target) continue;
      ++fem;
      fem_stereo += *e.stereotype == Gender::F;
    }
  }
  REQUIRE(fem > 100);
  CHECK(static_cast<double>(fem_stereo) / fem > 0.85);
}

TEST_CASE("splits are pairwise disjoint by source") {
  const Lexicon lex = generate_lexicon(10, 4);
  const auto s = generate_splits(lex, 800, 60, 60, 0.9, 8);
  CHECK(s.train.size() == 800);
  CHECK(s.valid.size() == 60);
  CHECK(s.test.size() == 60);
  std::set<Sentence> train;
  for (const auto& p : s.train.pairs) train.insert(p.source);
  std::set<Sentence> held;
  for (const auto* c : {&s.valid, &s.test}) {
    for (const auto& p : c->pairs) {
      CHECK(train.count(p.source) == 0);
      CHECK(held.insert(p.source).second);
    }
  }
  CHECK(generate_splits(lex, 800, 60, 60, 0.9, 8).test == s.test);
}

TEST_CASE("handcrafted set") {
  const Lexicon lex = generate_lexicon(194, 0);
  CHECK(generate_handcrafted(lex, false).size() == 388);

  const Lexicon small = generate_lexicon(5, 2);
  const auto full = generate_handcrafted(small, false);
  CHECK(full.size() == 10);
  std::size_t his = 0, her = 0;
  for (const auto& p : full.pairs) {
    his += std::count(p.source.begin(), p.source.end(), "his");
    her += std::count(p.source.begin(), p.source.end(), "her");
    CHECK(p.source[0] == "the");
    CHECK(p.source[2] == "finished");
    CHECK(p.source[4] == "work");
  }
  CHECK(his == 5);
  CHECK(her == 5);

  // n = 5 with k = 2 challenge professions: 6 profession sentences and 4
  // adjective sentences.
  REQUIRE(small.challenge_professions().size() == 2);
  const auto no = generate_handcrafted(small, true);
  CHECK(no.size() == 10);
  std::set<Token> challenge;
  for (const auto* p : small.challenge_professions()) challenge.insert(p->source);
  std::size_t prof_sentences = 0, adjective_sentences = 0;
  his = her = 0;
  for (const auto& p : no.pairs) {
    const auto& noun = small.at(p.source[1]).kind == EntryKind::Profession ? p.source[1] : p.source[2];
    CHECK(challenge.count(noun) == 0);
    if (small.at(noun).kind == EntryKind::Profession) {
      ++prof_sentences;
    } else {
      ++adjective_sentences;
      CHECK((noun == "man" || noun == "woman"));
    }
    his += std::count(p.source.begin(), p.source.end(), "his");
    her += std::count(p.source.begin(), p.source.end(), "her");
  }
  CHECK(prof_sentences == 6);
  CHECK(adjective_sentences == 4);
  CHECK(his == her);
}

TEST_CASE("handcrafted no-overlap needs a non-challenge profession") {
  std::vector<LexiconEntry> entries{
      {"doctor", "doctoro", "doctora", EntryKind::Profession, Gender::M, true},
      {"the", "le", "la", EntryKind::Inflected, std::nullopt, false},
  };
  for (const auto& w : {"finished", "work", "his", "her", "man", "woman", "tall", "."}) {
    const Token t = std::string(w) == "." ? "." : std::string(w) + "u";
    entries.push_back({w, t, t, EntryKind::Plain, std::nullopt, false});
  }
  const Lexicon lex(entries);
  CHECK(generate_handcrafted(lex, false).size() == 2);
  CHECK_THROWS_AS(generate_handcrafted(lex, true), InvalidState);
}

TEST_CASE("challenge set balance") {
  const Lexicon lex = generate_lexicon(40, 42);
  const auto items = generate_challenge_set(lex, 400, 42);
  REQUIRE(items.size() == 400);
  std::map<std::pair<Gender, StereotypeClass>, int> cells;
  std::size_t m = 0, pro = 0;
  for (const auto& it : items) {
    ++cells[{it.gold, it.stereotype_class}];
    m += it.gold == Gender::M;
    pro += it.stereotype_class == StereotypeClass::Pro;
    const auto& e = lex.at(it.profession);
    CHECK(e.in_challenge);
    CHECK((it.stereotype_class == StereotypeClass::Pro) == (it.gold == *e.stereotype));
    CHECK(it.source[it.primary_index] == it.profession);
    // Exactly one pronoun, and it carries the gold gender.
    std::size_t pronouns = 0;
    for (const auto& w : it.source) pronouns += w == "he" || w == "she";
    CHECK(pronouns == 1);
    CHECK(pronoun_gender(it.source) == it.gold);
    CHECK(it.reference[it.primary_index] == e.target(it.gold));
  }
  CHECK(m == 200);
  CHECK(pro == 200);
  for (const auto& [cell, n] : cells) CHECK(n == 100);
  CHECK(generate_challenge_set(lex, 400, 42) == items);
  CHECK_THROWS_AS(generate_challenge_set(lex, 402, 42), InvalidArgument);
}

TEST_CASE("corpus and challenge files round trip") {
  testing::TempDir dir;
  const Lexicon lex = generate_lexicon(8, 1);
  const auto corpus = generate_training_corpus(lex, 50, 0.9, 1);
  write_corpus(corpus, dir / "train");
  CHECK(read_corpus(dir / "train") == corpus);
  const auto first_line = testing::slurp(dir / "train.src").substr(0, join(corpus.pairs[0].source).size() + 1);
  CHECK(first_line == join(corpus.pairs[0].source) + "\n");

  const auto items = generate_challenge_set(lex, 20, 3);
  write_challenge_jsonl(items, dir / "challenge.jsonl");
  CHECK(read_challenge_jsonl(dir / "challenge.jsonl") == items);
}

TEST_CASE("join and split") {
  CHECK(join({"a", "b", "c"}) == "a b c");
  CHECK(split("a b c") == Sentence{"a", "b", "c"});
  CHECK(split("") == Sentence{});
}
