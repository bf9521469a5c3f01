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
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <doctest.h>

#include "debias/error.hpp"
#include "debias/lattice.hpp"
#include "support.hpp"

using namespace debias;

namespace {

// Inflection groups of one to three forms over ids [4, vocab).
struct RandomInstance {
  InflectionTable table;
  TokenIds hypothesis;
  std::size_t vocab = 0;
};

RandomInstance random_instance(std::mt19937& gen, std::size_t vocab) {
  RandomInstance r;
  r.vocab = vocab;
  std::vector<TokenId> ids;
  for (TokenId t = kFirstRealId; t < static_cast<TokenId>(vocab); ++t) ids.push_back(t);
  std::shuffle(ids.begin(), ids.end(), gen);
  std::size_t i = 0;
  while (i < ids.size()) {
    const std::size_t group = std::min<std::size_t>(1 + gen() % 3, ids.size() - i);
    for (std::size_t a = 0; a < group; ++a) {
      for (std::size_t b = a + 1; b < group; ++b) r.table.add_pair(ids[i + a], ids[i + b]);
    }
    i += group;
  }
  const std::size_t len = 1 + gen() % 6;
  for (std::size_t k = 0; k < len; ++k) {
    r.hypothesis.push_back(kFirstRealId + gen() % (vocab - kFirstRealId));
  }
  return r;
}

// Every per-position choice of a word or one of its alternatives.
std::vector<TokenIds> substitutions(const TokenIds& hyp, const InflectionTable& table) {
  std::vector<TokenIds> out{{}};
  for (TokenId w : hyp) {
    std::vector<TokenId> choices{w};
    for (TokenId a : table.alternatives(w)) choices.push_back(a);
    std::vector<TokenIds> next;
    for (const auto& prefix : out) {
      for (TokenId c : choices) {
        auto longer = prefix;
        longer.push_back(c);
        next.push_back(longer);
      }
    }
    out = std::move(next);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ModelParams random_model(std::size_t vs, std::size_t vt, std::uint64_t seed) {
  ModelConfig c;
  c.src_vocab_size = vs;
  c.tgt_vocab_size = vt;
  c.embed_dim = 4;
  c.hidden_dim = 6;
  c.seed = seed;
  ModelParams p = init_params(c);
  for (auto* t : p.tensors()) *t *= 10.0;
  return p;
}

Hypothesis enumeration_argmax(const ModelParams& p, const TokenIds& src,
                              const std::vector<TokenIds>& paths) {
  Hypothesis best;
  best.log_prob = -std::numeric_limits<double>::infinity();
  for (const auto& path : paths) {
    TokenIds full = path;
    full.push_back(kEos);
    const double s = score_sequence(p, src, full);
    if (s > best.log_prob || (s == best.log_prob && full < best.tokens)) {
      best.tokens = full;
      best.log_prob = s;
    }
  }
  return best;
}

std::size_t max_fan_out(const Fst& lattice) {
  std::size_t worst = 0;
  for (StateId s = 0; s < lattice.num_states(); ++s) {
    worst = std::max(worst, lattice.arcs_from(s).size());
  }
  return worst;
}

}  // namespace

TEST_CASE("composition language equals substitution enumeration") {
  std::mt19937 gen(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(gen, 6 + gen() % 10);
    const Fst flower = build_flower_transducer(inst.table, inst.vocab);
    const Fst lattice = compose_project(linear_acceptor(inst.hypothesis), flower);
    CAPTURE(trial);
    CHECK(lattice.is_acceptor());
    CHECK(lattice.is_acyclic());
    const auto expected = substitutions(inst.hypothesis, inst.table);
    CHECK(enumerate_paths(lattice) == expected);
    CHECK(count_paths(lattice) == expected.size());
  }
}

TEST_CASE("exact constrained decoding equals enumeration argmax") {
  std::mt19937 gen(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t vt = 6 + gen() % 6;
    const auto inst = random_instance(gen, vt);
    const Fst lattice =
        compose_project(linear_acceptor(inst.hypothesis), build_flower_transducer(inst.table, vt));
    const ModelParams p = random_model(7, vt, trial);
    const TokenIds src{4, static_cast<TokenId>(4 + trial % 3)};
    const auto expected = enumeration_argmax(p, src, enumerate_paths(lattice));
    const auto got = constrained_decode(p, src, lattice, DecodeMode::exact());
    CAPTURE(trial);
    CHECK(got.tokens == expected.tokens);
    CHECK(got.log_prob == doctest::Approx(expected.log_prob).epsilon(1e-12));
    CHECK(got.finished);
  }
}

TEST_CASE("beam constrained decoding against exact search") {
  std::mt19937 gen(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t vt = 6 + gen() % 6;
    const auto inst = random_instance(gen, vt);
    const Fst lattice =
        compose_project(linear_acceptor(inst.hypothesis), build_flower_transducer(inst.table, vt));
    const TokenIds src{5, 4, 6};
    CAPTURE(trial);

    ModelConfig c{7, vt, 4, 6, static_cast<std::uint64_t>(100 + trial)};
    const ModelParams plain = init_params(c);
    const auto exact = constrained_decode(plain, src, lattice, DecodeMode::exact());
    const auto beam = constrained_decode(plain, src, lattice, DecodeMode::beam(max_fan_out(lattice)));
    CHECK(beam.tokens == exact.tokens);

    // With larger weights the fan-out width is only a heuristic; a width that
    // covers every path is always exact.
    const ModelParams sharp = random_model(7, vt, 100 + trial);
    const auto sharp_exact = constrained_decode(sharp, src, lattice, DecodeMode::exact());
    const auto narrow = constrained_decode(sharp, src, lattice, DecodeMode::beam(max_fan_out(lattice)));
    const auto full = constrained_decode(sharp, src, lattice, DecodeMode::beam(count_paths(lattice)));
    CHECK(full.tokens == sharp_exact.tokens);
    CHECK(full.log_prob == doctest::Approx(sharp_exact.log_prob).epsilon(1e-12));
    CHECK(narrow.log_prob <= sharp_exact.log_prob + 1e-12);
    const auto paths = enumerate_paths(lattice);
    const TokenIds chosen(narrow.tokens.begin(), narrow.tokens.end() - 1);
    CHECK(std::binary_search(paths.begin(), paths.end(), chosen));
  }
}

TEST_CASE("gendered alternatives of a short hypothesis") {
  InflectionTable table;
  table.add_pair(4, 5);  // determiner
  table.add_pair(6, 7);  // profession
  const Fst flower = build_flower_transducer(table, 10);
  const Fst lattice = compose_project(linear_acceptor(TokenIds{4, 6, 8}), flower);
  const std::vector<TokenIds> expected{{4, 6, 8}, {4, 7, 8}, {5, 6, 8}, {5, 7, 8}};
  CHECK(enumerate_paths(lattice) == expected);
  CHECK(lattice.num_states() == 4);

  InflectionTable wide;
  wide.add_pair(4, 5);
  wide.add_pair(6, 7);
  wide.add_pair(6, 8);
  wide.add_pair(7, 8);
  // Alternative counts (1, 0, 2) per position: 2 * 1 * 3 paths.
  const Fst l2 = compose_project(linear_acceptor(TokenIds{4, 9, 6}), build_flower_transducer(wide, 10));
  CHECK(count_paths(l2) == 6);
}

TEST_CASE("lexicon inflection table covers every gendered target form") {
  const Lexicon lex = generate_lexicon(6, 3);
  const Vocab tv = target_vocab(lex);
  const auto table = InflectionTable::from_lexicon(lex, tv);
  for (const auto* e : lex.professions()) {
    CHECK(table.alternatives(tv.id(e->masc_target)) == std::vector<TokenId>{tv.id(e->fem_target)});
    CHECK(table.alternatives(tv.id(e->fem_target)) == std::vector<TokenId>{tv.id(e->masc_target)});
  }
  CHECK(table.alternatives(tv.id(lex.translate("the", Gender::M))) ==
        std::vector<TokenId>{tv.id(lex.translate("the", Gender::F))});
  CHECK(table.alternatives(tv.id(lex.translate("he"))) ==
        std::vector<TokenId>{tv.id(lex.translate("she"))});
  CHECK(table.alternatives(tv.id(".")).empty());
}

TEST_CASE("flower transducer shape") {
  SUBCASE("empty table is the identity") {
    const Fst flower = build_flower_transducer(InflectionTable{}, 8);
    CHECK(flower.num_states() == 1);
    CHECK(flower.arcs().size() == 8);
    for (const auto& a : flower.arcs()) CHECK(a.in == a.out);
    const TokenIds hyp{4, 7, 5};
    CHECK(enumerate_paths(compose_project(linear_acceptor(hyp), flower)) ==
          std::vector<TokenIds>{hyp});
  }
  SUBCASE("arc count is vocabulary plus alternatives") {
    std::mt19937 gen(5);
    for (int k = 0; k < 10; ++k) {
      const auto inst = random_instance(gen, 12);
      CHECK(build_flower_transducer(inst.table, 12).arcs().size() ==
            12 + inst.table.total_alternatives());
    }
  }
  SUBCASE("out of range tokens are rejected") {
    InflectionTable t;
    t.add_pair(4, 20);
    CHECK_THROWS_AS(build_flower_transducer(t, 10), InvalidArgument);
  }
}

TEST_CASE("unknown tokens become UNK arcs") {
  const Vocab v(std::vector<Token>{"a", "b"});
  std::size_t unk = 0;
  const Fst acc = linear_acceptor(Sentence{"a", "zz", "b", "yy"}, v, &unk);
  CHECK(unk == 2);
  CHECK(enumerate_paths(acc) == std::vector<TokenIds>{{4, kUnk, 5, kUnk}});
}

TEST_CASE("cycles are rejected by path algorithms") {
  Fst f;
  const auto a = f.add_state();
  const auto b = f.add_state();
  f.set_start(a);
  f.set_final(b);
  f.add_arc(a, b, 4, 4);
  f.add_arc(b, a, 5, 5);
  CHECK_FALSE(f.is_acyclic());
  CHECK_THROWS_AS(f.topological_order(), InvalidState);
  CHECK_THROWS_AS(count_paths(f), InvalidState);
}

TEST_CASE("path enumeration budget") {
  InflectionTable t;
  t.add_pair(4, 5);
  const Fst lattice = compose_project(linear_acceptor(TokenIds(12, 4)), build_flower_transducer(t, 6));
  CHECK(count_paths(lattice) == 4096);
  CHECK_THROWS_AS(enumerate_paths(lattice, 1000), BudgetExceeded);
  const auto p = random_model(6, 6, 1);
  CHECK_THROWS_AS(constrained_decode(p, TokenIds{4}, lattice, DecodeMode::exact(1000)),
                  BudgetExceeded);
  CHECK(constrained_decode(p, TokenIds{4}, lattice, DecodeMode::beam(2)).tokens.size() == 13);
}

TEST_CASE("transducer text round trip") {
  testing::TempDir dir;
  const Lexicon lex = generate_lexicon(4, 9);
  const Vocab tv = target_vocab(lex);
  const Fst flower = build_flower_transducer(InflectionTable::from_lexicon(lex, tv), tv.size());
  write_fst_text(flower, tv, dir / "f.fst");
  const Fst back = read_fst_text(dir / "f.fst", tv);
  CHECK(back.num_states() == flower.num_states());
  CHECK(back.start() == flower.start());
  CHECK(back.finals() == flower.finals());
  auto a = flower.arcs(), b = back.arcs();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  std::ofstream(dir / "bad.fst") << "0\t0\tnotaword\tle\n0\n";
  CHECK_THROWS_AS(read_fst_text(dir / "bad.fst", tv), InvalidArgument);
  CHECK_THROWS_AS(read_fst_text(dir / "nope.fst", tv), IoError);
}

TEST_CASE("rescoring keeps the original hypothesis reachable") {
  std::mt19937 gen(8);
  const std::size_t vt = 10;
  const auto p = random_model(8, vt, 4);
  std::vector<TokenIds> sources, hyps;
  InflectionTable table;
  table.add_pair(4, 5);
  table.add_pair(6, 7);
  for (int k = 0; k < 20; ++k) {
    TokenIds h;
    for (int i = 0; i < 1 + k % 5; ++i) h.push_back(4 + gen() % 6);
    hyps.push_back(h);
    sources.push_back(TokenIds{4, static_cast<TokenId>(4 + k % 4)});
  }
  hyps.push_back({});
  sources.push_back({4});
  const Fst flower = build_flower_transducer(table, vt);
  RescoreStats stats;
  const auto out = rescore_hypotheses(p, sources, hyps, flower, 4, 10000, &stats);
  CHECK(stats.exact == 20);
  CHECK(stats.empty == 1);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    TokenIds original = hyps[i];
    original.push_back(kEos);
    CHECK(out[i].tokens.size() == original.size());
    // The rescored output is never worse than the hypothesis it came from.
    CHECK(out[i].log_prob >= score_sequence(p, sources[i], original) - 1e-12);
    const auto paths = substitutions(hyps[i], table);
    TokenIds chosen(out[i].tokens.begin(), out[i].tokens.end() - 1);
    CHECK(std::binary_search(paths.begin(), paths.end(), chosen));
  }
  RescoreStats tight;
  rescore_hypotheses(p, sources, hyps, flower, 4, 3, &tight);
  CHECK(tight.beam_fallback > 0);
  CHECK(tight.exact + tight.beam_fallback + tight.empty == hyps.size());
}
