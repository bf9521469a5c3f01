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

#ifndef DEBIAS_LATTICE_HPP
#define DEBIAS_LATTICE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "debias/corpus.hpp"
#include "debias/model.hpp"

namespace debias {

using StateId = std::uint32_t;

struct Arc {
  StateId from = 0;
  StateId to = 0;
  TokenId in = 0;
  TokenId out = 0;

  auto operator<=>(const Arc&) const = default;
};

// Unweighted, epsilon-free finite-state transducer over token ids. An
// acceptor is an Fst whose arcs all have in == out.
class Fst {
 public:
  StateId add_state();
  void add_arc(StateId from, StateId to, TokenId in, TokenId out);
  void set_start(StateId s);
  void set_final(StateId s, bool final = true);

  std::size_t num_states() const { return num_states_; }
  StateId start() const { return start_; }
  bool is_final(StateId s) const;
  std::vector<StateId> finals() const;
  const std::vector<Arc>& arcs() const { return arcs_; }
  // Arcs leaving s, in insertion order.
  std::vector<Arc> arcs_from(StateId s) const;

  bool is_acceptor() const;
  bool is_acyclic() const;
  // Throws InvalidState when the machine has a cycle.
  std::vector<StateId> topological_order() const;

  // Sorts arcs and drops exact duplicates.
  void dedupe();

 private:
  std::size_t num_states_ = 0;
  StateId start_ = 0;
  std::vector<bool> final_;
  std::vector<Arc> arcs_;
};

// Alternately-gendered forms of target tokens (each list excludes the key).
class InflectionTable {
 public:
  InflectionTable() = default;

  // Adds a <-> b.
  void add_pair(TokenId a, TokenId b);
  const std::vector<TokenId>& alternatives(TokenId token) const;
  const std::map<TokenId, std::vector<TokenId>>& entries() const { return alt_; }
  std::size_t total_alternatives() const;
  bool empty() const { return alt_.empty(); }

  // Profession masc/fem forms, the determiner pair and the gendered-word pairs.
  static InflectionTable from_lexicon(const Lexicon& lexicon, const Vocab& target);

 private:
  std::map<TokenId, std::vector<TokenId>> alt_;
};

// Single-state machine: w:w for every vocabulary id, plus w:w' for every
// alternative w' of w.
Fst build_flower_transducer(const InflectionTable& table, std::size_t vocab_size);

Fst linear_acceptor(std::span<const TokenId> tokens);
// unknown_count is incremented for every token mapped to UNK.
Fst linear_acceptor(const Sentence& tokens, const Vocab& vocab,
                    std::size_t* unknown_count = nullptr);

// General epsilon-free composition: arcs a (x:y) and b (y:z) give x:z.
Fst compose(const Fst& a, const Fst& b);
Fst project_output(const Fst& fst);
// Removes states that are unreachable from the start or cannot reach a final.
Fst trim(const Fst& fst);
// proj_output(y o t), trimmed and deduplicated.
Fst compose_project(const Fst& y, const Fst& t);

// Saturates at SIZE_MAX. Acyclic acceptors only.
std::size_t count_paths(const Fst& lattice);
// Label sequences of all start-to-final paths, sorted; throws BudgetExceeded
// beyond limit paths.
std::vector<TokenIds> enumerate_paths(const Fst& lattice, std::size_t limit = 10000);

struct DecodeMode {
  enum class Kind { Exact, Beam };
  Kind kind = Kind::Exact;
  std::size_t beam_width = 4;
  std::size_t path_budget = 10000;

  static DecodeMode exact(std::size_t budget = 10000) { return {Kind::Exact, 4, budget}; }
  static DecodeMode beam(std::size_t width) { return {Kind::Beam, width, 10000}; }
};

// Best lattice path under the model (EOS appended to the returned tokens).
// Exact mode throws BudgetExceeded when the lattice has more than
// path_budget paths.
Hypothesis constrained_decode(const ModelParams& params, std::span<const TokenId> source,
                              const Fst& lattice, const DecodeMode& mode);

struct RescoreStats {
  std::size_t exact = 0;
  std::size_t beam_fallback = 0;
  std::size_t empty = 0;
};

// Exact search per sentence, falling back to beam search (fallback_width)
// when a lattice exceeds the path budget. Hypotheses are given without EOS.
std::vector<Hypothesis> rescore_hypotheses(const ModelParams& params,
                                           const std::vector<TokenIds>& sources,
                                           const std::vector<TokenIds>& hypotheses,
                                           const Fst& transducer, std::size_t fallback_width = 4,
                                           std::size_t path_budget = 10000,
                                           RescoreStats* stats = nullptr);

// AT&T-style text: "from\tto\tin\tout" arc lines, then one line per final
// state. The start state is the source of the first arc line.
void write_fst_text(const Fst& fst, const Vocab& vocab, const std::filesystem::path& path);
Fst read_fst_text(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace debias

#endif  // DEBIAS_LATTICE_HPP
