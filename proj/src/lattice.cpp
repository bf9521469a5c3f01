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

#include "debias/lattice.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>

#include "debias/error.hpp"

namespace debias {

StateId Fst::add_state() {
  final_.push_back(false);
  return static_cast<StateId>(num_states_++);
}

void Fst::add_arc(StateId from, StateId to, TokenId in, TokenId out) {
  if (from >= num_states_ || to >= num_states_) throw InvalidArgument("arc endpoint out of range");
  arcs_.push_back(Arc{from, to, in, out});
}

void Fst::set_start(StateId s) {
  if (s >= num_states_) throw InvalidArgument("start state out of range");
  start_ = s;
}

void Fst::set_final(StateId s, bool final) {
  if (s >= num_states_) throw InvalidArgument("final state out of range");
  final_[s] = final;
}

bool Fst::is_final(StateId s) const { return s < num_states_ && final_[s]; }

std::vector<StateId> Fst::finals() const {
  std::vector<StateId> out;
  for (StateId s = 0; s < num_states_; ++s) {
    if (final_[s]) out.push_back(s);
  }
  return out;
}

std::vector<Arc> Fst::arcs_from(StateId s) const {
  std::vector<Arc> out;
  for (const auto& a : arcs_) {
    if (a.from == s) out.push_back(a);
  }
  return out;
}

bool Fst::is_acceptor() const {
  return std::all_of(arcs_.begin(), arcs_.end(), [](const Arc& a) { return a.in == a.out; });
}

std::vector<StateId> Fst::topological_order() const {
  std::vector<std::size_t> indegree(num_states_, 0);
  std::vector<std::vector<StateId>> next(num_states_);
  for (const auto& a : arcs_) {
    ++indegree[a.to];
    next[a.from].push_back(a.to);
  }
  std::deque<StateId> ready;
  for (StateId s = 0; s < num_states_; ++s) {
    if (indegree[s] == 0) ready.push_back(s);
  }
  std::vector<StateId> order;
  while (!ready.empty()) {
    const StateId s = ready.front();
    ready.pop_front();
    order.push_back(s);
    for (StateId t : next[s]) {
      if (--indegree[t] == 0) ready.push_back(t);
    }
  }
  if (order.size() != num_states_) throw InvalidState("machine is cyclic");
  return order;
}

bool Fst::is_acyclic() const {
  try {
    topological_order();
    return true;
  } catch (const InvalidState&) {
    return false;
  }
}

void Fst::dedupe() {
  std::sort(arcs_.begin(), arcs_.end());
  arcs_.erase(std::unique(arcs_.begin(), arcs_.end()), arcs_.end());
}

// ---------------------------------------------------------------------------

void InflectionTable::add_pair(TokenId a, TokenId b) {
  if (a == b) throw InvalidArgument("a token cannot be its own alternative");
  auto link = [this](TokenId x, TokenId y) {
    auto& v = alt_[x];
    if (std::find(v.begin(), v.end(), y) == v.end()) v.push_back(y);
  };
  link(a, b);
  link(b, a);
}

const std::vector<TokenId>& InflectionTable::alternatives(TokenId token) const {
  static const std::vector<TokenId> none;
  auto it = alt_.find(token);
  return it == alt_.end() ? none : it->second;
}

std::size_t InflectionTable::total_alternatives() const {
  std::size_t n = 0;
  for (const auto& [_, v] : alt_) n += v.size();
  return n;
}

InflectionTable InflectionTable::from_lexicon(const Lexicon& lexicon, const Vocab& target) {
  InflectionTable table;
  auto add = [&](const Token& masc, const Token& fem) {
    if (!target.contains(masc) || !target.contains(fem)) {
      throw InvalidArgument("inflected form missing from target vocabulary: " + masc);
    }
    table.add_pair(target.id(masc), target.id(fem));
  };
  for (const auto& e : lexicon.entries()) {
    if (e.kind != EntryKind::Plain) add(e.masc_target, e.fem_target);
  }
  for (const auto& pair : words::gendered_pairs()) {
    if (lexicon.find(pair.masc) && lexicon.find(pair.fem)) {
      add(lexicon.translate(pair.masc), lexicon.translate(pair.fem));
    }
  }
  return table;
}

Fst build_flower_transducer(const InflectionTable& table, std::size_t vocab_size) {
  Fst t;
  const StateId s = t.add_state();
  t.set_start(s);
  t.set_final(s);
  auto in_range = [&](TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < vocab_size; };
  for (const auto& [w, alts] : table.entries()) {
    if (!in_range(w)) throw InvalidArgument("inflection table token outside the vocabulary");
    for (TokenId a : alts) {
      if (!in_range(a)) throw InvalidArgument("inflection table token outside the vocabulary");
    }
  }
  for (std::size_t w = 0; w < vocab_size; ++w) {
    const auto id = static_cast<TokenId>(w);
    t.add_arc(s, s, id, id);
    for (TokenId a : table.alternatives(id)) t.add_arc(s, s, id, a);
  }
  return t;
}

Fst linear_acceptor(std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InvalidArgument("linear acceptor needs at least one token");
  Fst y;
  StateId prev = y.add_state();
  y.set_start(prev);
  for (TokenId t : tokens) {
    const StateId next = y.add_state();
    y.add_arc(prev, next, t, t);
    prev = next;
  }
  y.set_final(prev);
  return y;
}

Fst linear_acceptor(const Sentence& tokens, const Vocab& vocab, std::size_t* unknown_count) {
  const auto ids = vocab.encode(tokens, unknown_count);
  return linear_acceptor(ids);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Arc>> adjacency(const Fst& f) {
  std::vector<std::vector<Arc>> out(f.num_states());
  for (const auto& a : f.arcs()) out[a.from].push_back(a);
  return out;
}

}  // namespace

Fst compose(const Fst& a, const Fst& b) {
  Fst c;
  if (a.num_states() == 0 || b.num_states() == 0) return c;
  const auto adj_a = adjacency(a);
  // b's arcs grouped by (state, input label).
  std::vector<std::unordered_map<TokenId, std::vector<Arc>>> by_input(b.num_states());
  for (const auto& arc : b.arcs()) by_input[arc.from][arc.in].push_back(arc);

  std::map<std::pair<StateId, StateId>, StateId> ids;
  std::deque<std::pair<StateId, StateId>> queue;
  auto state_for = [&](StateId sa, StateId sb) {
    auto [it, inserted] = ids.try_emplace({sa, sb}, 0);
    if (inserted) {
      it->second = c.add_state();
      if (a.is_final(sa) && b.is_final(sb)) c.set_final(it->second);
      queue.emplace_back(sa, sb);
    }
    return it->second;
  };
  c.set_start(state_for(a.start(), b.start()));
  while (!queue.empty()) {
    const auto [sa, sb] = queue.front();
    queue.pop_front();
    const StateId from = ids.at({sa, sb});
    for (const auto& x : adj_a[sa]) {
      auto it = by_input[sb].find(x.out);
      if (it == by_input[sb].end()) continue;
      for (const auto& y : it->second) {
        const StateId to = state_for(x.to, y.to);
        c.add_arc(from, to, x.in, y.out);
      }
    }
  }
  return c;
}

Fst project_output(const Fst& fst) {
  Fst p;
  for (std::size_t s = 0; s < fst.num_states(); ++s) {
    p.add_state();
    p.set_final(static_cast<StateId>(s), fst.is_final(static_cast<StateId>(s)));
  }
  if (fst.num_states() > 0) p.set_start(fst.start());
  for (const auto& a : fst.arcs()) p.add_arc(a.from, a.to, a.out, a.out);
  return p;
}

Fst trim(const Fst& fst) {
  const std::size_t n = fst.num_states();
  Fst out;
  if (n == 0) return out;
  std::vector<std::vector<StateId>> fwd(n), bwd(n);
  for (const auto& a : fst.arcs()) {
    fwd[a.from].push_back(a.to);
    bwd[a.to].push_back(a.from);
  }
  auto sweep = [n](const std::vector<std::vector<StateId>>& g, std::vector<StateId> seeds) {
    std::vector<bool> seen(n, false);
    for (StateId s : seeds) seen[s] = true;
    while (!seeds.empty()) {
      const StateId s = seeds.back();
      seeds.pop_back();
      for (StateId t : g[s]) {
        if (!seen[t]) {
          seen[t] = true;
          seeds.push_back(t);
        }
      }
    }
    return seen;
  };
  const auto reach = sweep(fwd, {fst.start()});
  const auto coreach = sweep(bwd, fst.finals());
  std::vector<StateId> remap(n, std::numeric_limits<StateId>::max());
  // The start state is kept even when nothing is accepted.
  remap[fst.start()] = out.add_state();
  out.set_start(remap[fst.start()]);
  out.set_final(remap[fst.start()], fst.is_final(fst.start()));
  for (StateId s = 0; s < n; ++s) {
    if (s == fst.start() || !(reach[s] && coreach[s])) continue;
    remap[s] = out.add_state();
    out.set_final(remap[s], fst.is_final(s));
  }
  for (const auto& a : fst.arcs()) {
    if (reach[a.from] && coreach[a.from] && reach[a.to] && coreach[a.to]) {
      out.add_arc(remap[a.from], remap[a.to], a.in, a.out);
    }
  }
  return out;
}

Fst compose_project(const Fst& y, const Fst& t) {
  Fst out = trim(project_output(compose(y, t)));
  out.dedupe();
  return out;
}

std::size_t count_paths(const Fst& lattice) {
  if (lattice.num_states() == 0) return 0;
  const auto order = lattice.topological_order();
  const auto adj = adjacency(lattice);
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> paths(lattice.num_states(), 0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    std::size_t total = lattice.is_final(*it) ? 1 : 0;
    for (const auto& a : adj[*it]) {
      total = (kMax - total < paths[a.to]) ? kMax : total + paths[a.to];
    }
    paths[*it] = total;
  }
  return paths[lattice.start()];
}

std::vector<TokenIds> enumerate_paths(const Fst& lattice, std::size_t limit) {
  const std::size_t n = count_paths(lattice);
  if (n > limit) {
    throw BudgetExceeded("lattice has " + std::to_string(n) + " paths, budget " +
                         std::to_string(limit));
  }
  std::vector<TokenIds> out;
  if (n == 0) return out;
  const auto adj = adjacency(lattice);
  TokenIds prefix;
  auto walk = [&](auto&& self, StateId s) -> void {
    if (lattice.is_final(s)) out.push_back(prefix);
    for (const auto& a : adj[s]) {
      prefix.push_back(a.out);
      self(self, a.to);
      prefix.pop_back();
    }
  };
  walk(walk, lattice.start());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool better(double score, const TokenIds& tokens, double best_score, const TokenIds& best_tokens,
            bool have_best) {
  if (!have_best) return true;
  if (score != best_score) return score > best_score;
  return tokens < best_tokens;
}

class ExactSearch {
 public:
  ExactSearch(const ModelParams& params, const EncoderOutput& enc, const Fst& lattice)
      : params_(params), enc_(enc), lattice_(lattice), adj_(adjacency(lattice)) {}

  Hypothesis run() {
    TokenIds prefix;
    visit(lattice_.start(), initial_state(params_, enc_), kBos, 0.0, prefix);
    return Hypothesis{best_, best_score_, true};
  }

 private:
  void visit(StateId s, const DecoderState& state, TokenId prev, double score, TokenIds& prefix) {
    const StepResult step = decode_step(params_, enc_, state, prev);
    if (lattice_.is_final(s)) {
      const double total = score + step.log_probs(kEos);
      prefix.push_back(kEos);
      if (better(total, prefix, best_score_, best_, have_best_)) {
        best_ = prefix;
        best_score_ = total;
        have_best_ = true;
      }
      prefix.pop_back();
    }
    for (const auto& a : adj_[s]) {
      prefix.push_back(a.out);
      visit(a.to, step.state, a.out, score + step.log_probs(a.out), prefix);
      prefix.pop_back();
    }
  }

  const ModelParams& params_;
  const EncoderOutput& enc_;
  const Fst& lattice_;
  std::vector<std::vector<Arc>> adj_;
  TokenIds best_;
  double best_score_ = 0.0;
  bool have_best_ = false;
};

struct BeamItem {
  StateId state;
  DecoderState decoder;
  TokenId prev;
  double score;
  TokenIds prefix;
};

Hypothesis beam_constrained(const ModelParams& params, const EncoderOutput& enc,
                            const Fst& lattice, std::size_t width) {
  const auto adj = adjacency(lattice);
  std::vector<BeamItem> active;
  active.push_back(BeamItem{lattice.start(), initial_state(params, enc), kBos, 0.0, {}});
  TokenIds best;
  double best_score = 0.0;
  bool have_best = false;
  while (!active.empty()) {
    std::vector<BeamItem> next;
    for (const auto& item : active) {
      const StepResult step = decode_step(params, enc, item.decoder, item.prev);
      if (lattice.is_final(item.state)) {
        TokenIds done = item.prefix;
        done.push_back(kEos);
        const double total = item.score + step.log_probs(kEos);
        if (better(total, done, best_score, best, have_best)) {
          best = std::move(done);
          best_score = total;
          have_best = true;
        }
      }
      for (const auto& a : adj[item.state]) {
        TokenIds prefix = item.prefix;
        prefix.push_back(a.out);
        next.push_back(BeamItem{a.to, step.state, a.out, item.score + step.log_probs(a.out),
                                std::move(prefix)});
      }
    }
    // Keep the best `width` prefixes arriving at each lattice state.
    std::stable_sort(next.begin(), next.end(), [](const BeamItem& x, const BeamItem& y) {
      if (x.state != y.state) return x.state < y.state;
      if (x.score != y.score) return x.score > y.score;
      return x.prefix < y.prefix;
    });
    active.clear();
    std::size_t kept = 0;
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (i > 0 && next[i].state != next[i - 1].state) kept = 0;
      if (kept++ < width) active.push_back(std::move(next[i]));
    }
  }
  if (!have_best) throw InvalidArgument("lattice accepts no path");
  return Hypothesis{best, best_score, true};
}

}  // namespace

Hypothesis constrained_decode(const ModelParams& params, std::span<const TokenId> source,
                              const Fst& lattice, const DecodeMode& mode) {
  const std::size_t paths = count_paths(lattice);
  if (paths == 0) throw InvalidArgument("lattice accepts no path");
  for (const auto& a : lattice.arcs()) {
    if (a.out < 0 || static_cast<std::size_t>(a.out) >= params.tgt_vocab_size()) {
      throw InvalidArgument("lattice label outside the target vocabulary");
    }
  }
  const auto enc = encode(params, source);
  if (mode.kind == DecodeMode::Kind::Exact) {
    if (paths > mode.path_budget) {
      throw BudgetExceeded("lattice has " + std::to_string(paths) + " paths (budget " +
                           std::to_string(mode.path_budget) + "); use beam mode");
    }
    return ExactSearch(params, enc, lattice).run();
  }
  if (mode.beam_width < 1) throw InvalidArgument("beam width must be at least 1");
  return beam_constrained(params, enc, lattice, mode.beam_width);
}

std::vector<Hypothesis> rescore_hypotheses(const ModelParams& params,
                                           const std::vector<TokenIds>& sources,
                                           const std::vector<TokenIds>& hypotheses,
                                           const Fst& transducer, std::size_t fallback_width,
                                           std::size_t path_budget, RescoreStats* stats) {
  if (sources.size() != hypotheses.size()) {
    throw InvalidArgument("sources and hypotheses differ in count");
  }
  RescoreStats local;
  std::vector<Hypothesis> out;
  out.reserve(hypotheses.size());
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    TokenIds hyp = hypotheses[i];
    if (!hyp.empty() && hyp.back() == kEos) hyp.pop_back();
    if (hyp.empty()) {
      const TokenIds eos{kEos};
      out.push_back(Hypothesis{eos, score_sequence(params, sources[i], eos), true});
      ++local.empty;
      continue;
    }
    const Fst lattice = compose_project(linear_acceptor(hyp), transducer);
    if (count_paths(lattice) <= path_budget) {
      out.push_back(constrained_decode(params, sources[i], lattice, DecodeMode::exact(path_budget)));
      ++local.exact;
    } else {
      out.push_back(constrained_decode(params, sources[i], lattice, DecodeMode::beam(fallback_width)));
      ++local.beam_fallback;
    }
  }
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------

void write_fst_text(const Fst& fst, const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  // Start-state arcs first so a reader can recover the start state.
  std::vector<Arc> arcs = fst.arcs();
  std::stable_partition(arcs.begin(), arcs.end(),
                        [&](const Arc& a) { return a.from == fst.start(); });
  for (const auto& a : arcs) {
    out << a.from << '\t' << a.to << '\t' << vocab.token(a.in) << '\t' << vocab.token(a.out)
        << '\n';
  }
  for (StateId s : fst.finals()) out << s << '\n';
}

Fst read_fst_text(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  struct Line {
    StateId from, to;
    TokenId in, out;
  };
  std::vector<Line> arcs;
  std::vector<StateId> finals;
  StateId max_state = 0;
  bool any = false;
  std::string line;
  std::size_t lineno = 0;
  auto parse_state = [&](const std::string& field) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(field, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != field.size() || field.empty()) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": bad state id");
    }
    return static_cast<StateId>(v);
  };
  auto label = [&](const std::string& token) {
    if (!vocab.contains(token)) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": unknown token '" +
                            token + "'");
    }
    return vocab.id(token);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() == 4) {
      Line l{parse_state(fields[0]), parse_state(fields[1]), label(fields[2]), label(fields[3])};
      max_state = std::max({max_state, l.from, l.to});
      arcs.push_back(l);
    } else if (fields.size() == 1 || fields.size() == 2) {
      finals.push_back(parse_state(fields[0]));
      max_state = std::max(max_state, finals.back());
    } else {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": bad line");
    }
    any = true;
  }
  Fst fst;
  if (!any) return fst;
  for (StateId s = 0; s <= max_state; ++s) fst.add_state();
  fst.set_start(arcs.empty() ? finals.front() : arcs.front().from);
  for (const auto& l : arcs) fst.add_arc(l.from, l.to, l.in, l.out);
  for (StateId s : finals) fst.set_final(s);
  return fst;
}

}  // namespace debias
