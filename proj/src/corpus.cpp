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

#include "debias/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

char gender_code(Gender g) { return g == Gender::M ? 'M' : 'F'; }

Gender gender_from_code(std::string_view code) {
  if (code == "M") return Gender::M;
  if (code == "F") return Gender::F;
  throw InvalidArgument("bad gender code '" + std::string(code) + "'");
}

namespace words {

const std::vector<Token>& adjectives() {
  static const std::vector<Token> v{"tall", "short", "young", "old", "kind", "quiet"};
  return v;
}
const std::vector<Token>& possessive_verbs() {
  static const std::vector<Token> v{"finished", "started", "loved", "lost"};
  return v;
}
const std::vector<Token>& objects() {
  static const std::vector<Token> v{"work", "book", "car", "lunch"};
  return v;
}
const std::vector<Token>& transitive_verbs() {
  static const std::vector<Token> v{"greeted", "called", "thanked", "met", "helped", "saw"};
  return v;
}
const std::vector<Token>& report_verbs() {
  static const std::vector<Token> v{"told", "warned"};
  return v;
}
const std::vector<Token>& states() {
  static const std::vector<Token> v{"busy", "tired", "late", "sick"};
  return v;
}
const std::vector<GenderedPair>& gendered_pairs() {
  static const std::vector<GenderedPair> v{kSubject, kPossessive, kPerson};
  return v;
}

const std::vector<Token>& profession_inventory() {
  static const std::vector<Token> v{
      "accountant", "actor", "actuary", "administrator", "advisor", "agent", "analyst",
      "anesthetist", "announcer", "appraiser", "architect", "archivist", "artist", "assessor",
      "assistant", "astronaut", "astronomer", "athlete", "attendant", "auctioneer", "auditor",
      "author", "bailiff", "baker", "banker", "barber", "barista", "bartender", "biologist",
      "blacksmith", "bodyguard", "bookkeeper", "botanist", "bricklayer", "broker", "builder",
      "butcher", "butler", "buyer", "captain", "cardiologist", "carpenter", "cartographer",
      "cashier", "caterer", "cellist", "chancellor", "chef", "chemist", "chiropractor",
      "choreographer", "cleaner", "clerk", "coach", "cobbler", "collector", "columnist",
      "comedian", "composer", "concierge", "conductor", "consultant", "copywriter", "coroner",
      "counselor", "courier", "critic", "curator", "custodian", "dancer", "decorator",
      "dentist", "deputy", "dermatologist", "designer", "detective", "developer", "dietitian",
      "diplomat", "director", "dispatcher", "doctor", "drafter", "driver", "drummer",
      "ecologist", "economist", "editor", "educator", "electrician", "embalmer", "engineer",
      "engraver", "entertainer", "entrepreneur", "epidemiologist", "estimator", "examiner",
      "farmer", "farrier", "firefighter", "florist", "forester", "gardener", "geographer",
      "geologist", "glazier", "goldsmith", "guard", "guide", "guitarist", "hairdresser",
      "herbalist", "historian", "housekeeper", "hunter", "hygienist", "illustrator",
      "immunologist", "inspector", "installer", "instructor", "insurer", "interpreter",
      "investigator", "janitor", "jeweler", "journalist", "judge", "laborer", "landscaper",
      "lawyer", "lecturer", "librarian", "lifeguard", "linguist", "lobbyist", "locksmith",
      "lyricist", "machinist", "magician", "magistrate", "manager", "mason", "mathematician",
      "mechanic", "mediator", "meteorologist", "miller", "miner", "minister", "model",
      "musician", "navigator", "negotiator", "neurologist", "novelist", "nurse",
      "nutritionist", "officer", "oncologist", "operator", "optician", "optometrist",
      "organizer", "orthodontist", "painter", "paralegal", "paramedic", "pathologist",
      "pediatrician", "performer", "pharmacist", "philosopher", "photographer", "physician",
      "physicist", "pianist", "pilot", "planner", "plasterer", "plumber", "poet", "politician",
      "porter", "potter", "president", "principal", "printer", "producer", "professor",
      "programmer", "promoter", "proofreader", "prosecutor", "psychiatrist", "psychologist",
      "publisher", "radiologist", "ranger", "realtor", "receptionist", "recruiter", "referee",
      "registrar", "reporter", "researcher", "retailer", "reviewer", "roofer", "sailor",
      "scholar", "scientist", "sculptor", "secretary", "senator", "sheriff", "singer",
      "sociologist", "soldier", "solicitor", "sommelier", "specialist", "statistician",
      "stylist", "supervisor", "surgeon", "surveyor", "tailor", "teacher", "technician",
      "therapist", "trader", "trainer", "translator", "treasurer", "tutor", "typist",
      "underwriter", "upholsterer", "urologist", "veterinarian", "violinist", "waiter",
      "warden", "weaver", "welder", "writer", "zoologist"};
  return v;
}

}  // namespace words

namespace {

// Target morphology of the synthetic language.
Token plain_target(const Token& source) {
  if (source == words::kPeriod) return source;
  if (source == words::kSubject.masc) return "il";
  if (source == words::kSubject.fem) return "el";
  if (source == words::kPossessive.masc) return "suo";
  if (source == words::kPossessive.fem) return "sua";
  if (source == words::kPerson.masc) return "omo";
  if (source == words::kPerson.fem) return "oma";
  return source + "u";
}

LexiconEntry plain_entry(const Token& source) {
  const Token t = plain_target(source);
  return LexiconEntry{source, t, t, EntryKind::Plain, std::nullopt, false};
}

std::vector<Token> plain_sources() {
  std::vector<Token> out;
  for (const auto& p : words::gendered_pairs()) {
    out.push_back(p.masc);
    out.push_back(p.fem);
  }
  for (const auto* list : {&words::adjectives(), &words::possessive_verbs(), &words::objects(),
                           &words::transitive_verbs(), &words::report_verbs(), &words::states()}) {
    out.insert(out.end(), list->begin(), list->end());
  }
  out.push_back(words::kThat);
  out.push_back(words::kWas);
  out.push_back(words::kPeriod);
  return out;
}

}  // namespace

Lexicon::Lexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string> targets;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.source.empty() || e.masc_target.empty() || e.fem_target.empty()) {
      throw InvalidArgument("lexicon entry with empty token");
    }
    if (!by_source_.emplace(e.source, i).second) {
      throw InvalidArgument("duplicate source token '" + e.source + "'");
    }
    const bool gendered = e.kind != EntryKind::Plain;
    if (gendered && e.masc_target == e.fem_target) {
      throw InvalidArgument("gendered entry '" + e.source + "' has identical target forms");
    }
    if (!gendered && e.masc_target != e.fem_target) {
      throw InvalidArgument("plain entry '" + e.source + "' has two target forms");
    }
    if ((e.kind == EntryKind::Profession) != e.stereotype.has_value()) {
      throw InvalidArgument("stereotype must be set exactly for professions ('" + e.source + "')");
    }
    for (const Token* t : {&e.masc_target, &e.fem_target}) {
      if (gendered || t == &e.masc_target) {
        if (!targets.insert(*t).second) {
          throw InvalidArgument("target form '" + *t + "' is not unique");
        }
        by_target_.emplace(*t, i);
      }
    }
  }
}

std::vector<const LexiconEntry*> Lexicon::professions() const {
  std::vector<const LexiconEntry*> out;
  for (const auto& e : entries_) {
    if (e.kind == EntryKind::Profession) out.push_back(&e);
  }
  return out;
}

std::vector<const LexiconEntry*> Lexicon::challenge_professions() const {
  std::vector<const LexiconEntry*> out;
  for (const auto& e : entries_) {
    if (e.kind == EntryKind::Profession && e.in_challenge) out.push_back(&e);
  }
  return out;
}

const LexiconEntry* Lexicon::find(std::string_view source) const {
  auto it = by_source_.find(std::string(source));
  return it == by_source_.end() ? nullptr : &entries_[it->second];
}

const LexiconEntry& Lexicon::at(std::string_view source) const {
  const auto* e = find(source);
  if (e == nullptr) throw InvalidArgument("token '" + std::string(source) + "' not in lexicon");
  return *e;
}

const Token& Lexicon::translate(std::string_view source, Gender g) const {
  return at(source).target(g);
}

const LexiconEntry* Lexicon::profession_for_target(std::string_view target) const {
  auto it = by_target_.find(std::string(target));
  if (it == by_target_.end()) return nullptr;
  const auto& e = entries_[it->second];
  return e.kind == EntryKind::Profession ? &e : nullptr;
}

std::vector<Token> Lexicon::source_vocabulary() const {
  std::vector<Token> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.source);
  return out;
}

std::vector<Token> Lexicon::target_vocabulary() const {
  std::vector<Token> out;
  for (const auto& e : entries_) {
    out.push_back(e.masc_target);
    if (e.kind != EntryKind::Plain) out.push_back(e.fem_target);
  }
  return out;
}

Lexicon generate_lexicon(std::size_t n_professions, std::uint64_t seed) {
  if (n_professions < 4) {
    throw InvalidArgument("need at least 4 professions to fill the pro/anti x M/F cells");
  }
  const auto& inventory = words::profession_inventory();
  if (n_professions > inventory.size()) {
    throw InvalidArgument("at most " + std::to_string(inventory.size()) +
                          " professions are available");
  }
  Rng rng(seed);
  std::vector<Token> chosen = inventory;
  rng.shuffle(chosen);
  chosen.resize(n_professions);
  std::sort(chosen.begin(), chosen.end());

  // Stereotype half-split, then a stratified half for the challenge set so
  // that every (stereotype, challenge) cell is populated.
  std::vector<std::size_t> order(n_professions);
  for (std::size_t i = 0; i < n_professions; ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_masc = (n_professions + 1) / 2;
  const std::size_t n_challenge = n_professions / 2;
  const std::size_t challenge_masc = (n_challenge + 1) / 2;
  const std::size_t challenge_fem = n_challenge / 2;

  std::vector<LexiconEntry> entries(n_professions);
  for (std::size_t i = 0; i < n_professions; ++i) {
    entries[i] = LexiconEntry{chosen[i], chosen[i] + "o", chosen[i] + "a",
                              EntryKind::Profession, Gender::F, false};
  }
  std::vector<std::size_t> masc(order.begin(), order.begin() + n_masc);
  std::vector<std::size_t> fem(order.begin() + n_masc, order.end());
  for (auto i : masc) entries[i].stereotype = Gender::M;
  rng.shuffle(masc);
  rng.shuffle(fem);
  for (std::size_t k = 0; k < challenge_masc; ++k) entries[masc[k]].in_challenge = true;
  for (std::size_t k = 0; k < challenge_fem; ++k) entries[fem[k]].in_challenge = true;

  entries.push_back(LexiconEntry{words::kDeterminer, "le", "la", EntryKind::Inflected,
                                 std::nullopt, false});
  for (const auto& s : plain_sources()) entries.push_back(plain_entry(s));
  return Lexicon(std::move(entries));
}

std::string lexicon_to_tsv(const Lexicon& lexicon) {
  std::ostringstream os;
  for (const auto& e : lexicon.entries()) {
    char mark = '-';
    if (e.kind == EntryKind::Profession) mark = gender_code(*e.stereotype);
    if (e.kind == EntryKind::Inflected) mark = '=';
    os << e.source << '\t' << e.masc_target << '\t' << e.fem_target << '\t' << mark << '\t'
       << (e.in_challenge ? 1 : 0) << '\n';
  }
  return os.str();
}

void write_lexicon_tsv(const Lexicon& lexicon, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << lexicon_to_tsv(lexicon);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace

Lexicon read_lexicon_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<LexiconEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 5) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": expected 5 tab-separated fields");
    }
    LexiconEntry e;
    e.source = f[0];
    e.masc_target = f[1];
    e.fem_target = f[2];
    if (f[3] == "M" || f[3] == "F") {
      e.kind = EntryKind::Profession;
      e.stereotype = gender_from_code(f[3]);
    } else if (f[3] == "=") {
      e.kind = EntryKind::Inflected;
    } else if (f[3] == "-") {
      e.kind = EntryKind::Plain;
    } else {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": bad stereotype mark '" + f[3] + "'");
    }
    if (f[4] != "0" && f[4] != "1") {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": in_challenge must be 0 or 1");
    }
    e.in_challenge = f[4] == "1";
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(entries));
}

ParallelCorpus concatenate(const ParallelCorpus& a, const ParallelCorpus& b) {
  ParallelCorpus out = a;
  out.pairs.insert(out.pairs.end(), b.pairs.begin(), b.pairs.end());
  return out;
}

namespace {

// Builds a source/target pair token by token; every target word is looked up
// in the lexicon so agreement is enforced in one place.
class PairBuilder {
 public:
  explicit PairBuilder(const Lexicon& lexicon) : lexicon_(lexicon) {}

  PairBuilder& word(const Token& source, Gender g = Gender::M) {
    pair_.source.push_back(source);
    pair_.target.push_back(lexicon_.translate(source, g));
    return *this;
  }

  // "the [adj] noun" with determiner and noun agreeing in g.
  PairBuilder& entity(const Token& noun, Gender g, const Token* adjective = nullptr) {
    word(words::kDeterminer, g);
    if (adjective != nullptr) word(*adjective);
    return word(noun, g);
  }

  SentencePair take() { return std::move(pair_); }

 private:
  const Lexicon& lexicon_;
  SentencePair pair_;
};

struct CorpusSampler {
  const Lexicon& lexicon;
  double bias_ratio;
  const TemplateMix& mix;
  std::vector<const LexiconEntry*> professions;

  const Token* maybe_adjective(Rng& rng) const {
    if (!rng.bernoulli(mix.adjective_rate)) return nullptr;
    return &rng.pick(words::adjectives());
  }

  // Gender of an entity cued by a source pronoun: stereotypical with
  // probability bias_ratio.
  Gender cued_gender(const LexiconEntry& prof, Rng& rng) const {
    return rng.bernoulli(bias_ratio) ? *prof.stereotype : opposite(*prof.stereotype);
  }

  // A pronoun names the entity with probability cue_reliability; otherwise it
  // refers to someone unmentioned and the entity stays generic masculine.
  std::pair<Gender, bool> pronoun_gender(const LexiconEntry& prof, Rng& rng) const {
    if (rng.bernoulli(mix.cue_reliability)) return {cued_gender(prof, rng), true};
    return {unmentioned_gender(rng), false};
  }

  Gender unmentioned_gender(Rng& rng) const {
    return rng.bernoulli(mix.unmentioned_fem) ? Gender::F : Gender::M;
  }

  const LexiconEntry& other_profession(const LexiconEntry& primary, Rng& rng) const {
    while (true) {
      const auto* p = rng.pick(professions);
      if (p != &primary) return *p;
    }
  }

  SentencePair sample(Rng& rng) const {
    const double total = mix.simple + mix.transitive + mix.coreference;
    const double u = rng.uniform() * total;
    const auto& prof = *rng.pick(professions);
    PairBuilder b(lexicon);
    if (u < mix.simple) {
      const auto [g, names_entity] = pronoun_gender(prof, rng);
      const Token* adj = maybe_adjective(rng);
      b.entity(prof.source, names_entity ? g : Gender::M, adj)
          .word(rng.pick(words::possessive_verbs()))
          .word(words::kPossessive.form(g))
          .word(rng.pick(words::objects()))
          .word(words::kPeriod);
    } else if (u < mix.simple + mix.transitive) {
      // No source cue for either entity: generic masculine.
      const Token* adj = maybe_adjective(rng);
      const auto& other = other_profession(prof, rng);
      const Token& verb = rng.pick(words::transitive_verbs());
      const Token* adj2 = maybe_adjective(rng);
      b.entity(prof.source, Gender::M, adj)
          .word(verb)
          .entity(other.source, Gender::M, adj2)
          .word(words::kPeriod);
    } else {
      // The pronoun names the first entity, the second, or someone else.
      const auto& other = other_profession(prof, rng);
      const double v = rng.uniform();
      const int referent = v < mix.coref_primary                          ? 0
                           : v < mix.coref_primary + mix.coref_secondary ? 1
                                                                         : 2;
      const Gender g = referent == 0   ? cued_gender(prof, rng)
                       : referent == 1 ? cued_gender(other, rng)
                                       : unmentioned_gender(rng);
      b.entity(prof.source, referent == 0 ? g : Gender::M)
          .word(rng.pick(words::report_verbs()))
          .entity(other.source, referent == 1 ? g : Gender::M)
          .word(words::kThat)
          .word(words::kSubject.form(g))
          .word(words::kWas)
          .word(rng.pick(words::states()))
          .word(words::kPeriod);
    }
    return b.take();
  }
};

void check_bias(double bias_ratio) {
  if (!(bias_ratio >= 0.5 && bias_ratio <= 1.0)) {
    throw InvalidArgument("bias_ratio must lie in [0.5, 1]");
  }
}

}  // namespace

ParallelCorpus generate_training_corpus(const Lexicon& lexicon, std::size_t size,
                                        double bias_ratio, std::uint64_t seed,
                                        const TemplateMix& mix) {
  if (size < 1) throw InvalidArgument("corpus size must be at least 1");
  check_bias(bias_ratio);
  CorpusSampler sampler{lexicon, bias_ratio, mix, lexicon.professions()};
  if (sampler.professions.size() < 2) throw InvalidArgument("lexicon needs two professions");
  Rng rng(seed);
  ParallelCorpus out;
  out.pairs.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.pairs.push_back(sampler.sample(rng));
  return out;
}

CorpusSplits generate_splits(const Lexicon& lexicon, std::size_t train_size,
                             std::size_t valid_size, std::size_t test_size, double bias_ratio,
                             std::uint64_t seed, const TemplateMix& mix) {
  CorpusSplits splits;
  splits.train = generate_training_corpus(lexicon, train_size, bias_ratio, seed, mix);
  std::set<Sentence> seen;
  for (const auto& p : splits.train.pairs) seen.insert(p.source);

  CorpusSampler sampler{lexicon, bias_ratio, mix, lexicon.professions()};
  auto held_out = [&](std::size_t n, std::uint64_t salt) {
    Rng rng(derive_seed(seed, salt));
    ParallelCorpus out;
    std::size_t attempts = 0;
    while (out.size() < n) {
      if (++attempts > 1000 * (n + 1)) {
        throw InvalidState("cannot draw enough held-out sentences disjoint from training");
      }
      auto pair = sampler.sample(rng);
      if (seen.insert(pair.source).second) out.pairs.push_back(std::move(pair));
    }
    return out;
  };
  splits.valid = held_out(valid_size, 1);
  splits.test = held_out(test_size, 2);
  return splits;
}

ParallelCorpus generate_handcrafted(const Lexicon& lexicon, bool no_overlap) {
  const auto professions = lexicon.professions();
  if (professions.empty()) throw InvalidArgument("lexicon has no professions");
  ParallelCorpus out;
  auto add = [&](const Token& noun, Gender g, const Token* adjective) {
    PairBuilder b(lexicon);
    b.entity(noun, g, adjective)
        .word(words::kHandcraftedVerb)
        .word(words::kPossessive.form(g))
        .word(words::kHandcraftedObject)
        .word(words::kPeriod);
    out.pairs.push_back(b.take());
  };
  std::size_t excluded = 0;
  for (const auto* p : professions) {
    if (no_overlap && p->in_challenge) {
      ++excluded;
      continue;
    }
    add(p->source, Gender::M, nullptr);
    add(p->source, Gender::F, nullptr);
  }
  if (no_overlap) {
    if (excluded == professions.size()) {
      throw InvalidState("no non-challenge professions left for the no-overlap set");
    }
    const auto& adjectives = words::adjectives();
    for (std::size_t k = 0; k < excluded; ++k) {
      const Token& adj = adjectives[k % adjectives.size()];
      add(words::kPerson.masc, Gender::M, &adj);
      add(words::kPerson.fem, Gender::F, &adj);
    }
  }
  return out;
}

std::vector<ChallengeItem> generate_challenge_set(const Lexicon& lexicon, std::size_t size,
                                                  std::uint64_t seed) {
  if (size % 4 != 0) throw InvalidArgument("challenge size must be divisible by 4");
  const auto challenge = lexicon.challenge_professions();
  const auto all = lexicon.professions();
  std::vector<const LexiconEntry*> by_stereotype[2];
  for (const auto* p : challenge) by_stereotype[*p->stereotype == Gender::M ? 0 : 1].push_back(p);
  if (size > 0 && (by_stereotype[0].empty() || by_stereotype[1].empty())) {
    throw InvalidState("challenge professions must include both stereotypes");
  }
  Rng rng(seed);
  std::vector<ChallengeItem> items;
  items.reserve(size);
  const std::size_t per_cell = size / 4;
  for (Gender gold : {Gender::M, Gender::F}) {
    for (StereotypeClass cls : {StereotypeClass::Pro, StereotypeClass::Anti}) {
      const Gender stereotype = cls == StereotypeClass::Pro ? gold : opposite(gold);
      const auto& pool = by_stereotype[stereotype == Gender::M ? 0 : 1];
      for (std::size_t k = 0; k < per_cell; ++k) {
        const auto& prof = *rng.pick(pool);
        const LexiconEntry* other = nullptr;
        do {
          other = rng.pick(all);
        } while (other == &prof);
        PairBuilder b(lexicon);
        b.entity(prof.source, gold)
            .word(rng.pick(words::report_verbs()))
            .entity(other->source, Gender::M)
            .word(words::kThat)
            .word(words::kSubject.form(gold))
            .word(words::kWas)
            .word(rng.pick(words::states()))
            .word(words::kPeriod);
        auto pair = b.take();
        items.push_back(ChallengeItem{std::move(pair.source), 1, prof.source, gold, cls,
                                      std::move(pair.target)});
      }
    }
  }
  // Interleave cells so that prefixes of the file stay roughly balanced.
  rng.shuffle(items);
  return items;
}

std::string join(const Sentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out += ' ';
    out += sentence[i];
  }
  return out;
}

Sentence split(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void write_sentences(const std::vector<Sentence>& sentences, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : sentences) out << join(s) << '\n';
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(split(line));
  return out;
}

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& prefix) {
  std::vector<Sentence> src, tgt;
  src.reserve(corpus.size());
  tgt.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  write_sentences(src, prefix.string() + ".src");
  write_sentences(tgt, prefix.string() + ".tgt");
}

ParallelCorpus read_corpus(const std::filesystem::path& prefix) {
  auto src = read_sentences(prefix.string() + ".src");
  auto tgt = read_sentences(prefix.string() + ".tgt");
  if (src.size() != tgt.size()) {
    throw InvalidArgument("corpus " + prefix.string() + " has mismatched line counts");
  }
  ParallelCorpus out;
  out.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out.pairs.push_back(SentencePair{std::move(src[i]), std::move(tgt[i])});
  }
  return out;
}

void write_challenge_jsonl(const std::vector<ChallengeItem>& items,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& item : items) {
    nlohmann::ordered_json j;
    j["source"] = item.source;
    j["primary_index"] = item.primary_index;
    j["profession"] = item.profession;
    j["gold"] = std::string(1, gender_code(item.gold));
    j["stereotype_class"] = item.stereotype_class == StereotypeClass::Pro ? "pro" : "anti";
    j["reference"] = item.reference;
    out << j.dump() << '\n';
  }
}

std::vector<ChallengeItem> read_challenge_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<ChallengeItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ChallengeItem item;
      item.source = j.at("source").get<Sentence>();
      item.primary_index = j.at("primary_index").get<std::size_t>();
      item.profession = j.at("profession").get<std::string>();
      item.gold = gender_from_code(j.at("gold").get<std::string>());
      const auto cls = j.at("stereotype_class").get<std::string>();
      if (cls != "pro" && cls != "anti") throw InvalidArgument("bad stereotype_class " + cls);
      item.stereotype_class = cls == "pro" ? StereotypeClass::Pro : StereotypeClass::Anti;
      item.reference = j.at("reference").get<Sentence>();
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(path.string() + ": " + e.what());
    }
  }
  return items;
}

}  // namespace debias
