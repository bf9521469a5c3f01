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

#ifndef DEBIAS_CORPUS_HPP
#define DEBIAS_CORPUS_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace debias {

using Token = std::string;
using Sentence = std::vector<Token>;

enum class Gender { M, F };

char gender_code(Gender g);
Gender gender_from_code(std::string_view code);
inline Gender opposite(Gender g) { return g == Gender::M ? Gender::F : Gender::M; }

enum class EntryKind {
  Profession,  // gendered noun with a stereotype label
  Inflected,   // gender-agreeing function word (the determiner)
  Plain,       // single target form
};

struct LexiconEntry {
  Token source;
  Token masc_target;
  Token fem_target;
  EntryKind kind = EntryKind::Plain;
  std::optional<Gender> stereotype;  // set iff kind == Profession
  bool in_challenge = false;

  const Token& target(Gender g) const { return g == Gender::M ? masc_target : fem_target; }
  bool operator==(const LexiconEntry&) const = default;
};

// Source words whose gender is lexical (he/she, his/her, man/woman).
struct GenderedPair {
  Token masc;
  Token fem;
  const Token& form(Gender g) const { return g == Gender::M ? masc : fem; }
};

namespace words {
inline const Token kDeterminer = "the";
inline const GenderedPair kSubject{"he", "she"};
inline const GenderedPair kPossessive{"his", "her"};
inline const GenderedPair kPerson{"man", "woman"};
inline const Token kPeriod = ".";
inline const Token kThat = "that";
inline const Token kWas = "was";
inline const Token kHandcraftedVerb = "finished";
inline const Token kHandcraftedObject = "work";
const std::vector<Token>& adjectives();
const std::vector<Token>& possessive_verbs();
const std::vector<Token>& objects();
const std::vector<Token>& transitive_verbs();
const std::vector<Token>& report_verbs();
const std::vector<Token>& states();
const std::vector<GenderedPair>& gendered_pairs();
// Built-in profession inventory the generator samples from.
const std::vector<Token>& profession_inventory();
}  // namespace words

// Closed vocabulary of the synthetic language pair. Entries are ordered:
// professions (alphabetical), the determiner, then plain words.
class Lexicon {
 public:
  Lexicon() = default;
  // Validates source uniqueness and target-form distinctness.
  explicit Lexicon(std::vector<LexiconEntry> entries);

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  std::vector<const LexiconEntry*> professions() const;
  std::vector<const LexiconEntry*> challenge_professions() const;

  const LexiconEntry* find(std::string_view source) const;
  const LexiconEntry& at(std::string_view source) const;
  // Target form of a source token; gender only matters for inflected entries.
  const Token& translate(std::string_view source, Gender g = Gender::M) const;

  // Profession entry owning a target form, if any.
  const LexiconEntry* profession_for_target(std::string_view target) const;

  std::vector<Token> source_vocabulary() const;
  std::vector<Token> target_vocabulary() const;

  bool operator==(const Lexicon& other) const { return entries_ == other.entries_; }

 private:
  std::vector<LexiconEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_source_;
  std::unordered_map<std::string, std::size_t> by_target_;
};

Lexicon generate_lexicon(std::size_t n_professions, std::uint64_t seed);

void write_lexicon_tsv(const Lexicon& lexicon, const std::filesystem::path& path);
Lexicon read_lexicon_tsv(const std::filesystem::path& path);
std::string lexicon_to_tsv(const Lexicon& lexicon);

struct SentencePair {
  Sentence source;
  Sentence target;
  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  bool operator==(const ParallelCorpus&) const = default;
};

ParallelCorpus concatenate(const ParallelCorpus& a, const ParallelCorpus& b);

// Relative weights of the three sentence templates in generated corpora.
struct TemplateMix {
  double simple = 0.04;          // the PROF <verb> his|her <object> .
  double transitive = 0.93;      // the PROF <verb> the PROF2 .
  double coreference = 0.03;     // the PROF <told> the PROF2 that he|she was <state> .
  double adjective_rate = 0.25;  // chance of an adjective before an entity
  double cue_reliability = 0.6;  // chance a possessive refers to the sentence's entity
  double coref_primary = 0.4;    // chance the subordinate pronoun names the first entity
  double coref_secondary = 0.45; // ... or the second
  double unmentioned_fem = 0.3;  // feminine share of pronouns naming nobody in the sentence
};

ParallelCorpus generate_training_corpus(const Lexicon& lexicon, std::size_t size,
                                        double bias_ratio, std::uint64_t seed,
                                        const TemplateMix& mix = {});

struct CorpusSplits {
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
};

// Train/valid/test drawn from the same distribution, pairwise disjoint by
// source sentence.
CorpusSplits generate_splits(const Lexicon& lexicon, std::size_t train_size,
                             std::size_t valid_size, std::size_t test_size,
                             double bias_ratio, std::uint64_t seed,
                             const TemplateMix& mix = {});

ParallelCorpus generate_handcrafted(const Lexicon& lexicon, bool no_overlap);

enum class StereotypeClass { Pro, Anti };

struct ChallengeItem {
  Sentence source;
  std::size_t primary_index = 0;
  Token profession;
  Gender gold = Gender::M;
  StereotypeClass stereotype_class = StereotypeClass::Pro;
  Sentence reference;
  bool operator==(const ChallengeItem&) const = default;
};

std::vector<ChallengeItem> generate_challenge_set(const Lexicon& lexicon, std::size_t size,
                                                  std::uint64_t seed);

// Corpus files: <prefix>.src / <prefix>.tgt, one space-separated sentence per line.
void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& prefix);
ParallelCorpus read_corpus(const std::filesystem::path& prefix);
void write_sentences(const std::vector<Sentence>& sentences, const std::filesystem::path& path);
std::vector<Sentence> read_sentences(const std::filesystem::path& path);

std::string join(const Sentence& sentence);
Sentence split(std::string_view line);

void write_challenge_jsonl(const std::vector<ChallengeItem>& items,
                           const std::filesystem::path& path);
std::vector<ChallengeItem> read_challenge_jsonl(const std::filesystem::path& path);

}  // namespace debias

#endif  // DEBIAS_CORPUS_HPP
