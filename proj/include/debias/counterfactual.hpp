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

#ifndef DEBIAS_COUNTERFACTUAL_HPP
#define DEBIAS_COUNTERFACTUAL_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <string_view>
#include <utility>
#include <vector>

#include "debias/corpus.hpp"
#include "debias/model.hpp"

namespace debias {

// Symmetric map between masculine and feminine source words.
class StopwordMap {
 public:
  StopwordMap() = default;

  // Throws InvalidArgument when a == b or either word is already mapped
  // to something else.
  void add_pair(const Token& a, const Token& b);
  const Token* counterpart(std::string_view token) const;
  bool contains(std::string_view token) const { return counterpart(token) != nullptr; }
  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  // Each pair once, first element as added.
  const std::vector<std::pair<Token, Token>>& pairs() const { return pairs_; }

  // he/she, his/her, man/woman restricted to words the lexicon knows.
  static StopwordMap for_lexicon(const Lexicon& lexicon);

 private:
  std::map<Token, Token, std::less<>> map_;
  std::vector<std::pair<Token, Token>> pairs_;
};

Sentence swap_gender(const Sentence& sentence, const StopwordMap& map);
ParallelCorpus filter_gendered(const ParallelCorpus& corpus, const StopwordMap& map);

struct ForwardTranslation {
  std::vector<Sentence> outputs;
  std::size_t truncated = 0;  // decodes that hit the length limit
};

// Greedy decoding of every source sentence, in order.
ForwardTranslation forward_translate(const Translator& model, const std::vector<Sentence>& sources);

struct AdaptationSets {
  ParallelCorpus original;
  ParallelCorpus ftrans_original;
  ParallelCorpus ftrans_swapped;
  ParallelCorpus balanced;
  std::size_t truncated = 0;

  static const std::vector<std::string_view>& names();
  const ParallelCorpus& get(std::string_view name) const;
};

AdaptationSets build_adaptation_sets(const ParallelCorpus& corpus, const StopwordMap& map,
                                     const Translator& model);

// stopwords.tsv: "masc<TAB>fem" per line.
void write_stopwords(const StopwordMap& map, const std::filesystem::path& path);
StopwordMap read_stopwords(const std::filesystem::path& path);

}  // namespace debias

#endif  // DEBIAS_COUNTERFACTUAL_HPP
