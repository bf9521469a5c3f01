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

#include "debias/counterfactual.hpp"

#include <fstream>
#include <string>

#include "debias/error.hpp"

namespace debias {

void StopwordMap::add_pair(const Token& a, const Token& b) {
  if (a == b) throw InvalidArgument("stopword '" + a + "' cannot map to itself");
  if (const Token* existing = counterpart(a); existing && *existing == b) return;
  for (const Token* t : {&a, &b}) {
    if (map_.count(*t)) throw InvalidArgument("stopword '" + *t + "' is already mapped");
  }
  map_.emplace(a, b);
  map_.emplace(b, a);
  pairs_.emplace_back(a, b);
}

const Token* StopwordMap::counterpart(std::string_view token) const {
  auto it = map_.find(token);
  return it == map_.end() ? nullptr : &it->second;
}

StopwordMap StopwordMap::for_lexicon(const Lexicon& lexicon) {
  StopwordMap map;
  for (const auto& pair : words::gendered_pairs()) {
    if (lexicon.find(pair.masc) && lexicon.find(pair.fem)) map.add_pair(pair.masc, pair.fem);
  }
  return map;
}

Sentence swap_gender(const Sentence& sentence, const StopwordMap& map) {
  Sentence out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) {
    const Token* other = map.counterpart(t);
    out.push_back(other ? *other : t);
  }
  return out;
}

ParallelCorpus filter_gendered(const ParallelCorpus& corpus, const StopwordMap& map) {
  ParallelCorpus out;
  for (const auto& p : corpus.pairs) {
    for (const auto& t : p.source) {
      if (map.contains(t)) {
        out.pairs.push_back(p);
        break;
      }
    }
  }
  return out;
}

ForwardTranslation forward_translate(const Translator& model, const std::vector<Sentence>& sources) {
  ForwardTranslation ft;
  ft.outputs.reserve(sources.size());
  for (const auto& src : sources) {
    const auto ids = model.source_vocab.encode(src);
    const auto hyp = greedy_decode(model.params, ids, default_max_len(ids.size()));
    if (!hyp.finished) ++ft.truncated;
    ft.outputs.push_back(model.target_vocab.decode(hyp.tokens));
  }
  return ft;
}

const std::vector<std::string_view>& AdaptationSets::names() {
  static const std::vector<std::string_view> n{"original", "ftrans_original", "ftrans_swapped",
                                               "balanced"};
  return n;
}

const ParallelCorpus& AdaptationSets::get(std::string_view name) const {
  if (name == "original") return original;
  if (name == "ftrans_original") return ftrans_original;
  if (name == "ftrans_swapped") return ftrans_swapped;
  if (name == "balanced") return balanced;
  throw InvalidArgument("unknown adaptation set '" + std::string(name) + "'");
}

AdaptationSets build_adaptation_sets(const ParallelCorpus& corpus, const StopwordMap& map,
                                     const Translator& model) {
  AdaptationSets sets;
  sets.original = filter_gendered(corpus, map);
  std::vector<Sentence> sources, swapped;
  for (const auto& p : sets.original.pairs) {
    sources.push_back(p.source);
    swapped.push_back(swap_gender(p.source, map));
  }
  auto ft_orig = forward_translate(model, sources);
  auto ft_swap = forward_translate(model, swapped);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    sets.ftrans_original.pairs.push_back({sources[i], std::move(ft_orig.outputs[i])});
    sets.ftrans_swapped.pairs.push_back({swapped[i], std::move(ft_swap.outputs[i])});
  }
  sets.balanced = concatenate(sets.original, sets.ftrans_swapped);
  sets.truncated = ft_orig.truncated + ft_swap.truncated;
  return sets;
}

void write_stopwords(const StopwordMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [a, b] : map.pairs()) out << a << '\t' << b << '\n';
}

StopwordMap read_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  StopwordMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": expected two tab-separated words");
    }
    map.add_pair(line.substr(0, tab), line.substr(tab + 1));
  }
  return map;
}

}  // namespace debias
