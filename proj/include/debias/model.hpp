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

#ifndef DEBIAS_MODEL_HPP
#define DEBIAS_MODEL_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "debias/corpus.hpp"

namespace debias {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kPad = 3;
inline constexpr TokenId kFirstRealId = 4;

class Vocab {
 public:
  Vocab();
  explicit Vocab(const std::vector<Token>& tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const Token& token(TokenId id) const;

  // unknown_count, if given, is incremented for every token mapped to UNK.
  TokenIds encode(const Sentence& sentence, std::size_t* unknown_count = nullptr) const;
  // Drops reserved ids (BOS/EOS/PAD); UNK renders as "<unk>".
  Sentence decode(std::span<const TokenId> ids) const;

 private:
  std::vector<Token> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct ModelConfig {
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Named tensors of the attentional GRU encoder-decoder. The same struct holds
// gradients, Adam moments and Fisher estimates.
//
// Gate blocks in the stacked GRU matrices are ordered [update; reset; candidate].
struct ModelParams {
  Eigen::MatrixXd src_embed;  // Vs x E
  Eigen::MatrixXd tgt_embed;  // Vt x E
  Eigen::MatrixXd enc_w;      // 3H x E
  Eigen::MatrixXd enc_u;      // 3H x H
  Eigen::MatrixXd enc_b;      // 3H x 1
  Eigen::MatrixXd dec_w;      // 3H x (E + H), input is [embedding; previous context]
  Eigen::MatrixXd dec_u;      // 3H x H
  Eigen::MatrixXd dec_b;      // 3H x 1
  Eigen::MatrixXd init_w;     // H x H
  Eigen::MatrixXd init_b;     // H x 1
  Eigen::MatrixXd out_w;      // Vt x 2H, input is [decoder state; context]
  Eigen::MatrixXd out_b;      // Vt x 1

  static constexpr std::size_t kTensorCount = 12;
  static const std::array<std::string_view, kTensorCount>& names();

  std::array<Eigen::MatrixXd*, kTensorCount> tensors();
  std::array<const Eigen::MatrixXd*, kTensorCount> tensors() const;

  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  std::size_t embed_dim() const { return static_cast<std::size_t>(src_embed.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(enc_u.cols()); }
  std::size_t src_vocab_size() const { return static_cast<std::size_t>(src_embed.rows()); }
  std::size_t tgt_vocab_size() const { return static_cast<std::size_t>(tgt_embed.rows()); }

  bool same_shape(const ModelParams& other) const;
  bool all_finite() const;
  // Rounds every value to the nearest single-precision float (the checkpoint
  // storage precision).
  void round_to_float();

  bool operator==(const ModelParams& other) const;
};

// Closed-form count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

// Seeded uniform initialization in [-0.08, 0.08].
ModelParams init_params(const ModelConfig& config);

struct TrainingExample {
  TokenIds source;  // without EOS
  TokenIds target;  // without EOS
};

struct LossAndGrad {
  double loss = 0.0;           // mean per-token negative log-likelihood
  std::size_t tokens = 0;      // target tokens including EOS
  ModelParams grads;
};

// Teacher-forced loss and exact gradients. EOS is appended to both sides.
LossAndGrad loss_and_grad(const ModelParams& params, std::span<const TrainingExample> batch);
double batch_loss(const ModelParams& params, std::span<const TrainingExample> batch);

// Incremental decoding API.
struct EncoderOutput {
  Eigen::MatrixXd states;  // H x S, S = source length + 1 (EOS)
};

struct DecoderState {
  Eigen::VectorXd hidden;
  Eigen::VectorXd context;
};

EncoderOutput encode(const ModelParams& params, std::span<const TokenId> source);
DecoderState initial_state(const ModelParams& params, const EncoderOutput& encoded);

struct StepResult {
  DecoderState state;
  Eigen::VectorXd log_probs;  // over the target vocabulary
};

// Consumes the previous target token (kBos at the first step).
StepResult decode_step(const ModelParams& params, const EncoderOutput& encoded,
                       const DecoderState& state, TokenId previous);

struct Hypothesis {
  TokenIds tokens;  // EOS-terminated when finished
  double log_prob = 0.0;
  bool finished = true;
};

// Sum of conditional log-probabilities; target must end in EOS.
double score_sequence(const ModelParams& params, std::span<const TokenId> source,
                      std::span<const TokenId> target);

std::size_t default_max_len(std::size_t source_len);

// Unnormalized beam search. BOS and PAD are never emitted. Ties are broken in
// favour of the lexicographically smaller token sequence.
Hypothesis beam_search(const ModelParams& params, std::span<const TokenId> source,
                       std::size_t beam_width, std::size_t max_len);
inline Hypothesis greedy_decode(const ModelParams& params, std::span<const TokenId> source,
                                std::size_t max_len) {
  return beam_search(params, source, 1, max_len);
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
  bool operator==(const AdamState&) const = default;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamOptions& options);

// Tensor file: text manifest (name, shape, byte offset) followed by row-major
// little-endian float32 data.
struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};
void write_tensor_file(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);
void save_adam(const AdamState& state, const std::filesystem::path& path);
AdamState load_adam(const std::filesystem::path& path);

// Parameters bundled with the vocabularies needed to translate strings.
struct Translator {
  Vocab source_vocab;
  Vocab target_vocab;
  ModelParams params;

  Hypothesis translate_ids(const TokenIds& source, std::size_t beam_width) const;
  Sentence translate(const Sentence& source, std::size_t beam_width) const;
};

Vocab source_vocab(const Lexicon& lexicon);
Vocab target_vocab(const Lexicon& lexicon);
ModelConfig model_config_for(const Lexicon& lexicon, std::size_t embed_dim,
                             std::size_t hidden_dim, std::uint64_t seed);

std::vector<TrainingExample> encode_corpus(const ParallelCorpus& corpus, const Vocab& source,
                                           const Vocab& target);

}  // namespace debias

#endif  // DEBIAS_MODEL_HPP
