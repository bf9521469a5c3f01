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

#include "debias/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Vocab

namespace {
const std::array<const char*, 4> kReserved{"<s>", "</s>", "<unk>", "<pad>"};
}

Vocab::Vocab() : Vocab(std::vector<Token>{}) {}

Vocab::Vocab(const std::vector<Token>& tokens) {
  tokens_.reserve(tokens.size() + kReserved.size());
  for (const char* r : kReserved) tokens_.emplace_back(r);
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InvalidArgument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const Token& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocab::encode(const Sentence& sentence, std::size_t* unknown_count) const {
  TokenIds out;
  out.reserve(sentence.size());
  for (const auto& tok : sentence) {
    const TokenId i = id(tok);
    if (i == kUnk && unknown_count != nullptr) ++*unknown_count;
    out.push_back(i);
  }
  return out;
}

Sentence Vocab::decode(std::span<const TokenId> ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (TokenId i : ids) {
    if (i == kBos || i == kEos || i == kPad) continue;
    out.push_back(token(i));
  }
  return out;
}

Vocab source_vocab(const Lexicon& lexicon) { return Vocab(lexicon.source_vocabulary()); }
Vocab target_vocab(const Lexicon& lexicon) { return Vocab(lexicon.target_vocabulary()); }

ModelConfig model_config_for(const Lexicon& lexicon, std::size_t embed_dim,
                             std::size_t hidden_dim, std::uint64_t seed) {
  ModelConfig c;
  c.src_vocab_size = source_vocab(lexicon).size();
  c.tgt_vocab_size = target_vocab(lexicon).size();
  c.embed_dim = embed_dim;
  c.hidden_dim = hidden_dim;
  c.seed = seed;
  return c;
}

std::vector<TrainingExample> encode_corpus(const ParallelCorpus& corpus, const Vocab& source,
                                           const Vocab& target) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    out.push_back(TrainingExample{source.encode(p.source), target.encode(p.target)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1) {
    throw InvalidArgument("embed_dim and hidden_dim must be at least 1");
  }
  if (src_vocab_size <= static_cast<std::size_t>(kFirstRealId) ||
      tgt_vocab_size <= static_cast<std::size_t>(kFirstRealId)) {
    throw InvalidArgument("vocabularies must contain the 4 reserved ids and one real token");
  }
}

const std::array<std::string_view, ModelParams::kTensorCount>& ModelParams::names() {
  static const std::array<std::string_view, kTensorCount> n{
      "src_embed", "tgt_embed", "enc_w", "enc_u",  "enc_b", "dec_w",
      "dec_u",     "dec_b",     "init_w", "init_b", "out_w", "out_b"};
  return n;
}

std::array<MatrixXd*, ModelParams::kTensorCount> ModelParams::tensors() {
  return {&src_embed, &tgt_embed, &enc_w, &enc_u, &enc_b, &dec_w,
          &dec_u,     &dec_b,     &init_w, &init_b, &out_w, &out_b};
}

std::array<const MatrixXd*, ModelParams::kTensorCount> ModelParams::tensors() const {
  return {&src_embed, &tgt_embed, &enc_w, &enc_u, &enc_b, &dec_w,
          &dec_u,     &dec_b,     &init_w, &init_b, &out_w, &out_b};
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  auto dst = z.tensors();
  auto src = tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    *dst[i] = MatrixXd::Zero(src[i]->rows(), src[i]->cols());
  }
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

bool ModelParams::same_shape(const ModelParams& other) const {
  auto a = tensors();
  auto b = other.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
  }
  return true;
}

bool ModelParams::all_finite() const {
  for (const auto* t : tensors()) {
    if (!t->allFinite()) return false;
  }
  return true;
}

void ModelParams::round_to_float() {
  for (auto* t : tensors()) {
    *t = t->cast<float>().cast<double>();
  }
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!same_shape(other)) return false;
  auto a = tensors();
  auto b = other.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (*a[i] != *b[i]) return false;
  }
  return true;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t e = c.embed_dim, h = c.hidden_dim;
  return c.src_vocab_size * e + c.tgt_vocab_size * e  // embeddings
         + 3 * h * e + 3 * h * h + 3 * h              // encoder GRU
         + 3 * h * (e + h) + 3 * h * h + 3 * h        // decoder GRU
         + h * h + h                                  // initial state
         + c.tgt_vocab_size * 2 * h + c.tgt_vocab_size;  // output layer
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  const auto vs = static_cast<Index>(config.src_vocab_size);
  const auto vt = static_cast<Index>(config.tgt_vocab_size);
  const auto e = static_cast<Index>(config.embed_dim);
  const auto h = static_cast<Index>(config.hidden_dim);
  ModelParams p;
  p.src_embed.resize(vs, e);
  p.tgt_embed.resize(vt, e);
  p.enc_w.resize(3 * h, e);
  p.enc_u.resize(3 * h, h);
  p.enc_b.resize(3 * h, 1);
  p.dec_w.resize(3 * h, e + h);
  p.dec_u.resize(3 * h, h);
  p.dec_b.resize(3 * h, 1);
  p.init_w.resize(h, h);
  p.init_b.resize(h, 1);
  p.out_w.resize(vt, 2 * h);
  p.out_b.resize(vt, 1);
  Rng rng(config.seed);
  for (auto* t : p.tensors()) {
    for (Index c = 0; c < t->cols(); ++c) {
      for (Index r = 0; r < t->rows(); ++r) (*t)(r, c) = rng.uniform(-0.08, 0.08);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Network pieces

namespace {

struct GruCache {
  VectorXd x;
  VectorXd h_prev;
  VectorXd z;
  VectorXd r;
  VectorXd n;
  VectorXd rh;
};

inline VectorXd sigmoid(const VectorXd& v) {
  return (1.0 + (-v.array()).exp()).inverse().matrix();
}

VectorXd gru_forward(const MatrixXd& w, const MatrixXd& u, const MatrixXd& b, const VectorXd& x,
                     const VectorXd& h, GruCache* cache) {
  const Index hd = h.size();
  VectorXd pre = b.col(0);
  pre.noalias() += w * x;
  pre.head(2 * hd).noalias() += u.topRows(2 * hd) * h;
  VectorXd z = sigmoid(pre.head(hd));
  VectorXd r = sigmoid(pre.segment(hd, hd));
  VectorXd rh = r.cwiseProduct(h);
  VectorXd n_pre = pre.tail(hd);
  n_pre.noalias() += u.bottomRows(hd) * rh;
  VectorXd n = n_pre.array().tanh().matrix();
  VectorXd out = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = h;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->n = std::move(n);
    cache->rh = std::move(rh);
  }
  return out;
}

// Accumulates parameter gradients; writes input and previous-state gradients.
void gru_backward(const MatrixXd& w, const MatrixXd& u, const GruCache& c, const VectorXd& dh_out,
                  MatrixXd& dw, MatrixXd& du, MatrixXd& db, VectorXd& dx, VectorXd& dh_prev) {
  const Index hd = c.h_prev.size();
  VectorXd dpre(3 * hd);
  const VectorXd dz = dh_out.cwiseProduct(c.h_prev - c.n);
  const VectorXd dn = dh_out.cwiseProduct((1.0 - c.z.array()).matrix());
  dpre.head(hd) = dz.cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
  dpre.tail(hd) = dn.cwiseProduct((1.0 - c.n.array().square()).matrix());
  VectorXd drh = u.bottomRows(hd).transpose() * dpre.tail(hd);
  const VectorXd dr = drh.cwiseProduct(c.h_prev);
  dpre.segment(hd, hd) = dr.cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));

  dw.noalias() += dpre * c.x.transpose();
  db.col(0) += dpre;
  du.topRows(2 * hd).noalias() += dpre.head(2 * hd) * c.h_prev.transpose();
  du.bottomRows(hd).noalias() += dpre.tail(hd) * c.rh.transpose();
  dx.noalias() = w.transpose() * dpre;
  dh_prev = dh_out.cwiseProduct(c.z) + drh.cwiseProduct(c.r);
  dh_prev.noalias() += u.topRows(2 * hd).transpose() * dpre.head(2 * hd);
}

void log_softmax_inplace(VectorXd& v) {
  const double m = v.maxCoeff();
  const double lse = m + std::log((v.array() - m).exp().sum());
  v.array() -= lse;
}

void softmax_inplace(VectorXd& v) {
  const double m = v.maxCoeff();
  v = (v.array() - m).exp().matrix();
  v /= v.sum();
}

void check_ids(std::span<const TokenId> ids, std::size_t vocab, const char* what) {
  for (TokenId i : ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= vocab) {
      throw InvalidArgument(std::string(what) + " token id " + std::to_string(i) +
                            " out of range");
    }
  }
}

VectorXd concat(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

struct EncoderCache {
  std::vector<GruCache> steps;
  MatrixXd states;
};

EncoderCache run_encoder(const ModelParams& p, std::span<const TokenId> source, bool keep) {
  const Index hd = static_cast<Index>(p.hidden_dim());
  const Index len = static_cast<Index>(source.size()) + 1;
  EncoderCache ec;
  ec.states.resize(hd, len);
  if (keep) ec.steps.resize(static_cast<std::size_t>(len));
  VectorXd h = VectorXd::Zero(hd);
  for (Index t = 0; t < len; ++t) {
    const TokenId id = t + 1 < len ? source[static_cast<std::size_t>(t)] : kEos;
    VectorXd x = p.src_embed.row(id).transpose();
    h = gru_forward(p.enc_w, p.enc_u, p.enc_b, x, h,
                    keep ? &ec.steps[static_cast<std::size_t>(t)] : nullptr);
    ec.states.col(t) = h;
  }
  return ec;
}

}  // namespace

EncoderOutput encode(const ModelParams& params, std::span<const TokenId> source) {
  check_ids(source, params.src_vocab_size(), "source");
  return EncoderOutput{run_encoder(params, source, false).states};
}

DecoderState initial_state(const ModelParams& params, const EncoderOutput& encoded) {
  const Index last = encoded.states.cols() - 1;
  VectorXd pre = params.init_b.col(0);
  pre.noalias() += params.init_w * encoded.states.col(last);
  return DecoderState{pre.array().tanh().matrix(), VectorXd::Zero(params.enc_u.cols())};
}

StepResult decode_step(const ModelParams& p, const EncoderOutput& encoded,
                       const DecoderState& state, TokenId previous) {
  VectorXd u = concat(p.tgt_embed.row(previous).transpose(), state.context);
  VectorXd s = gru_forward(p.dec_w, p.dec_u, p.dec_b, u, state.hidden, nullptr);
  VectorXd a = encoded.states.transpose() * s;
  softmax_inplace(a);
  VectorXd c = encoded.states * a;
  VectorXd logits = p.out_b.col(0);
  logits.noalias() += p.out_w * concat(s, c);
  log_softmax_inplace(logits);
  return StepResult{DecoderState{std::move(s), std::move(c)}, std::move(logits)};
}

std::size_t default_max_len(std::size_t source_len) { return 2 * source_len + 5; }

double score_sequence(const ModelParams& params, std::span<const TokenId> source,
                      std::span<const TokenId> target) {
  if (target.empty() || target.back() != kEos) {
    throw InvalidArgument("target must be EOS-terminated");
  }
  check_ids(target, params.tgt_vocab_size(), "target");
  const auto enc = encode(params, source);
  DecoderState st = initial_state(params, enc);
  TokenId prev = kBos;
  double total = 0.0;
  for (TokenId y : target) {
    auto step = decode_step(params, enc, st, prev);
    total += step.log_probs(y);
    st = std::move(step.state);
    prev = y;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Loss and gradients

namespace {

struct DecoderStepCache {
  VectorXd u;
  GruCache gru;
  VectorXd s;
  VectorXd attn;
  VectorXd context;
  VectorXd probs;
};

// Returns the summed NLL of one pair; if grads is non-null, accumulates
// scale * d(NLL).
double example_loss(const ModelParams& p, const TrainingExample& ex, double scale,
                    ModelParams* grads) {
  const bool keep = grads != nullptr;
  const Index hd = static_cast<Index>(p.hidden_dim());
  const Index ed = static_cast<Index>(p.embed_dim());
  EncoderCache enc = run_encoder(p, ex.source, keep);
  const MatrixXd& hs = enc.states;
  const Index slen = hs.cols();

  VectorXd init_pre = p.init_b.col(0);
  init_pre.noalias() += p.init_w * hs.col(slen - 1);
  VectorXd s0 = init_pre.array().tanh().matrix();

  const std::size_t tlen = ex.target.size() + 1;
  std::vector<DecoderStepCache> steps(keep ? tlen : 0);
  VectorXd s = s0;
  VectorXd c = VectorXd::Zero(hd);
  double nll = 0.0;
  for (std::size_t t = 0; t < tlen; ++t) {
    const TokenId prev = t == 0 ? kBos : ex.target[t - 1];
    const TokenId gold = t < ex.target.size() ? ex.target[t] : kEos;
    VectorXd u = concat(p.tgt_embed.row(prev).transpose(), c);
    GruCache gc;
    s = gru_forward(p.dec_w, p.dec_u, p.dec_b, u, s, keep ? &gc : nullptr);
    VectorXd a = hs.transpose() * s;
    softmax_inplace(a);
    c = hs * a;
    VectorXd logits = p.out_b.col(0);
    logits.noalias() += p.out_w * concat(s, c);
    log_softmax_inplace(logits);
    nll -= logits(gold);
    if (keep) {
      auto& st = steps[t];
      st.u = std::move(u);
      st.gru = std::move(gc);
      st.s = s;
      st.attn = std::move(a);
      st.context = c;
      st.probs = logits.array().exp().matrix();
    }
  }
  if (!keep) return nll;

  ModelParams& g = *grads;
  MatrixXd dhs = MatrixXd::Zero(hd, slen);
  VectorXd ds_next = VectorXd::Zero(hd);  // from the recurrence of step t+1
  VectorXd dc_next = VectorXd::Zero(hd);  // context fed into step t+1
  VectorXd du(ed + hd), dprev(hd);
  for (std::size_t t = tlen; t-- > 0;) {
    const auto& st = steps[t];
    const TokenId prev = t == 0 ? kBos : ex.target[t - 1];
    const TokenId gold = t < ex.target.size() ? ex.target[t] : kEos;
    VectorXd dlogits = st.probs * scale;
    dlogits(gold) -= scale;
    const VectorXd sc = concat(st.s, st.context);
    g.out_w.noalias() += dlogits * sc.transpose();
    g.out_b.col(0) += dlogits;
    VectorXd dsc = p.out_w.transpose() * dlogits;
    VectorXd ds = dsc.head(hd) + ds_next;
    VectorXd dc = dsc.tail(hd) + dc_next;

    // c = hs * a, a = softmax(hs^T s)
    VectorXd da = hs.transpose() * dc;
    dhs.noalias() += dc * st.attn.transpose();
    const double mean = st.attn.dot(da);
    VectorXd dscore = st.attn.cwiseProduct((da.array() - mean).matrix());
    ds.noalias() += hs * dscore;
    dhs.noalias() += st.s * dscore.transpose();

    gru_backward(p.dec_w, p.dec_u, st.gru, ds, g.dec_w, g.dec_u, g.dec_b, du, dprev);
    g.tgt_embed.row(prev) += du.head(ed).transpose();
    dc_next = du.tail(hd);
    ds_next = dprev;
  }
  // s0 = tanh(init_w h_last + init_b); the initial context is constant zero.
  VectorXd dinit = ds_next.cwiseProduct((1.0 - s0.array().square()).matrix());
  g.init_w.noalias() += dinit * hs.col(slen - 1).transpose();
  g.init_b.col(0) += dinit;
  dhs.col(slen - 1).noalias() += p.init_w.transpose() * dinit;

  VectorXd dh = VectorXd::Zero(hd);
  VectorXd dx(ed);
  for (Index t = slen; t-- > 0;) {
    const TokenId id = t + 1 < slen ? ex.source[static_cast<std::size_t>(t)] : kEos;
    VectorXd dh_total = dh + dhs.col(t);
    gru_backward(p.enc_w, p.enc_u, enc.steps[static_cast<std::size_t>(t)], dh_total, g.enc_w,
                 g.enc_u, g.enc_b, dx, dh);
    g.src_embed.row(id) += dx.transpose();
  }
  return nll;
}

std::size_t count_tokens(std::span<const TrainingExample> batch) {
  std::size_t n = 0;
  for (const auto& ex : batch) n += ex.target.size() + 1;
  return n;
}

void check_example(const ModelParams& p, const TrainingExample& ex) {
  check_ids(ex.source, p.src_vocab_size(), "source");
  check_ids(ex.target, p.tgt_vocab_size(), "target");
}

}  // namespace

LossAndGrad loss_and_grad(const ModelParams& params, std::span<const TrainingExample> batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  LossAndGrad out;
  out.tokens = count_tokens(batch);
  out.grads = params.zeros_like();
  const double scale = 1.0 / static_cast<double>(out.tokens);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_example(params, batch[i]);
    const double nll = example_loss(params, batch[i], scale, &out.grads);
    if (!std::isfinite(nll)) {
      throw TrainingDivergence("non-finite loss", i);
    }
    total += nll;
  }
  out.loss = total * scale;
  return out;
}

double batch_loss(const ModelParams& params, std::span<const TrainingExample> batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    check_example(params, ex);
    total += example_loss(params, ex, 0.0, nullptr);
  }
  return total / static_cast<double>(count_tokens(batch));
}

// ---------------------------------------------------------------------------
// Beam search

namespace {

struct BeamEntry {
  TokenIds tokens;
  double score = 0.0;
  DecoderState state;
};

// Higher score first, then lexicographically smaller sequence.
bool better(double sa, const TokenIds& ta, double sb, const TokenIds& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

}  // namespace

Hypothesis beam_search(const ModelParams& params, std::span<const TokenId> source,
                       std::size_t beam_width, std::size_t max_len) {
  if (beam_width < 1) throw InvalidArgument("beam_width must be at least 1");
  const auto enc = encode(params, source);
  const auto vocab = static_cast<TokenId>(params.tgt_vocab_size());

  std::vector<BeamEntry> active;
  active.push_back(BeamEntry{{}, 0.0, initial_state(params, enc)});
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double score;
  };

  for (std::size_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<StepResult> results;
    results.reserve(active.size());
    std::vector<Candidate> cands;
    cands.reserve(active.size() * static_cast<std::size_t>(vocab));
    for (std::size_t b = 0; b < active.size(); ++b) {
      const TokenId prev = active[b].tokens.empty() ? kBos : active[b].tokens.back();
      results.push_back(decode_step(params, enc, active[b].state, prev));
      const auto& lp = results.back().log_probs;
      for (TokenId y = 0; y < vocab; ++y) {
        if (y == kBos || y == kPad) continue;
        cands.push_back(Candidate{b, y, active[b].score + lp(y)});
      }
    }
    auto cmp = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = active[a.parent].tokens;
      const auto& tb = active[b.parent].tokens;
      if (a.parent != b.parent && ta != tb) {
        // Sequences of equal length: compare prefixes, then the new token.
        return ta < tb;
      }
      return a.token < b.token;
    };
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), cmp);

    std::vector<BeamEntry> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = cands[k];
      TokenIds toks = active[c.parent].tokens;
      toks.push_back(c.token);
      if (c.token == kEos) {
        finished.push_back(Hypothesis{std::move(toks), c.score, true});
      } else {
        next.push_back(BeamEntry{std::move(toks), c.score, results[c.parent].state});
      }
    }
    active = std::move(next);
    if (!finished.empty() && !active.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& h : finished) best_finished = std::max(best_finished, h.log_prob);
      double best_active = -std::numeric_limits<double>::infinity();
      for (const auto& a : active) best_active = std::max(best_active, a.score);
      // Scores only decrease, so no active entry can overtake.
      if (best_finished > best_active) break;
    }
  }

  if (!finished.empty()) {
    const Hypothesis* best = &finished.front();
    for (const auto& h : finished) {
      if (better(h.log_prob, h.tokens, best->log_prob, best->tokens)) best = &h;
    }
    return *best;
  }
  const BeamEntry* best = &active.front();
  for (const auto& a : active) {
    if (better(a.score, a.tokens, best->score, best->tokens)) best = &a;
  }
  return Hypothesis{best->tokens, best->score, false};
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::zeros_like(const ModelParams& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamOptions& o) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw InvalidArgument("adam_step: shape mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    m[i]->array() = o.beta1 * m[i]->array() + (1.0 - o.beta1) * g[i]->array();
    v[i]->array() = o.beta2 * v[i]->array() + (1.0 - o.beta2) * g[i]->array().square();
    p[i]->array() -=
        o.learning_rate * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + o.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Tensor files

namespace {

constexpr const char* kTensorMagic = "debias-tensors 1";

void put_f32(std::string& buf, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void write_tensor_file(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  std::ostringstream header;
  header << kTensorMagic << '\n' << "count " << tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidArgument("bad tensor name '" + t.name + "'");
    }
    header << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << ' ' << offset << '\n';
    offset += static_cast<std::size_t>(t.value.size()) * 4;
  }
  header << "end\n";
  std::string data;
  data.reserve(offset);
  for (const auto& t : tensors) {
    for (Index r = 0; r < t.value.rows(); ++r) {
      for (Index c = 0; c < t.value.cols(); ++c) put_f32(data, t.value(r, c));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.str();
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTensorMagic) {
    throw InvalidArgument(path.string() + ": not a tensor file");
  }
  std::size_t count = 0;
  {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key >> count) || key != "count") {
      throw InvalidArgument(path.string() + ": bad tensor count line");
    }
  }
  struct Entry {
    std::string name;
    Index rows, cols;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw InvalidArgument(path.string() + ": truncated manifest");
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0) {
      throw InvalidArgument(path.string() + ": bad manifest line '" + line + "'");
    }
    entries.push_back(e);
  }
  if (!std::getline(in, line) || line != "end") {
    throw InvalidArgument(path.string() + ": missing manifest terminator");
  }
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  std::vector<NamedTensor> out;
  for (const auto& e : entries) {
    const std::size_t n = static_cast<std::size_t>(e.rows * e.cols);
    if (e.offset + n * 4 > data.size()) {
      throw InvalidArgument(path.string() + ": tensor '" + e.name + "' exceeds file");
    }
    MatrixXd m(e.rows, e.cols);
    const unsigned char* p = bytes + e.offset;
    for (Index r = 0; r < e.rows; ++r) {
      for (Index c = 0; c < e.cols; ++c, p += 4) m(r, c) = get_f32(p);
    }
    out.push_back(NamedTensor{e.name, std::move(m)});
  }
  return out;
}

namespace {

std::vector<NamedTensor> to_named(const ModelParams& p, const std::string& prefix) {
  std::vector<NamedTensor> out;
  auto ts = p.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    out.push_back(NamedTensor{prefix + std::string(ModelParams::names()[i]), *ts[i]});
  }
  return out;
}

ModelParams from_named(const std::vector<NamedTensor>& tensors, const std::string& prefix,
                       const std::filesystem::path& path) {
  ModelParams p;
  auto ts = p.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    const std::string want = prefix + std::string(ModelParams::names()[i]);
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const NamedTensor& t) { return t.name == want; });
    if (it == tensors.end()) {
      throw InvalidArgument(path.string() + ": missing tensor '" + want + "'");
    }
    *ts[i] = it->value;
  }
  const auto e = p.embed_dim();
  const auto h = p.hidden_dim();
  const bool ok = p.tgt_embed.cols() == static_cast<Index>(e) &&
                  p.enc_w.rows() == static_cast<Index>(3 * h) &&
                  p.enc_w.cols() == static_cast<Index>(e) &&
                  p.dec_w.cols() == static_cast<Index>(e + h) &&
                  p.dec_u.cols() == static_cast<Index>(h) &&
                  p.init_w.rows() == static_cast<Index>(h) &&
                  p.out_w.cols() == static_cast<Index>(2 * h) &&
                  p.out_w.rows() == p.tgt_embed.rows() && p.out_b.rows() == p.tgt_embed.rows();
  if (!ok) throw InvalidArgument(path.string() + ": inconsistent tensor shapes");
  return p;
}

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  write_tensor_file(to_named(params, ""), path);
}

ModelParams load_params(const std::filesystem::path& path) {
  return from_named(read_tensor_file(path), "", path);
}

void save_adam(const AdamState& state, const std::filesystem::path& path) {
  auto tensors = to_named(state.m, "m.");
  auto v = to_named(state.v, "v.");
  tensors.insert(tensors.end(), v.begin(), v.end());
  MatrixXd step(1, 1);
  step(0, 0) = static_cast<double>(state.step);
  tensors.push_back(NamedTensor{"step", step});
  write_tensor_file(tensors, path);
}

AdamState load_adam(const std::filesystem::path& path) {
  auto tensors = read_tensor_file(path);
  AdamState s;
  s.m = from_named(tensors, "m.", path);
  s.v = from_named(tensors, "v.", path);
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [](const NamedTensor& t) { return t.name == "step"; });
  if (it == tensors.end() || it->value.size() != 1) {
    throw InvalidArgument(path.string() + ": missing step counter");
  }
  s.step = static_cast<std::int64_t>(it->value(0, 0));
  return s;
}

// ---------------------------------------------------------------------------

Hypothesis Translator::translate_ids(const TokenIds& source, std::size_t beam_width) const {
  return beam_search(params, source, beam_width, default_max_len(source.size()));
}

Sentence Translator::translate(const Sentence& source, std::size_t beam_width) const {
  const auto hyp = translate_ids(source_vocab.encode(source), beam_width);
  return target_vocab.decode(hyp.tokens);
}

}  // namespace debias
