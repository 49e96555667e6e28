// Copyright 2026 The narsp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/model.hpp"
#include "narsp/tree.hpp"

namespace narsp {

enum class ScoreMode {
  SumTimesLength,       // (sum_i P(y_i | X, T)) * P(T)
  LengthNormalized,  // (mean_i P(y_i | X, T)) * P(T)
};

inline std::string_view to_string(ScoreMode m) {
  return m == ScoreMode::SumTimesLength ? "sum_times_length" : "length_normalized";
}

struct DecodeConfig {
  std::size_t k = 5;
  ScoreMode score_mode = ScoreMode::SumTimesLength;
  std::size_t ar_beam = 1;

  void validate() const {
    if (k < 1) throw Error(ErrorCode::BadConfig, "decode: k must be >= 1");
    if (ar_beam < 1) throw Error(ErrorCode::BadConfig, "decode: ar_beam must be >= 1");
  }
  bool operator==(const DecodeConfig&) const = default;
};

struct Candidate {
  std::size_t length = 0;
  std::vector<std::int32_t> ids;       // pointer space
  std::vector<std::string> tokens;     // resolved against the source
  std::vector<double> token_probs;     // P(y_i | X, T)
  double length_prob = 1.0;            // P(T); 1 for AR candidates
  std::size_t length_rank = 0;         // position of T in the length beam
  double score = 0.0;

  std::string text() const { return join(tokens); }
};

struct NarDecode {
  std::vector<Candidate> candidates;  // ranked, best first
  std::size_t forward_passes = 0;     // decoder invocations

  const Candidate& best() const { return candidates.front(); }
};

struct ArDecode {
  Candidate best;
  std::size_t forward_passes = 0;
};

inline double candidate_score(const Candidate& c, ScoreMode mode) {
  double s = 0.0;
  for (double p : c.token_probs) s += p;
  if (mode == ScoreMode::LengthNormalized && !c.token_probs.empty()) s /= static_cast<double>(c.token_probs.size());
  return s * c.length_prob;
}

/// Scores every candidate and sorts best first. Equal scores prefer the
/// shorter candidate, then the lexicographically smaller token sequence.
inline std::vector<Candidate> rank_candidates(std::vector<Candidate> cands, ScoreMode mode = ScoreMode::SumTimesLength) {
  for (auto& c : cands) c.score = candidate_score(c, mode);
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.length != b.length) return a.length < b.length;
    return a.tokens < b.tokens;
  });
  return cands;
}

namespace detail {

inline TokenBatch source_batch(const std::vector<std::vector<std::string>>& sources, const Vocabulary& vocab) {
  std::vector<std::vector<std::int32_t>> rows;
  rows.reserve(sources.size());
  for (const auto& s : sources) {
    if (s.empty()) throw Error(ErrorCode::EmptySource, "cannot decode an empty utterance");
    std::vector<std::int32_t> ids;
    ids.reserve(s.size());
    for (const auto& tok : s) ids.push_back(vocab.source_id(tok));
    rows.push_back(std::move(ids));
  }
  return TokenBatch::from_rows(rows);
}

/// Per-position argmax of row `b` of probs [B, T, V] over its first `len`
/// positions, skipping masked classes.
template <typename T>
Candidate argmax_rows(const Tensor<T>& probs, const Mask& valid, std::size_t b, std::size_t len,
                      const std::vector<std::string>& source, const Vocabulary& vocab, bool with_eos) {
  const std::size_t Tn = probs.dim(1), V = probs.dim(2);
  Candidate c;
  c.length = len;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t row = (b * Tn + t) * V;
    const T* p = probs.data().data() + row;
    std::size_t best = V;
    for (std::size_t v = 0; v < V; ++v) {
      if (!valid[row + v]) continue;
      if (best == V || p[v] > p[best]) best = v;
    }
    const auto id = static_cast<std::int32_t>(best);
    c.ids.push_back(id);
    c.tokens.push_back(resolve_pointer(id, source, vocab, with_eos).value_or("</s>"));
    c.token_probs.push_back(static_cast<double>(p[best]));
  }
  return c;
}

template <typename T>
void require_variant(const Model<T>& model, Variant v) {
  if (model.config().variant != v) {
    throw Error(ErrorCode::WrongVariant, "decoder needs a " + std::string(to_string(v)) + " model");
  }
}

}  // namespace detail

/// Length-beam decoding of a batch: one masked decoder pass per length rank,
/// each covering every utterance at its own r-th most likely length.
template <typename T>
std::vector<NarDecode> decode_nar_batch(const Model<T>& model, const std::vector<std::vector<std::string>>& sources,
                                        const DecodeConfig& cfg) {
  cfg.validate();
  detail::require_variant(model, Variant::NAR);
  const TokenBatch src = detail::source_batch(sources, model.vocab());
  const EncoderState<T> enc = model.encode(src);
  const Tensor<T> length_logits = model.length_logits(enc);
  const std::size_t B = sources.size();
  const std::size_t k = std::min(cfg.k, model.config().max_target_len);

  std::vector<std::vector<LengthCandidate>> lengths(B);
  for (std::size_t b = 0; b < B; ++b) lengths[b] = Model<T>::topk_lengths(length_logits, k, b);

  std::vector<NarDecode> out(B);
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<std::vector<std::int32_t>> rows(B);
    for (std::size_t b = 0; b < B; ++b) rows[b].assign(lengths[b][r].length, Vocabulary::kMask);
    const DecoderOutput<T> dec = model.decode(TokenBatch::from_rows(rows), enc);
    const PointerLogits<T> pl = model.pointer_logits(dec, enc);
    const Tensor<T> probs = masked_softmax(pl.logits, pl.valid);
    for (std::size_t b = 0; b < B; ++b) {
      Candidate c = detail::argmax_rows(probs, pl.valid, b, lengths[b][r].length, sources[b], model.vocab(), false);
      c.length_prob = std::exp(lengths[b][r].log_prob);
      c.length_rank = r;
      out[b].candidates.push_back(std::move(c));
      ++out[b].forward_passes;
    }
  }
  for (auto& d : out) d.candidates = rank_candidates(std::move(d.candidates), cfg.score_mode);
  return out;
}

template <typename T>
NarDecode decode_nar(const Model<T>& model, const std::vector<std::string>& source, const DecodeConfig& cfg = {}) {
  return decode_nar_batch(model, {source}, cfg).front();
}

/// Single masked decode at each utterance's given length.
template <typename T>
std::vector<Candidate> decode_with_gold_length_batch(const Model<T>& model,
                                                     const std::vector<std::vector<std::string>>& sources,
                                                     const std::vector<std::size_t>& gold_lengths) {
  detail::require_variant(model, Variant::NAR);
  detail::require(sources.size() == gold_lengths.size(), ErrorCode::ShapeMismatch, "one gold length per source");
  for (std::size_t len : gold_lengths) {
    if (len < 1 || len > model.config().max_target_len) {
      throw Error(ErrorCode::LengthOutOfRange, "gold length " + std::to_string(len));
    }
  }
  const TokenBatch src = detail::source_batch(sources, model.vocab());
  const EncoderState<T> enc = model.encode(src);
  const Tensor<T> length_logits = model.length_logits(enc);
  std::vector<std::vector<std::int32_t>> rows;
  for (std::size_t len : gold_lengths) rows.emplace_back(len, Vocabulary::kMask);
  const DecoderOutput<T> dec = model.decode(TokenBatch::from_rows(rows), enc);
  const PointerLogits<T> pl = model.pointer_logits(dec, enc);
  const Tensor<T> probs = masked_softmax(pl.logits, pl.valid);
  std::vector<Candidate> out;
  const std::size_t C = length_logits.dim(1);
  for (std::size_t b = 0; b < sources.size(); ++b) {
    Candidate c = detail::argmax_rows(probs, pl.valid, b, gold_lengths[b], sources[b], model.vocab(), false);
    const T* x = length_logits.data().data() + b * C;
    double mx = static_cast<double>(*std::max_element(x, x + C)), z = 0.0;
    for (std::size_t i = 0; i < C; ++i) z += std::exp(static_cast<double>(x[i]) - mx);
    c.length_prob = std::exp(static_cast<double>(x[gold_lengths[b] - 1]) - mx) / z;
    c.score = candidate_score(c, ScoreMode::SumTimesLength);
    out.push_back(std::move(c));
  }
  return out;
}

template <typename T>
Candidate decode_with_gold_length(const Model<T>& model, const std::vector<std::string>& source,
                                  std::size_t gold_length) {
  return decode_with_gold_length_batch(model, {source}, {gold_length}).front();
}

namespace detail {

template <typename T>
EncoderState<T> tile(const EncoderState<T>& enc, std::size_t n) {
  const std::size_t L = enc.states.dim(1), d = enc.states.dim(2);
  std::vector<T> states;
  states.reserve(n * L * d);
  std::vector<std::vector<std::int32_t>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    states.insert(states.end(), enc.states.data().begin(), enc.states.data().end());
    rows.emplace_back(enc.source.ids.begin(), enc.source.ids.end());
  }
  return {Tensor<T>(Shape{n, L, d}, std::move(states)), TokenBatch::from_rows(rows)};
}

}  // namespace detail

/// Left-to-right beam search over the pointer space. Stops when the best
/// finished hypothesis outscores every live one, or at max_target_len.
/// Each step is one decoder pass over the whole prefix of every live beam.
template <typename T>
ArDecode decode_ar(const Model<T>& model, const std::vector<std::string>& source, const DecodeConfig& cfg = {}) {
  cfg.validate();
  detail::require_variant(model, Variant::AR);
  const TokenBatch src = detail::source_batch({source}, model.vocab());
  const EncoderState<T> enc = model.encode(src);
  const std::int32_t eos = model.eos_pointer_id();
  const std::size_t max_len = model.config().max_target_len;

  struct Hyp {
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> inputs{Vocabulary::kBos};
    std::vector<double> probs;
    double logp = 0.0;
  };
  std::vector<Hyp> alive(1);
  std::vector<Hyp> finished;
  ArDecode out;
  EncoderState<T> tiled = enc;

  auto best_finished = [&finished]() {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& h : finished) b = std::max(b, h.logp);
    return b;
  };

  for (std::size_t step = 0; step <= max_len && !alive.empty(); ++step) {
    if (tiled.states.dim(0) != alive.size()) tiled = detail::tile(enc, alive.size());
    std::vector<std::vector<std::int32_t>> rows;
    for (const auto& h : alive) rows.push_back(h.inputs);
    const DecoderOutput<T> dec = model.decode(TokenBatch::from_rows(rows), tiled);
    const PointerLogits<T> pl = model.pointer_logits(dec, tiled);
    const Tensor<T> probs = masked_softmax(pl.logits, pl.valid);
    ++out.forward_passes;

    const std::size_t Tn = probs.dim(1), V = probs.dim(2);
    struct Ext {
      double logp;
      std::size_t hyp;
      std::int32_t id;
      double p;
    };
    std::vector<Ext> ext;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const std::size_t row = (h * Tn + step) * V;
      for (std::size_t v = 0; v < V; ++v) {
        if (!pl.valid[row + v]) continue;
        // A hypothesis at max length may only end.
        if (step == max_len && static_cast<std::int32_t>(v) != eos) continue;
        const double p = static_cast<double>(probs.data()[row + v]);
        ext.push_back({alive[h].logp + std::log(std::max(p, 1e-300)), h, static_cast<std::int32_t>(v), p});
      }
    }
    const std::size_t keep = std::min(cfg.ar_beam, ext.size());
    std::partial_sort(ext.begin(), ext.begin() + static_cast<std::ptrdiff_t>(keep), ext.end(),
                      [](const Ext& a, const Ext& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.id < b.id;
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hyp h = alive[ext[i].hyp];
      h.logp = ext[i].logp;
      h.probs.push_back(ext[i].p);
      if (ext[i].id == eos) {
        finished.push_back(std::move(h));
        continue;
      }
      h.ids.push_back(ext[i].id);
      h.inputs.push_back(model.input_id_for(ext[i].id, src.ids));
      next.push_back(std::move(h));
    }
    alive = std::move(next);
    double best_alive = -std::numeric_limits<double>::infinity();
    for (const auto& h : alive) best_alive = std::max(best_alive, h.logp);
    if (!finished.empty() && best_finished() >= best_alive) break;
  }

  const Hyp* best = nullptr;
  for (const auto& h : finished) {
    if (!best || h.logp > best->logp) best = &h;
  }
  Candidate& c = out.best;
  c.ids = best->ids;
  c.length = c.ids.size();
  for (auto id : c.ids) c.tokens.push_back(resolve_pointer(id, source, model.vocab(), true).value_or("</s>"));
  c.token_probs = best->probs;
  c.length_prob = 1.0;
  c.score = best->logp;
  return out;
}

/// Utterance-level prediction for either variant.
struct Prediction {
  std::vector<std::string> source;
  Candidate best;
  std::vector<Candidate> candidates;
  std::size_t forward_passes = 0;
};

template <typename T>
std::vector<Prediction> predict_batch(const Model<T>& model, const std::vector<std::vector<std::string>>& sources,
                                      const DecodeConfig& cfg) {
  std::vector<Prediction> out;
  if (model.autoregressive()) {
    for (const auto& s : sources) {
      ArDecode d = decode_ar(model, s, cfg);
      out.push_back({s, d.best, {d.best}, d.forward_passes});
    }
    return out;
  }
  auto decs = decode_nar_batch(model, sources, cfg);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out.push_back({sources[i], decs[i].best(), std::move(decs[i].candidates), decs[i].forward_passes});
  }
  return out;
}

}  // namespace narsp
