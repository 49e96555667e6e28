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
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "narsp/checkpoint.hpp"
#include "narsp/config.hpp"
#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/inference.hpp"
#include "narsp/model.hpp"
#include "narsp/ops.hpp"
#include "narsp/optim.hpp"
#include "narsp/rng.hpp"
#include "narsp/tensor.hpp"

namespace narsp {

enum class MaskStrategy { MaskAll, RandomSubset };

inline std::string_view to_string(MaskStrategy m) {
  return m == MaskStrategy::MaskAll ? "mask_all" : "random_subset";
}

struct TrainConfig {
  double lr = 4e-4;
  std::size_t batch_size = 8;
  double label_beta = 0.1;
  double length_beta = 0.5;
  double length_loss_weight = 0.25;
  std::size_t plateau_patience = 10;
  std::size_t early_stop_patience = 20;
  double lr_decay_factor = 10.0;
  MaskStrategy mask_strategy = MaskStrategy::MaskAll;
  std::uint64_t seed = 1;
  std::size_t max_epochs = 200;
  std::size_t min_count = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Stop after the epoch during which this much process CPU time was
  /// used; 0 disables the limit.
  double max_cpu_seconds = 0.0;
  /// Validation EM of at least this value ends training early; > 1 disables.
  double target_val_em = 2.0;

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::BadConfig, "train: " + why); };
    if (!(lr >= 7e-5 && lr <= 4e-4)) fail("lr must lie in [7e-5, 4e-4]");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(label_beta >= 0 && label_beta < 1) || !(length_beta >= 0 && length_beta < 1)) fail("betas in [0, 1)");
    if (!(length_loss_weight >= 0)) fail("length_loss_weight must be >= 0");
    if (plateau_patience < 1 || early_stop_patience < 1) fail("patience values must be positive");
    if (!(lr_decay_factor > 0)) fail("lr_decay_factor must be positive");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (min_count < 1) fail("min_count must be >= 1");
  }

  AdamOptions adam(double current_lr) const { return {current_lr, adam_beta1, adam_beta2, adam_eps}; }
  bool operator==(const TrainConfig&) const = default;
};

inline json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"label_beta", c.label_beta},
              {"length_beta", c.length_beta},
              {"length_loss_weight", c.length_loss_weight},
              {"plateau_patience", c.plateau_patience},
              {"early_stop_patience", c.early_stop_patience},
              {"lr_decay_factor", c.lr_decay_factor},
              {"mask_strategy", to_string(c.mask_strategy)},
              {"seed", c.seed},
              {"max_epochs", c.max_epochs},
              {"min_count", c.min_count},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"max_cpu_seconds", c.max_cpu_seconds},
              {"target_val_em", c.target_val_em}};
}

inline TrainConfig train_config_from_json(const json& j) {
  const std::string s = "train";
  detail::check_keys(j, {"lr", "batch_size", "label_beta", "length_beta", "length_loss_weight", "plateau_patience",
                         "early_stop_patience", "lr_decay_factor", "mask_strategy", "seed", "max_epochs",
                         "min_count", "adam_beta1", "adam_beta2", "adam_eps", "max_cpu_seconds", "target_val_em"},
                     s);
  TrainConfig c;
  detail::read_opt(j, "lr", c.lr, s);
  detail::read_opt(j, "batch_size", c.batch_size, s);
  detail::read_opt(j, "label_beta", c.label_beta, s);
  detail::read_opt(j, "length_beta", c.length_beta, s);
  detail::read_opt(j, "length_loss_weight", c.length_loss_weight, s);
  detail::read_opt(j, "plateau_patience", c.plateau_patience, s);
  detail::read_opt(j, "early_stop_patience", c.early_stop_patience, s);
  detail::read_opt(j, "lr_decay_factor", c.lr_decay_factor, s);
  std::string mask(to_string(c.mask_strategy));
  detail::read_opt(j, "mask_strategy", mask, s);
  if (mask == "mask_all") {
    c.mask_strategy = MaskStrategy::MaskAll;
  } else if (mask == "random_subset") {
    c.mask_strategy = MaskStrategy::RandomSubset;
  } else {
    throw Error(ErrorCode::BadConfig, "train.mask_strategy must be mask_all or random_subset");
  }
  detail::read_opt(j, "seed", c.seed, s);
  detail::read_opt(j, "max_epochs", c.max_epochs, s);
  detail::read_opt(j, "min_count", c.min_count, s);
  detail::read_opt(j, "adam_beta1", c.adam_beta1, s);
  detail::read_opt(j, "adam_beta2", c.adam_beta2, s);
  detail::read_opt(j, "adam_eps", c.adam_eps, s);
  detail::read_opt(j, "max_cpu_seconds", c.max_cpu_seconds, s);
  detail::read_opt(j, "target_val_em", c.target_val_em, s);
  c.validate();
  return c;
}

/// One training mini-batch. `targets` is [B, T_dec] row-major in pointer
/// space with -1 at positions that do not contribute to the label loss.
struct Batch {
  TokenBatch source;
  TokenBatch decoder_inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::int32_t> length_targets;  // class index T - 1 per example
  std::vector<std::size_t> lengths;
};

/// NAR batches: decoder inputs are MASK (every position under mask_all, a
/// uniformly sized random subset otherwise, with the rest showing the gold
/// token). AR batches: BOS-shifted gold inputs and EOS-terminated targets.
inline Batch build_masked_batch(const std::vector<EncodedExample>& examples, const Vocabulary& vocab, Variant variant,
                                MaskStrategy strategy, Rng& rng) {
  if (examples.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  const bool ar = variant == Variant::AR;
  Batch batch;
  std::vector<std::vector<std::int32_t>> src_rows, dec_rows, tgt_rows;
  for (const auto& ex : examples) {
    src_rows.push_back(ex.source_ids);
    std::vector<std::int32_t> inputs, targets;
    if (ar) {
      inputs.push_back(Vocabulary::kBos);
      for (auto id : ex.target) inputs.push_back(decoder_input_id(id, ex.source_ids, vocab, true));
      targets = ex.target;
      targets.push_back(static_cast<std::int32_t>(generation_size(vocab, true) - 1));
    } else if (strategy == MaskStrategy::MaskAll) {
      inputs.assign(ex.length, Vocabulary::kMask);
      targets = ex.target;
    } else {
      std::vector<std::size_t> order(ex.length);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span<std::size_t>(order));
      const std::size_t count = 1 + static_cast<std::size_t>(rng.below(ex.length));
      std::vector<bool> masked(ex.length, false);
      for (std::size_t i = 0; i < count; ++i) masked[order[i]] = true;
      for (std::size_t t = 0; t < ex.length; ++t) {
        inputs.push_back(masked[t] ? Vocabulary::kMask : decoder_input_id(ex.target[t], ex.source_ids, vocab, false));
        targets.push_back(masked[t] ? ex.target[t] : -1);
      }
    }
    dec_rows.push_back(std::move(inputs));
    tgt_rows.push_back(std::move(targets));
    batch.length_targets.push_back(static_cast<std::int32_t>(ex.length) - 1);
    batch.lengths.push_back(ex.length);
  }
  batch.source = TokenBatch::from_rows(src_rows);
  batch.decoder_inputs = TokenBatch::from_rows(dec_rows);
  const std::size_t Tn = batch.decoder_inputs.length;
  batch.targets.assign(examples.size() * Tn, -1);
  for (std::size_t b = 0; b < tgt_rows.size(); ++b) {
    std::copy(tgt_rows[b].begin(), tgt_rows[b].end(), batch.targets.begin() + static_cast<std::ptrdiff_t>(b * Tn));
  }
  return batch;
}

inline Batch build_masked_batch(const std::vector<Example>& examples, const Vocabulary& vocab, Variant variant,
                                MaskStrategy strategy, Rng& rng, std::size_t max_target_len) {
  std::vector<EncodedExample> enc;
  for (const auto& ex : examples) enc.push_back(encode_example(ex, vocab, max_target_len, variant == Variant::AR));
  return build_masked_batch(enc, vocab, variant, strategy, rng);
}

template <typename T>
struct LossParts {
  Tensor<T> total;
  double label = 0.0;
  double length = 0.0;
};

/// total = CE_label(label_beta) + weight * CE_length(length_beta). Without
/// length logits (AR) the length term is absent.
template <typename T>
LossParts<T> joint_loss(const PointerLogits<T>& pointer, const std::optional<Tensor<T>>& length_logits,
                        const std::vector<std::int32_t>& targets, const std::vector<std::int32_t>& length_targets,
                        const TrainConfig& cfg) {
  LossParts<T> out;
  Tensor<T> label = label_smoothed_ce(pointer.logits, targets, cfg.label_beta, pointer.valid);
  out.label = static_cast<double>(label.item());
  if (!length_logits) {
    out.total = label;
    return out;
  }
  detail::require(length_logits->dim(0) == length_targets.size(), ErrorCode::ShapeMismatch,
                  "one length target per example");
  Tensor<T> length = label_smoothed_ce(*length_logits, length_targets, cfg.length_beta);
  out.length = static_cast<double>(length.item());
  out.total = add(label, scale(length, static_cast<T>(cfg.length_loss_weight)));
  return out;
}

template <typename T>
LossParts<T> batch_loss(const Model<T>& model, const Batch& batch, const TrainConfig& cfg) {
  const EncoderState<T> enc = model.encode(batch.source);
  const DecoderOutput<T> dec = model.decode(batch.decoder_inputs, enc);
  const PointerLogits<T> pl = model.pointer_logits(dec, enc);
  std::optional<Tensor<T>> length;
  if (!model.autoregressive()) length = model.length_logits(enc);
  return joint_loss(pl, length, batch.targets, batch.length_targets, cfg);
}

struct PlateauState {
  double lr = 0.0;
  double best_em = -std::numeric_limits<double>::infinity();
  std::size_t stagnant = 0;
};

struct PlateauDecision {
  double lr = 0.0;
  bool stop = false;
  bool improved = false;
};

/// Called once per epoch. Only a strictly higher EM resets the stagnation
/// count; the learning rate drops once when the count reaches the plateau
/// patience and training stops when it reaches the early-stop patience.
inline PlateauDecision lr_plateau_step(PlateauState& state, double val_em, const TrainConfig& cfg) {
  PlateauDecision d;
  if (val_em > state.best_em) {
    state.best_em = val_em;
    state.stagnant = 0;
    d.improved = true;
  } else {
    ++state.stagnant;
    if (state.stagnant == cfg.plateau_patience) state.lr /= cfg.lr_decay_factor;
  }
  d.lr = state.lr;
  d.stop = state.stagnant >= cfg.early_stop_patience;
  return d;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double label_loss = 0.0;
  double length_loss = 0.0;
  double val_em = 0.0;
};

inline json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},           {"lr", r.lr},
              {"train_loss", r.train_loss}, {"label_loss", r.label_loss},
              {"length_loss", r.length_loss}, {"val_em", r.val_em}};
}

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += to_json(r).dump() + "\n";
  return out;
}

struct Snapshot {
  std::string bytes;  // checkpoint container
  std::size_t epoch = 0;
  double val_em = -1.0;
};

struct FitResult {
  Snapshot best;
  std::vector<EpochRecord> history;
  double cpu_seconds = 0.0;
};

inline double process_cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

/// Exact-match rate with greedy (k=1) NAR decoding or greedy AR decoding.
template <typename T>
double greedy_em(const Model<T>& model, const std::vector<Example>& data, std::size_t chunk = 32) {
  if (data.empty()) return 0.0;
  DecodeConfig dc;
  dc.k = 1;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    std::vector<std::vector<std::string>> sources;
    for (std::size_t j = i; j < std::min(i + chunk, data.size()); ++j) sources.push_back(data[j].source);
    auto preds = predict_batch(model, sources, dc);
    for (std::size_t j = 0; j < preds.size(); ++j) hits += preds[j].best.tokens == data[i + j].target;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Trains in place and returns the best snapshot by validation EM. Epoch e
/// shuffles with seed + e; examples longer than max_target_len are dropped.
template <typename T>
FitResult fit(Model<T>& model, const std::vector<Example>& train, const std::vector<Example>& val,
              const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw Error(ErrorCode::EmptyDataset, "fit needs non-empty train and val sets");
  const bool ar = model.autoregressive();
  const Variant variant = model.config().variant;
  std::vector<EncodedExample> encoded;
  std::size_t dropped = 0;
  for (const auto& ex : train) {
    if (ex.target.size() > model.config().max_target_len) {
      ++dropped;
      continue;
    }
    encoded.push_back(encode_example(ex, model.vocab(), model.config().max_target_len, ar));
  }
  if (dropped) std::cerr << "warning: dropped " << dropped << " training examples longer than max_target_len\n";
  if (encoded.empty()) throw Error(ErrorCode::EmptyDataset, "no trainable examples");

  FitResult result;
  PlateauState plateau{cfg.lr};
  const double cpu_start = process_cpu_seconds();
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(cfg.seed + epoch);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = plateau.lr;
    double total = 0.0, label = 0.0, length = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<EncodedExample> chunk;
      for (std::size_t j = i; j < std::min(i + cfg.batch_size, order.size()); ++j) chunk.push_back(encoded[order[j]]);
      const Batch batch = build_masked_batch(chunk, model.vocab(), variant, cfg.mask_strategy, rng);
      model.parameters().zero_grad();
      Tape<T> tape;
      {
        TapeScope<T> scope(tape);
        LossParts<T> loss = batch_loss(model, batch, cfg);
        tape.backward(loss.total);
        total += static_cast<double>(loss.total.item());
        label += loss.label;
        length += loss.length;
      }
      for (auto& p : model.parameters().all()) adam_step(p, cfg.adam(lr));
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = total / static_cast<double>(steps);
    rec.label_loss = label / static_cast<double>(steps);
    rec.length_loss = length / static_cast<double>(steps);
    rec.val_em = greedy_em(model, val);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const PlateauDecision d = lr_plateau_step(plateau, rec.val_em, cfg);
    if (d.improved) result.best = {checkpoint_bytes(model, {epoch, rec.val_em}), epoch, rec.val_em};
    if (d.stop || rec.val_em >= cfg.target_val_em) break;
    if (cfg.max_cpu_seconds > 0 && process_cpu_seconds() - cpu_start >= cfg.max_cpu_seconds) break;
  }
  result.cpu_seconds = process_cpu_seconds() - cpu_start;
  return result;
}

/// Target-length buckets used for error analysis: [0,10), [10,20), [20,30),
/// [30,40), [40,inf).
inline constexpr std::size_t kLengthBucketEdges[] = {10, 20, 30, 40};

inline std::size_t length_bucket(std::size_t length) {
  std::size_t b = 0;
  for (auto e : kLengthBucketEdges) b += length >= e;
  return b;
}

inline std::string length_bucket_name(std::size_t bucket) {
  static const char* names[] = {"<10", "10-20", "20-30", "30-40", ">=40"};
  return names[bucket];
}

struct BucketEm {
  std::string range;
  std::size_t n = 0;
  double em = 0.0;
};

/// `em_at[j]` and `length_acc_at[j]` refer to the top j+1 predicted lengths:
/// the gold tree is among their candidates, and the gold length is among
/// them. AR models report em and the per-bucket breakdown only.
struct EvalMetrics {
  std::size_t n = 0;
  std::size_t k = 1;
  double em = 0.0;
  std::vector<double> em_at;
  std::vector<double> length_acc_at;
  std::vector<BucketEm> em_by_length_bucket;
  std::optional<double> em_with_gold_length;

  std::optional<double> em_at_k() const {
    return em_at.empty() ? std::nullopt : std::optional<double>(em_at.back());
  }
  std::optional<double> length_top_k_acc() const {
    return length_acc_at.empty() ? std::nullopt : std::optional<double>(length_acc_at.back());
  }
};

inline json to_json(const EvalMetrics& m) {
  json buckets = json::array();
  for (const auto& b : m.em_by_length_bucket) buckets.push_back({{"range", b.range}, {"n", b.n}, {"em", b.em}});
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"n", m.n},
              {"k", m.k},
              {"em", m.em},
              {"em_at_k", opt(m.em_at_k())},
              {"length_top_k_acc", opt(m.length_top_k_acc())},
              {"em_by_length_bucket", buckets},
              {"em_with_gold_length", opt(m.em_with_gold_length)},
              {"em_at", m.em_at},
              {"length_acc_at", m.length_acc_at}};
}

template <typename T>
EvalMetrics evaluate(const Model<T>& model, const std::vector<Example>& data, std::size_t k,
                     std::size_t chunk = 32) {
  if (k < 1) throw Error(ErrorCode::BadConfig, "evaluate: k must be >= 1");
  EvalMetrics m;
  m.n = data.size();
  m.k = k;
  if (data.empty()) return m;
  const bool ar = model.autoregressive();
  DecodeConfig dc;
  dc.k = k;
  std::size_t hits = 0, gold_hits = 0;
  std::vector<std::size_t> em_at(ar ? 0 : k, 0), len_at(ar ? 0 : k, 0);
  std::vector<std::size_t> bucket_n(5, 0), bucket_hits(5, 0);
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    const std::size_t end = std::min(i + chunk, data.size());
    std::vector<std::vector<std::string>> sources;
    std::vector<std::size_t> gold_lengths;
    for (std::size_t j = i; j < end; ++j) {
      sources.push_back(data[j].source);
      gold_lengths.push_back(std::min(data[j].target.size(), model.config().max_target_len));
    }
    const auto preds = predict_batch(model, sources, dc);
    std::vector<Candidate> gold;
    if (!ar) gold = decode_with_gold_length_batch(model, sources, gold_lengths);
    for (std::size_t j = i; j < end; ++j) {
      const auto& target = data[j].target;
      const auto& pred = preds[j - i];
      const bool hit = pred.best.tokens == target;
      hits += hit;
      const std::size_t b = length_bucket(target.size());
      ++bucket_n[b];
      bucket_hits[b] += hit;
      if (ar) continue;
      gold_hits += gold[j - i].tokens == target;
      // Candidates come back ranked by score; recover the length order.
      std::vector<const Candidate*> by_length;
      for (const auto& c : pred.candidates) by_length.push_back(&c);
      std::sort(by_length.begin(), by_length.end(),
                [](const Candidate* a, const Candidate* b) { return a->length_rank < b->length_rank; });
      bool em_seen = false, len_seen = false;
      for (std::size_t r = 0; r < k; ++r) {
        if (r < by_length.size()) {
          em_seen = em_seen || by_length[r]->tokens == target;
          len_seen = len_seen || by_length[r]->length == target.size();
        }
        em_at[r] += em_seen;
        len_at[r] += len_seen;
      }
    }
  }
  const double n = static_cast<double>(data.size());
  m.em = static_cast<double>(hits) / n;
  for (auto v : em_at) m.em_at.push_back(static_cast<double>(v) / n);
  for (auto v : len_at) m.length_acc_at.push_back(static_cast<double>(v) / n);
  if (!ar) m.em_with_gold_length = static_cast<double>(gold_hits) / n;
  for (std::size_t b = 0; b < bucket_n.size(); ++b) {
    if (bucket_n[b] == 0) continue;
    m.em_by_length_bucket.push_back(
        {length_bucket_name(b), bucket_n[b], static_cast<double>(bucket_hits[b]) / static_cast<double>(bucket_n[b])});
  }
  return m;
}

/// Top-level configuration file: {"model", "train", "decode", "data"}.
/// "data" names the train/val (and optionally test) TSV files; relative
/// paths resolve against the config file's directory.
struct DataConfig {
  std::string train;
  std::string val;
  std::string test;
};

struct RunConfig {
  ModelConfig model = ModelConfig::reduced(64);
  TrainConfig train;
  DecodeConfig decode;
  DataConfig data;
};

inline RunConfig run_config_from_json(const json& j) {
  detail::check_keys(j, {"model", "train", "decode", "data"}, "config");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("decode")) rc.decode = decode_config_from_json(j.at("decode"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, {"train", "val", "test"}, "data");
    detail::read_opt(d, "train", rc.data.train, "data");
    detail::read_opt(d, "val", rc.data.val, "data");
    detail::read_opt(d, "test", rc.data.test, "data");
  }
  return rc;
}

inline json to_json(const RunConfig& rc) {
  return json{{"model", to_json(rc.model)},
              {"train", to_json(rc.train)},
              {"decode", to_json(rc.decode)},
              {"data", {{"train", rc.data.train}, {"val", rc.data.val}, {"test", rc.data.test}}}};
}

}  // namespace narsp
