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
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/ops.hpp"
#include "narsp/optim.hpp"
#include "narsp/rng.hpp"
#include "narsp/tensor.hpp"

namespace narsp {

enum class Variant { NAR, AR };

inline std::string_view to_string(Variant v) { return v == Variant::NAR ? "nar" : "ar"; }

/// Architecture hyperparameters. `base()` is the published base model;
/// the autoregressive variant drops every self-attention block and the
/// length module, and its decoder convolutions are causal.
struct ModelConfig {
  Variant variant = Variant::NAR;
  std::size_t model_dim = 160;
  std::size_t pos_dim = 32;  // sinusoidal part; word embeddings get the rest
  std::vector<std::size_t> encoder_kernels{3, 7, 15, 21, 27};
  std::size_t encoder_self_heads = 1;
  std::vector<std::size_t> decoder_kernels{7, 27};
  std::size_t decoder_self_heads = 1;
  std::size_t decoder_cross_heads = 2;
  std::size_t conv_heads = 2;
  std::size_t ffn_dim = 640;
  std::size_t length_conv_dim = 512;
  std::vector<std::size_t> length_kernels{3, 9};
  std::size_t length_hidden = 256;  // classifier hidden layer
  std::size_t pointer_heads = 8;
  std::size_t max_target_len = 100;

  static ModelConfig base(Variant v = Variant::NAR) {
    ModelConfig c;
    c.variant = v;
    return c;
  }

  /// Same layer and kernel structure at a smaller width.
  static ModelConfig reduced(std::size_t dim = 64, Variant v = Variant::NAR) {
    ModelConfig c;
    c.variant = v;
    c.model_dim = dim;
    c.pos_dim = std::max<std::size_t>(2, (dim / 5) & ~std::size_t{1});
    c.ffn_dim = 4 * dim;
    c.length_conv_dim = 2 * dim;
    c.length_hidden = 2 * dim;
    return c;
  }

  bool autoregressive() const { return variant == Variant::AR; }
  std::size_t word_dim() const { return model_dim - pos_dim; }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::BadConfig, "model: " + why); };
    if (model_dim == 0 || pos_dim == 0 || pos_dim >= model_dim) fail("need 0 < pos_dim < model_dim");
    if (pos_dim % 2 != 0) fail("pos_dim must be even");
    if (encoder_kernels.empty() || decoder_kernels.empty()) fail("need at least one encoder and decoder layer");
    if (length_kernels.empty() && !autoregressive()) fail("length module needs at least one layer");
    auto heads_ok = [this](std::size_t h) { return h >= 1 && model_dim % h == 0; };
    if (!heads_ok(encoder_self_heads) || !heads_ok(decoder_self_heads) || !heads_ok(decoder_cross_heads) ||
        !heads_ok(pointer_heads) || !heads_ok(conv_heads)) {
      fail("model_dim must be divisible by every head count");
    }
    if (!autoregressive() && length_conv_dim % conv_heads != 0) fail("length_conv_dim must be divisible by conv_heads");
    for (auto k : encoder_kernels) if (k == 0) fail("zero kernel size");
    for (auto k : decoder_kernels) if (k == 0) fail("zero kernel size");
    for (auto k : length_kernels) if (k == 0) fail("zero kernel size");
    if (max_target_len == 0) fail("max_target_len must be positive");
    if (ffn_dim == 0 || length_hidden == 0) fail("zero hidden size");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Right-padded id matrix with its validity mask.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;
  Mask valid;
  std::vector<std::size_t> lengths;

  static TokenBatch from_rows(const std::vector<std::vector<std::int32_t>>& rows) {
    TokenBatch tb;
    tb.batch = rows.size();
    for (const auto& r : rows) tb.length = std::max(tb.length, r.size());
    tb.ids.assign(tb.batch * tb.length, Vocabulary::kPad);
    std::vector<std::uint8_t> keep(tb.batch * tb.length, 0);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      std::copy(rows[b].begin(), rows[b].end(), tb.ids.begin() + static_cast<std::ptrdiff_t>(b * tb.length));
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(b * tb.length), rows[b].size(), 1);
      tb.lengths.push_back(rows[b].size());
    }
    tb.valid = Mask(Shape{tb.batch, tb.length}, std::move(keep));
    return tb;
  }

  Shape shape() const { return {batch, length}; }
};

/// Sinusoidal encoding of one position: sin/cos pairs at geometric frequencies.
template <typename T>
void sinusoid(std::size_t position, std::size_t dim, T* out) {
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    const double angle = static_cast<double>(position) * freq;
    out[2 * i] = static_cast<T>(std::sin(angle));
    out[2 * i + 1] = static_cast<T>(std::cos(angle));
  }
}

template <typename T>
struct EncoderState {
  Tensor<T> states;  // [B, L, d]; padded rows are zero
  TokenBatch source;
};

template <typename T>
struct DecoderOutput {
  Tensor<T> states;  // [B, T, d]
  TokenBatch inputs;
};

/// Joint generation + copy logits, [B, T, G + L]. Copy columns of padded
/// source positions are -inf and masked out.
template <typename T>
struct PointerLogits {
  Tensor<T> logits;
  Mask valid;
  std::size_t generation_size = 0;
};

struct LengthCandidate {
  std::size_t length;
  double log_prob;
};

namespace layers {

template <typename T>
struct Linear {
  Tensor<T> weight, bias;

  static Linear make(ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return {ps.add_xavier(name + ".weight", in, out, rng), ps.add_constant(name + ".bias", Shape{out}, T(0))};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain, bias;

  static LayerNorm make(ParameterStore<T>& ps, const std::string& name, std::size_t d) {
    return {ps.add_constant(name + ".gain", Shape{d}, T(1)), ps.add_constant(name + ".bias", Shape{d}, T(0))};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParameterStore<T>& ps, const std::string& name, std::size_t d,
                                 std::size_t heads, Rng& rng) {
    auto q = Linear<T>::make(ps, name + ".q", d, d, rng);
    auto k = Linear<T>::make(ps, name + ".k", d, d, rng);
    auto v = Linear<T>::make(ps, name + ".v", d, d, rng);
    auto o = Linear<T>::make(ps, name + ".o", d, d, rng);
    return {q, k, v, o, heads};
  }
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& memory, const Mask& key_mask) const {
    return o(attention(q(query), k(memory), v(memory), heads, key_mask));
  }
};

/// Linear to 2d -> GLU -> lightweight convolution -> linear to d.
template <typename T>
struct LightConvBlock {
  Linear<T> in;
  Tensor<T> kernel;  // [heads, k] logits
  Linear<T> out;
  ConvPadding padding = ConvPadding::Symmetric;

  static LightConvBlock make(ParameterStore<T>& ps, const std::string& name, std::size_t d_in, std::size_t d,
                             std::size_t heads, std::size_t k, ConvPadding padding, Rng& rng) {
    auto in = Linear<T>::make(ps, name + ".in", d_in, 2 * d, rng);
    auto kernel = ps.add_uniform(name + ".kernel", Shape{heads, k}, 0.1, rng);
    auto out = Linear<T>::make(ps, name + ".out", d, d, rng);
    return {in, kernel, out, padding};
  }
  Tensor<T> operator()(const Tensor<T>& x, const Mask& mask) const {
    return out(conv1d_depthwise_shared(glu(in(x)), kernel, mask, padding));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  static FeedForward make(ParameterStore<T>& ps, const std::string& name, std::size_t d, std::size_t hidden,
                          Rng& rng) {
    auto up = Linear<T>::make(ps, name + ".up", d, hidden, rng);
    auto down = Linear<T>::make(ps, name + ".down", hidden, d, rng);
    return {up, down};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return down(relu(up(x))); }
};

template <typename T>
struct AttentionSublayer {
  LayerNorm<T> norm;
  MultiHeadAttention<T> attn;
};

template <typename T>
struct EncoderLayer {
  std::optional<AttentionSublayer<T>> self_attn;
  LayerNorm<T> conv_norm;
  LightConvBlock<T> conv;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;
};

template <typename T>
struct DecoderLayer {
  std::optional<AttentionSublayer<T>> self_attn;
  LayerNorm<T> conv_norm;
  LightConvBlock<T> conv;
  AttentionSublayer<T> cross_attn;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;
};

template <typename T>
struct LengthLayer {
  Linear<T> in;
  Tensor<T> kernel;
};

}  // namespace layers

/// Convolutional encoder-decoder with a pointer-generator output and, for
/// the NAR variant, a convolutional length classifier. Every sub-block is
/// pre-norm with a residual connection; each stack ends with a norm.
template <typename T>
class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
      : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    build(seed);
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  bool autoregressive() const { return config_.autoregressive(); }
  std::size_t generation_size() const { return narsp::generation_size(vocab_, autoregressive()); }
  /// Pointer-space id of EOS (AR only).
  std::int32_t eos_pointer_id() const { return static_cast<std::int32_t>(vocab_.ontology_size()); }

  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  std::size_t count_parameters() const { return params_.scalar_count(); }

  /// Word embedding of `ids` concatenated with the sinusoidal encoding of
  /// `positions`; both are [B, N].
  Tensor<T> embed_tokens(const std::vector<std::int32_t>& ids, const std::vector<std::size_t>& positions,
                         const Shape& shape) const {
    detail::require(ids.size() == positions.size() && shape_numel(shape) == ids.size(), ErrorCode::ShapeMismatch,
                    "embed_tokens ids/positions mismatch");
    Tensor<T> words = embedding(ids, shape, word_embedding_);
    Shape pshape = shape;
    pshape.push_back(config_.pos_dim);
    Tensor<T> pos(pshape);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      sinusoid(positions[i], config_.pos_dim, pos.mutable_data().data() + i * config_.pos_dim);
    }
    return concat_last(words, pos);
  }

  Tensor<T> embed(const TokenBatch& batch) const {
    std::vector<std::size_t> positions(batch.ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % std::max<std::size_t>(batch.length, 1);
    return mask_rows(embed_tokens(batch.ids, positions, batch.shape()), batch.valid);
  }

  EncoderState<T> encode(const TokenBatch& source) const {
    if (source.batch == 0 || source.length == 0) throw Error(ErrorCode::EmptyInput, "encode needs L >= 1");
    for (std::size_t len : source.lengths) {
      if (len == 0) throw Error(ErrorCode::EmptyInput, "empty source row");
    }
    Tensor<T> x = embed(source);
    for (const auto& layer : encoder_) {
      if (layer.self_attn) {
        Tensor<T> h = layer.self_attn->norm(x);
        x = add(x, layer.self_attn->attn(h, h, source.valid));
      }
      x = add(x, layer.conv(layer.conv_norm(x), source.valid));
      x = add(x, layer.ffn(layer.ffn_norm(x)));
    }
    x = mask_rows(encoder_norm_(x), source.valid);
    return {x, source};
  }

  /// Length-class logits [B, max_target_len]; class i is length i + 1.
  Tensor<T> length_logits(const EncoderState<T>& enc) const {
    if (autoregressive()) throw Error(ErrorCode::WrongVariant, "the AR variant has no length module");
    Tensor<T> x = enc.states;
    for (const auto& layer : length_layers_) {
      x = conv1d_depthwise_shared(glu(layer.in(x)), layer.kernel, enc.source.valid, ConvPadding::Symmetric);
    }
    Tensor<T> pooled = mean_pool_masked(x, enc.source.valid);
    return length_out_(relu(length_hidden_(pooled)));
  }

  /// Top-k target lengths of batch row `row`, most probable first.
  std::vector<LengthCandidate> predict_length_topk(const EncoderState<T>& enc, std::size_t k,
                                                   std::size_t row = 0) const {
    return topk_lengths(length_logits(enc), k, row);
  }

  static std::vector<LengthCandidate> topk_lengths(const Tensor<T>& logits, std::size_t k, std::size_t row = 0) {
    const std::size_t n = logits.dim(1);
    const T* x = logits.data().data() + row * n;
    const double mx = static_cast<double>(*std::max_element(x, x + n));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(static_cast<double>(x[i]) - mx);
    const double lse = mx + std::log(z);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    k = std::min(std::max<std::size_t>(k, 1), n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [x](std::size_t a, std::size_t b) { return x[a] > x[b] || (x[a] == x[b] && a < b); });
    std::vector<LengthCandidate> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({order[i] + 1, static_cast<double>(x[order[i]]) - lse});
    return out;
  }

  /// Runs the decoder stack on `inputs` (vocabulary ids; MASK for the NAR
  /// variant, BOS-shifted tokens for AR).
  DecoderOutput<T> decode(const TokenBatch& inputs, const EncoderState<T>& enc) const {
    detail::require(inputs.batch == enc.source.batch, ErrorCode::ShapeMismatch, "decoder/encoder batch mismatch");
    Tensor<T> x = embed(inputs);
    for (const auto& layer : decoder_) {
      if (layer.self_attn) {
        Tensor<T> h = layer.self_attn->norm(x);
        x = add(x, layer.self_attn->attn(h, h, inputs.valid));
      }
      x = add(x, layer.conv(layer.conv_norm(x), inputs.valid));
      x = add(x, layer.cross_attn.attn(layer.cross_attn.norm(x), enc.states, enc.source.valid));
      x = add(x, layer.ffn(layer.ffn_norm(x)));
    }
    x = mask_rows(decoder_norm_(x), inputs.valid);
    return {x, inputs};
  }

  /// One-step decoder input: `length` MASK tokens for every batch row.
  DecoderOutput<T> decode_masked(std::size_t length, const EncoderState<T>& enc) const {
    if (length < 1 || length > config_.max_target_len) {
      throw Error(ErrorCode::LengthOutOfRange,
                  "length " + std::to_string(length) + " outside [1," + std::to_string(config_.max_target_len) + "]");
    }
    std::vector<std::vector<std::int32_t>> rows(enc.source.batch,
                                                std::vector<std::int32_t>(length, Vocabulary::kMask));
    return decode(TokenBatch::from_rows(rows), enc);
  }

  PointerLogits<T> pointer_logits(const DecoderOutput<T>& dec, const EncoderState<T>& enc) const {
    const std::size_t B = dec.states.dim(0), Tn = dec.states.dim(1), L = enc.states.dim(1);
    detail::require(enc.states.dim(0) == B, ErrorCode::ShapeMismatch, "pointer_project batch mismatch");
    const std::size_t G = generation_size();
    Tensor<T> gen = pointer_gen_(dec.states);
    Tensor<T> copy = copy_scores(pointer_q_(dec.states), pointer_k_(enc.states), config_.pointer_heads,
                                 enc.source.valid);
    std::vector<std::uint8_t> keep(B * Tn * (G + L), 1);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < Tn; ++t) {
        for (std::size_t j = 0; j < L; ++j) {
          keep[(b * Tn + t) * (G + L) + G + j] = enc.source.valid[b * L + j];
        }
      }
    }
    return {concat_last(gen, copy), Mask(Shape{B, Tn, G + L}, std::move(keep)), G};
  }

  /// Row-normalized distribution over [generation symbols ++ source positions].
  Tensor<T> pointer_project(const DecoderOutput<T>& dec, const EncoderState<T>& enc) const {
    PointerLogits<T> pl = pointer_logits(dec, enc);
    return masked_softmax(pl.logits, pl.valid);
  }

  std::int32_t input_id_for(std::int32_t pointer_id, const std::vector<std::int32_t>& source_ids) const {
    return decoder_input_id(pointer_id, source_ids, vocab_, autoregressive());
  }

 private:
  void build(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t d = config_.model_dim;
    const bool ar = autoregressive();
    word_embedding_ = params_.add_uniform("embed.word", Shape{vocab_.size(), config_.word_dim()}, 0.1, rng);

    for (std::size_t i = 0; i < config_.encoder_kernels.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      layers::EncoderLayer<T> layer;
      if (!ar) {
        layer.self_attn = layers::AttentionSublayer<T>{
            layers::LayerNorm<T>::make(params_, p + ".self_attn.norm", d),
            layers::MultiHeadAttention<T>::make(params_, p + ".self_attn", d, config_.encoder_self_heads, rng)};
      }
      layer.conv_norm = layers::LayerNorm<T>::make(params_, p + ".conv.norm", d);
      layer.conv = layers::LightConvBlock<T>::make(params_, p + ".conv", d, d, config_.conv_heads,
                                                   config_.encoder_kernels[i], ConvPadding::Symmetric, rng);
      layer.ffn_norm = layers::LayerNorm<T>::make(params_, p + ".ffn.norm", d);
      layer.ffn = layers::FeedForward<T>::make(params_, p + ".ffn", d, config_.ffn_dim, rng);
      encoder_.push_back(std::move(layer));
    }
    encoder_norm_ = layers::LayerNorm<T>::make(params_, "encoder.norm", d);

    if (!ar) {
      std::size_t in = d;
      for (std::size_t i = 0; i < config_.length_kernels.size(); ++i) {
        const std::string p = "length." + std::to_string(i);
        auto lin = layers::Linear<T>::make(params_, p + ".in", in, 2 * config_.length_conv_dim, rng);
        auto kernel = params_.add_uniform(p + ".kernel", Shape{config_.conv_heads, config_.length_kernels[i]}, 0.1, rng);
        length_layers_.push_back({lin, kernel});
        in = config_.length_conv_dim;
      }
      length_hidden_ = layers::Linear<T>::make(params_, "length.hidden", in, config_.length_hidden, rng);
      length_out_ = layers::Linear<T>::make(params_, "length.out", config_.length_hidden, config_.max_target_len, rng);
    }

    const ConvPadding dec_pad = ar ? ConvPadding::Causal : ConvPadding::Symmetric;
    for (std::size_t i = 0; i < config_.decoder_kernels.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      layers::DecoderLayer<T> layer;
      if (!ar) {
        layer.self_attn = layers::AttentionSublayer<T>{
            layers::LayerNorm<T>::make(params_, p + ".self_attn.norm", d),
            layers::MultiHeadAttention<T>::make(params_, p + ".self_attn", d, config_.decoder_self_heads, rng)};
      }
      layer.conv_norm = layers::LayerNorm<T>::make(params_, p + ".conv.norm", d);
      layer.conv = layers::LightConvBlock<T>::make(params_, p + ".conv", d, d, config_.conv_heads,
                                                   config_.decoder_kernels[i], dec_pad, rng);
      layer.cross_attn = layers::AttentionSublayer<T>{
          layers::LayerNorm<T>::make(params_, p + ".cross_attn.norm", d),
          layers::MultiHeadAttention<T>::make(params_, p + ".cross_attn", d, config_.decoder_cross_heads, rng)};
      layer.ffn_norm = layers::LayerNorm<T>::make(params_, p + ".ffn.norm", d);
      layer.ffn = layers::FeedForward<T>::make(params_, p + ".ffn", d, config_.ffn_dim, rng);
      decoder_.push_back(std::move(layer));
    }
    decoder_norm_ = layers::LayerNorm<T>::make(params_, "decoder.norm", d);

    pointer_gen_ = layers::Linear<T>::make(params_, "pointer.generate", d, generation_size(), rng);
    pointer_q_ = layers::Linear<T>::make(params_, "pointer.q", d, d, rng);
    pointer_k_ = layers::Linear<T>::make(params_, "pointer.k", d, d, rng);
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore<T> params_;
  Tensor<T> word_embedding_;
  std::vector<layers::EncoderLayer<T>> encoder_;
  layers::LayerNorm<T> encoder_norm_;
  std::vector<layers::LengthLayer<T>> length_layers_;
  layers::Linear<T> length_hidden_;
  layers::Linear<T> length_out_;
  std::vector<layers::DecoderLayer<T>> decoder_;
  layers::LayerNorm<T> decoder_norm_;
  layers::Linear<T> pointer_gen_;
  layers::Linear<T> pointer_q_;
  layers::Linear<T> pointer_k_;
};

}  // namespace narsp
