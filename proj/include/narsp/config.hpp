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

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "narsp/error.hpp"
#include "narsp/inference.hpp"
#include "narsp/model.hpp"
#include "narsp/toy.hpp"

// Structured-text configuration. Every section is a JSON object whose keys
// mirror the corresponding struct; absent keys keep their defaults and
// unknown keys are rejected.

namespace narsp {

using json = nlohmann::ordered_json;

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& section) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::BadConfig, section + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out, const std::string& section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, section + "." + key + ": " + e.what());
  }
}

inline Variant parse_variant(const std::string& s) {
  if (s == "nar") return Variant::NAR;
  if (s == "ar") return Variant::AR;
  throw Error(ErrorCode::BadConfig, "variant must be 'nar' or 'ar', got '" + s + "'");
}

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "sum_times_length") return ScoreMode::SumTimesLength;
  if (s == "length_normalized") return ScoreMode::LengthNormalized;
  throw Error(ErrorCode::BadConfig, "score_mode must be sum_times_length or length_normalized, got '" + s + "'");
}

}  // namespace detail

inline json to_json(const ModelConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"model_dim", c.model_dim},
              {"pos_dim", c.pos_dim},
              {"encoder_kernels", c.encoder_kernels},
              {"encoder_self_heads", c.encoder_self_heads},
              {"decoder_kernels", c.decoder_kernels},
              {"decoder_self_heads", c.decoder_self_heads},
              {"decoder_cross_heads", c.decoder_cross_heads},
              {"conv_heads", c.conv_heads},
              {"ffn_dim", c.ffn_dim},
              {"length_conv_dim", c.length_conv_dim},
              {"length_kernels", c.length_kernels},
              {"length_hidden", c.length_hidden},
              {"pointer_heads", c.pointer_heads},
              {"max_target_len", c.max_target_len}};
}

/// A "preset" key ("base" or "reduced") selects the base values before
/// explicit keys are applied; "reduced" honours model_dim when given.
inline ModelConfig model_config_from_json(const json& j) {
  const std::string s = "model";
  detail::check_keys(j, {"preset", "variant", "model_dim", "pos_dim", "encoder_kernels", "encoder_self_heads",
                         "decoder_kernels", "decoder_self_heads", "decoder_cross_heads", "conv_heads", "ffn_dim",
                         "length_conv_dim", "length_kernels", "length_hidden", "pointer_heads", "max_target_len"},
                     s);
  ModelConfig c;
  std::string variant = "nar";
  detail::read_opt(j, "variant", variant, s);
  const Variant v = detail::parse_variant(variant);
  std::string preset = "base";
  detail::read_opt(j, "preset", preset, s);
  if (preset == "base") {
    c = ModelConfig::base(v);
  } else if (preset == "reduced") {
    std::size_t dim = 64;
    detail::read_opt(j, "model_dim", dim, s);
    c = ModelConfig::reduced(dim, v);
  } else {
    throw Error(ErrorCode::BadConfig, "model.preset must be 'base' or 'reduced'");
  }
  detail::read_opt(j, "model_dim", c.model_dim, s);
  detail::read_opt(j, "pos_dim", c.pos_dim, s);
  detail::read_opt(j, "encoder_kernels", c.encoder_kernels, s);
  detail::read_opt(j, "encoder_self_heads", c.encoder_self_heads, s);
  detail::read_opt(j, "decoder_kernels", c.decoder_kernels, s);
  detail::read_opt(j, "decoder_self_heads", c.decoder_self_heads, s);
  detail::read_opt(j, "decoder_cross_heads", c.decoder_cross_heads, s);
  detail::read_opt(j, "conv_heads", c.conv_heads, s);
  detail::read_opt(j, "ffn_dim", c.ffn_dim, s);
  detail::read_opt(j, "length_conv_dim", c.length_conv_dim, s);
  detail::read_opt(j, "length_kernels", c.length_kernels, s);
  detail::read_opt(j, "length_hidden", c.length_hidden, s);
  detail::read_opt(j, "pointer_heads", c.pointer_heads, s);
  detail::read_opt(j, "max_target_len", c.max_target_len, s);
  c.validate();
  return c;
}

inline json to_json(const DecodeConfig& c) {
  return json{{"k", c.k}, {"score_mode", to_string(c.score_mode)}, {"ar_beam", c.ar_beam}};
}

inline DecodeConfig decode_config_from_json(const json& j) {
  const std::string s = "decode";
  detail::check_keys(j, {"k", "score_mode", "ar_beam"}, s);
  DecodeConfig c;
  detail::read_opt(j, "k", c.k, s);
  std::string mode(to_string(c.score_mode));
  detail::read_opt(j, "score_mode", mode, s);
  c.score_mode = detail::parse_score_mode(mode);
  detail::read_opt(j, "ar_beam", c.ar_beam, s);
  c.validate();
  return c;
}

inline json to_json(const ToyGrammarSpec& g) {
  json intents = json::array(), slots = json::array();
  for (const auto& i : g.intents) intents.push_back({{"label", i.label}, {"templates", i.templates}});
  for (const auto& sl : g.slots) {
    slots.push_back({{"label", sl.label}, {"values", sl.values}, {"nested_intents", sl.nested_intents}});
  }
  return json{{"intents", intents},
              {"slots", slots},
              {"root_intents", g.root_intents},
              {"max_depth", g.max_depth},
              {"nest_probability", g.nest_probability},
              {"optional_slot_probability", g.optional_slot_probability},
              {"median_target_length", g.median_target_length}};
}

/// Missing grammar keys fall back to the default grammar.
inline ToyGrammarSpec toy_spec_from_json(const json& j) {
  const std::string s = "toy";
  detail::check_keys(j, {"intents", "slots", "root_intents", "max_depth", "nest_probability",
                         "optional_slot_probability", "median_target_length"},
                     s);
  ToyGrammarSpec g = ToyGrammarSpec::defaults();
  if (j.contains("intents")) {
    g.intents.clear();
    for (const auto& i : j.at("intents")) {
      detail::check_keys(i, {"label", "templates"}, s + ".intents");
      ToyIntent in;
      detail::read_opt(i, "label", in.label, s);
      detail::read_opt(i, "templates", in.templates, s);
      g.intents.push_back(std::move(in));
    }
  }
  if (j.contains("slots")) {
    g.slots.clear();
    for (const auto& x : j.at("slots")) {
      detail::check_keys(x, {"label", "values", "nested_intents"}, s + ".slots");
      ToySlot sl;
      detail::read_opt(x, "label", sl.label, s);
      detail::read_opt(x, "values", sl.values, s);
      detail::read_opt(x, "nested_intents", sl.nested_intents, s);
      g.slots.push_back(std::move(sl));
    }
  }
  detail::read_opt(j, "root_intents", g.root_intents, s);
  detail::read_opt(j, "max_depth", g.max_depth, s);
  detail::read_opt(j, "nest_probability", g.nest_probability, s);
  detail::read_opt(j, "optional_slot_probability", g.optional_slot_probability, s);
  detail::read_opt(j, "median_target_length", g.median_target_length, s);
  g.validate();
  return g;
}

inline json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, what + ": " + e.what());
  }
}

}  // namespace narsp
