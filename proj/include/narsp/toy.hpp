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

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/rng.hpp"
#include "narsp/tree.hpp"

namespace narsp {

/// A slot is filled either with one of `values` (a phrase copied verbatim)
/// or, depth permitting, with an utterance of one of `nested_intents`.
struct ToySlot {
  std::string label;
  std::vector<std::string> values;
  std::vector<std::string> nested_intents;
};

/// Carrier templates are space-separated words with "{SL:NAME}"
/// placeholders; "{SL:NAME?}" marks an optional slot.
struct ToyIntent {
  std::string label;
  std::vector<std::string> templates;
};

struct ToyGrammarSpec {
  std::vector<ToyIntent> intents;
  std::vector<ToySlot> slots;
  std::vector<std::string> root_intents;
  std::size_t max_depth = 4;
  double nest_probability = 0.5;
  double optional_slot_probability = 0.5;
  /// Desired median serialized length; checked against samples in tests.
  double median_target_length = 12.0;

  static ToyGrammarSpec defaults();

  const ToyIntent* intent(const std::string& label) const {
    for (const auto& i : intents) {
      if (i.label == label) return &i;
    }
    return nullptr;
  }

  const ToySlot* slot(const std::string& label) const {
    for (const auto& s : slots) {
      if (s.label == label) return &s;
    }
    return nullptr;
  }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::BadConfig, "toy grammar: " + why); };
    if (max_depth < 1) fail("max_depth must be >= 1");
    if (root_intents.empty()) fail("no root intents");
    for (const auto& r : root_intents) {
      if (!intent(r)) fail("unknown root intent " + r);
    }
    for (const auto& i : intents) {
      if (!is_valid_label(i.label) || i.label.rfind("IN:", 0) != 0) fail("bad intent label " + i.label);
      if (i.templates.empty()) fail(i.label + " has no templates");
      for (const auto& t : i.templates) {
        for (const auto& tok : tokenize(t)) {
          if (tok.front() == '{') {
            std::string name = tok.substr(1, tok.size() - 2);
            if (!name.empty() && name.back() == '?') name.pop_back();
            if (tok.back() != '}' || !slot(name)) fail("template '" + t + "' names unknown slot " + tok);
          } else {
            if (is_ontology_token(tok)) fail("template word looks like ontology: " + tok);
          }
        }
      }
    }
    for (const auto& s : slots) {
      if (!is_valid_label(s.label) || s.label.rfind("SL:", 0) != 0) fail("bad slot label " + s.label);
      if (s.values.empty()) fail(s.label + " has no values");
      for (const auto& v : s.values) {
        if (tokenize(v).empty()) fail(s.label + " has an empty value");
        for (const auto& tok : tokenize(v)) {
          if (is_ontology_token(tok)) fail("value token looks like ontology: " + tok);
        }
      }
      for (const auto& n : s.nested_intents) {
        if (!intent(n)) fail(s.label + " nests unknown intent " + n);
      }
    }
  }
};

inline ToyGrammarSpec ToyGrammarSpec::defaults() {
  ToyGrammarSpec g;
  g.intents = {
      {"IN:CREATE_REMINDER",
       {"remind {SL:PERSON_REMINDED} to {SL:TODO} {SL:DATE_TIME?}",
        "please remind {SL:PERSON_REMINDED} to {SL:TODO}",
        "set a reminder for {SL:PERSON_REMINDED} to {SL:TODO} {SL:DATE_TIME?}",
        "{SL:DATE_TIME} remind {SL:PERSON_REMINDED} to {SL:TODO}"}},
      {"IN:CREATE_CALL",
       {"call {SL:CONTACT} {SL:DATE_TIME?}", "give {SL:CONTACT} a ring",
        "start a {SL:METHOD} call with {SL:CONTACT}", "phone {SL:CONTACT} {SL:DATE_TIME}"}},
      {"IN:SEND_MESSAGE",
       {"text {SL:CONTACT} that {SL:CONTENT}", "send a message to {SL:CONTACT} saying {SL:CONTENT}",
        "tell {SL:CONTACT} {SL:CONTENT}", "message {SL:CONTACT} {SL:DATE_TIME?} saying {SL:CONTENT}"}},
      {"IN:GET_WEATHER",
       {"what is the weather in {SL:LOCATION} {SL:DATE_TIME?}", "will it rain {SL:DATE_TIME} in {SL:LOCATION}",
        "forecast for {SL:LOCATION}", "how cold is it in {SL:LOCATION} {SL:DATE_TIME?}"}},
      {"IN:GET_DIRECTIONS",
       {"directions to {SL:DESTINATION}", "how do i get to {SL:DESTINATION} {SL:DATE_TIME?}",
        "navigate to {SL:DESTINATION} avoiding {SL:ROAD_CONDITION}",
        "take me to {SL:DESTINATION} without {SL:ROAD_CONDITION?}"}},
      {"IN:GET_LOCATION",
       {"the nearest {SL:CATEGORY_LOCATION}", "a {SL:CATEGORY_LOCATION} near {SL:LOCATION}",
        "the closest {SL:CATEGORY_LOCATION} in {SL:LOCATION?}"}},
      {"IN:GET_EVENT",
       {"{SL:CATEGORY_EVENT} events in {SL:LOCATION} {SL:DATE_TIME?}",
        "what is happening in {SL:LOCATION} {SL:DATE_TIME}", "any {SL:CATEGORY_EVENT} {SL:DATE_TIME?}",
        "find {SL:CATEGORY_EVENT} near {SL:LOCATION}"}},
      {"IN:GET_CONTACT", {"my {SL:TYPE_RELATION}", "our {SL:TYPE_RELATION}"}},
  };
  g.slots = {
      {"SL:PERSON_REMINDED", {"me", "us", "my team", "dana", "the kids"}, {}},
      {"SL:TODO",
       {"buy milk", "pay the bills", "water the plants", "pick up the dry cleaning", "book a table",
        "renew my passport", "walk the dog"},
       {"IN:CREATE_CALL", "IN:SEND_MESSAGE", "IN:GET_DIRECTIONS"}},
      {"SL:DATE_TIME",
       {"tomorrow", "tonight", "at noon", "on friday", "this weekend", "tomorrow at 5 pm", "next monday",
        "in an hour", "every morning", "at 7 am"},
       {}},
      {"SL:CONTACT",
       {"john", "maria", "alex", "sam", "priya", "the office", "dr lee", "kim", "omar", "lucy"},
       {"IN:GET_CONTACT"}},
      {"SL:METHOD", {"video", "voice", "conference"}, {}},
      {"SL:CONTENT",
       {"i am running late", "see you soon", "dinner is ready", "call me back", "the meeting moved",
        "happy birthday", "i will be there at six"},
       {}},
      {"SL:LOCATION",
       {"boston", "paris", "new york", "san francisco", "denver", "tokyo", "chicago", "lima", "oslo",
        "cape town"},
       {"IN:GET_LOCATION"}},
      {"SL:DESTINATION", {"the airport", "work", "home", "the mall", "the stadium", "grand central"},
       {"IN:GET_LOCATION", "IN:GET_EVENT"}},
      {"SL:ROAD_CONDITION", {"traffic", "tolls", "highways", "construction"}, {}},
      {"SL:CATEGORY_LOCATION",
       {"gas station", "coffee shop", "pharmacy", "parking garage", "hospital", "bakery"},
       {}},
      {"SL:CATEGORY_EVENT", {"concerts", "jazz", "food festivals", "comedy shows", "art fairs"}, {}},
      {"SL:TYPE_RELATION", {"mom", "dad", "sister", "brother", "boss", "neighbor"}, {}},
  };
  g.root_intents = {"IN:CREATE_REMINDER", "IN:CREATE_CALL", "IN:SEND_MESSAGE", "IN:GET_WEATHER",
                    "IN:GET_DIRECTIONS", "IN:GET_LOCATION",  "IN:GET_EVENT"};
  return g;
}

namespace detail {

struct ToySample {
  std::vector<std::string> words;
  ParseNode node;
};

inline ToySample toy_intent(const ToyGrammarSpec& g, const ToyIntent& in, std::size_t depth, Rng& rng);

inline ToySample toy_slot(const ToyGrammarSpec& g, const ToySlot& sl, std::size_t depth, Rng& rng) {
  ToySample out{{}, ParseNode::slot(sl.label)};
  // A nested intent sits at depth + 1 and its slots at depth + 2.
  if (!sl.nested_intents.empty() && depth + 2 <= g.max_depth && rng.bernoulli(g.nest_probability)) {
    const ToyIntent* in = g.intent(rng.pick(sl.nested_intents));
    ToySample inner = toy_intent(g, *in, depth + 1, rng);
    out.words = std::move(inner.words);
    out.node.children.push_back(std::move(inner.node));
    return out;
  }
  for (auto& w : tokenize(rng.pick(sl.values))) {
    out.node.children.push_back(ParseNode::leaf(w));
    out.words.push_back(std::move(w));
  }
  return out;
}

inline ToySample toy_intent(const ToyGrammarSpec& g, const ToyIntent& in, std::size_t depth, Rng& rng) {
  ToySample out{{}, ParseNode::intent(in.label)};
  for (const auto& tok : tokenize(rng.pick(in.templates))) {
    if (tok.front() != '{') {
      out.words.push_back(tok);
      continue;
    }
    std::string name = tok.substr(1, tok.size() - 2);
    if (name.back() == '?') {
      name.pop_back();
      if (!rng.bernoulli(g.optional_slot_probability)) continue;
    }
    if (depth + 1 > g.max_depth) continue;
    ToySample s = toy_slot(g, *g.slot(name), depth + 1, rng);
    out.words.insert(out.words.end(), s.words.begin(), s.words.end());
    out.node.children.push_back(std::move(s.node));
  }
  return out;
}

}  // namespace detail

/// Samples `n` (utterance, decoupled tree) pairs. Deterministic per seed.
inline std::vector<Example> gen_toy(const ToyGrammarSpec& spec, std::uint64_t seed, std::size_t n) {
  spec.validate();
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ToyIntent* root = spec.intent(rng.pick(spec.root_intents));
    detail::ToySample s = detail::toy_intent(spec, *root, 1, rng);
    out.push_back(Example{std::move(s.words), serialize_tokens(ParseTree{std::move(s.node), std::nullopt})});
  }
  return out;
}

}  // namespace narsp
