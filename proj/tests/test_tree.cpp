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

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "narsp/rng.hpp"
#include "narsp/toy.hpp"
#include "narsp/tree.hpp"

using namespace narsp;

namespace {

const char* kReminder =
    "[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO [IN:CREATE_CALL [SL:METHOD call ] "
    "[SL:CONTACT John ] ] ] ]";

ParseNode reminder_tree() {
  return ParseNode::intent(
      "IN:CREATE_REMINDER",
      {ParseNode::slot("SL:PERSON_REMINDED", {ParseNode::leaf("me")}),
       ParseNode::slot("SL:TODO", {ParseNode::intent("IN:CREATE_CALL",
                                                     {ParseNode::slot("SL:METHOD", {ParseNode::leaf("call")}),
                                                      ParseNode::slot("SL:CONTACT", {ParseNode::leaf("John")})})})});
}

template <typename F>
void expect_parse_error(F&& f, ErrorCode code, std::size_t index) {
  try {
    f();
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    EXPECT_EQ(e.token_index(), index) << e.what();
  }
}

// Random decoupled trees, built independently of the toy grammar.
ParseNode random_intent(Rng& rng, int depth);

ParseNode random_slot(Rng& rng, int depth) {
  ParseNode s = ParseNode::slot("SL:S" + std::to_string(rng.below(5)));
  const auto n = rng.below(3);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (depth < 5 && rng.bernoulli(0.3)) {
      s.children.push_back(random_intent(rng, depth + 1));
    } else {
      s.children.push_back(ParseNode::leaf("w" + std::to_string(rng.below(20))));
    }
  }
  return s;
}

ParseNode random_intent(Rng& rng, int depth) {
  ParseNode in = ParseNode::intent("IN:I" + std::to_string(rng.below(5)));
  const auto n = rng.below(4);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (rng.bernoulli(0.6)) {
      in.children.push_back(random_slot(rng, depth + 1));
    } else {
      in.children.push_back(ParseNode::leaf("w" + std::to_string(rng.below(20))));
    }
  }
  return in;
}

}  // namespace

TEST(Tokenize, SplitsOnAsciiWhitespaceAndKeepsCase) {
  EXPECT_EQ(tokenize("  Call\tJohn \n now "), (std::vector<std::string>{"Call", "John", "now"}));
  EXPECT_TRUE(tokenize(" \t\r\n").empty());
  EXPECT_EQ(join({"a", "b"}), "a b");
}

TEST(ClassifyToken, RecognisesOntologyTokens) {
  EXPECT_EQ(classify_token("]")->kind, OntologyKind::Close);
  EXPECT_EQ(classify_token("[IN:X")->kind, OntologyKind::IntentOpen);
  EXPECT_EQ(classify_token("[SL:Y")->label, "SL:Y");
  EXPECT_FALSE(classify_token("John").has_value());
  expect_parse_error([] { classify_token("[FOO", 3); }, ErrorCode::MalformedLabel, 3);
  expect_parse_error([] { classify_token("[IN:", 0); }, ErrorCode::MalformedLabel, 0);
}

TEST(Parse, ReminderStructure) {
  const ParseTree t = parse_serialized(kReminder);
  EXPECT_EQ(t.root, reminder_tree());
  EXPECT_EQ(t.root.label, "IN:CREATE_REMINDER");
  ASSERT_EQ(t.root.children.size(), 2u);
  EXPECT_EQ(t.root.children[0].label, "SL:PERSON_REMINDED");
  EXPECT_EQ(t.root.children[0].children[0], ParseNode::leaf("me"));
  const ParseNode& call = t.root.children[1].children[0];
  EXPECT_EQ(call.kind, NodeKind::Intent);
  EXPECT_EQ(call.children[1].children[0].label, "John");
}

TEST(Serialize, ReminderVerbatim) {
  EXPECT_EQ(serialize(ParseTree{reminder_tree(), std::nullopt}), kReminder);
  EXPECT_EQ(serialize(parse_serialized(kReminder)), kReminder);
}

TEST(Parse, MinimalTree) {
  const ParseTree t = parse_serialized("[IN:X ]");
  EXPECT_EQ(t.root, ParseNode::intent("IN:X"));
  EXPECT_EQ(serialize(t), "[IN:X ]");
}

TEST(Parse, ErrorsNameTheTokenIndex) {
  expect_parse_error([] { parse_serialized("[IN:X [SL:Y ]"); }, ErrorCode::UnbalancedBrackets, 3);
  expect_parse_error([] { parse_serialized(""); }, ErrorCode::EmptyTree, 0);
  expect_parse_error([] { parse_serialized("[IN:X ] ]"); }, ErrorCode::UnbalancedBrackets, 2);
  expect_parse_error([] { parse_serialized("]"); }, ErrorCode::UnbalancedBrackets, 0);
  expect_parse_error([] { parse_serialized("[SL:X ]"); }, ErrorCode::NonIntentRoot, 0);
  expect_parse_error([] { parse_serialized("hello [IN:X ]"); }, ErrorCode::NonIntentRoot, 0);
  expect_parse_error([] { parse_serialized("[IN:X [XX:Y ] ]"); }, ErrorCode::MalformedLabel, 1);
  expect_parse_error([] { parse_serialized("[IN:X [IN:Y ] ]"); }, ErrorCode::InvalidNesting, 1);
  expect_parse_error([] { parse_serialized("[IN:X [SL:A [SL:B ] ] ]"); }, ErrorCode::InvalidNesting, 2);
}

TEST(Parse, RoundTripsTenThousandRandomTrees) {
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    const ParseTree t{random_intent(rng, 1), std::nullopt};
    const std::string s = serialize(t);
    const ParseTree back = parse_serialized(s);
    ASSERT_EQ(back, t) << s;
    ASSERT_EQ(serialize(back), s);
  }
}

TEST(Parse, FuzzedBracketStringsYieldTreeOrPositionedError) {
  const std::vector<std::string> alphabet{"[IN:A", "[SL:B", "]", "w", "[IN:", "[x", "v"};
  Rng rng(5);
  std::size_t parsed = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<std::string> toks(rng.below(12));
    for (auto& t : toks) t = rng.pick(alphabet);
    try {
      const ParseTree t = parse_tokens(toks);
      ASSERT_EQ(serialize_tokens(t), toks);
      ++parsed;
    } catch (const ParseError& e) {
      ASSERT_LE(e.token_index(), toks.size());
    }
  }
  EXPECT_GT(parsed, 0u);
}

TEST(ValidateAgainstSource, ReminderIsDecoupled) {
  const auto report = validate_against_source(parse_serialized(kReminder), tokenize("Please remind me to call John"));
  EXPECT_TRUE(report.ok());
}

TEST(ValidateAgainstSource, ReportsMissingLeaves) {
  const auto t = parse_serialized("[IN:X [SL:DATE tomorrow ] ]");
  EXPECT_EQ(validate_against_source(t, tokenize("call me")).missing, std::vector<std::string>{"tomorrow"});
  EXPECT_TRUE(validate_against_source(parse_serialized("[IN:X [SL:Y ] ]"), {"a"}).ok());
}

TEST(ExactMatch, TokenLevel) {
  EXPECT_TRUE(exact_match(kReminder, kReminder));
  EXPECT_TRUE(exact_match("  [IN:X  ] ", "[IN:X ]"));
  EXPECT_FALSE(exact_match("[IN:X [SL:A a ] [SL:B b ] ]", "[IN:X [SL:B b ] [SL:A a ] ]"));
  EXPECT_FALSE(exact_match("[IN:X john ]", "[IN:X John ]"));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::string a = serialize(ParseTree{random_intent(rng, 1), std::nullopt});
    const std::string b = serialize(ParseTree{random_intent(rng, 1), std::nullopt});
    EXPECT_EQ(exact_match(a, b), exact_match(b, a));
    EXPECT_TRUE(exact_match(a, a));
  }
}

TEST(FromFlat, BuildsDepthTwoTree) {
  const auto toks = tokenize("what s weather in boston");
  // Half-open spans: [4, 5) is "boston".
  const ParseTree t = from_flat("IN:GET_WEATHER", {{"SL:LOC", 4, 5}}, toks);
  EXPECT_EQ(serialize(t), "[IN:GET_WEATHER [SL:LOC boston ] ]");
  EXPECT_EQ(serialize(from_flat("IN:X", {}, toks)), "[IN:X ]");
  const ParseTree two = from_flat("IN:X", {{"SL:B", 3, 5}, {"SL:A", 0, 1}}, toks);
  EXPECT_EQ(serialize(two), "[IN:X [SL:A what ] [SL:B in boston ] ]");
}

TEST(FromFlat, Errors) {
  const auto toks = tokenize("a b c d e");
  try {
    from_flat("IN:X", {{"SL:A", 1, 3}, {"SL:B", 2, 4}}, toks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OverlappingSlots);
  }
  for (SlotSpan bad : {SlotSpan{"SL:A", 2, 2}, SlotSpan{"SL:A", 4, 6}, SlotSpan{"SL:A", 3, 1}}) {
    try {
      from_flat("IN:X", {bad}, toks);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::SpanOutOfBounds);
    }
  }
  EXPECT_THROW(from_flat("SL:X", {}, toks), ParseError);
}

TEST(FromFlat, OutputValidatesAgainstItsTokens) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::string> toks(1 + rng.below(10));
    for (auto& t : toks) t = "t" + std::to_string(rng.below(6));
    std::vector<SlotSpan> spans;
    std::size_t pos = 0;
    while (pos < toks.size()) {
      const std::size_t len = 1 + rng.below(3);
      if (pos + len > toks.size()) break;
      if (rng.bernoulli(0.5)) spans.push_back({"SL:S", pos, pos + len});
      pos += len + rng.below(2);
    }
    EXPECT_TRUE(validate_against_source(from_flat("IN:X", spans, toks), toks).ok());
  }
}

TEST(TreeStats, Reminder) {
  // Hand count of the reminder example serialization: 6 open + 6 close + 3 leaves.
  const TreeStats s = tree_stats(parse_serialized(kReminder));
  EXPECT_EQ(s.depth, 4u);
  EXPECT_EQ(s.token_length, 15u);
  EXPECT_EQ(s.token_length, tokenize(kReminder).size());
  EXPECT_EQ(s.node_count, 6u);
  EXPECT_EQ(s.leaf_count, 3u);
}

TEST(TreeStats, MinimalAndRandom) {
  const TreeStats s = tree_stats(parse_serialized("[IN:X ]"));
  EXPECT_EQ(s.depth, 1u);
  EXPECT_EQ(s.token_length, 2u);
  Rng rng(8);
  for (int i = 0; i < 300; ++i) {
    const ParseTree t{random_intent(rng, 1), std::nullopt};
    const TreeStats st = tree_stats(t);
    EXPECT_GE(st.depth, 1u);
    EXPECT_EQ(st.token_length, serialize_tokens(t).size());
  }
}
