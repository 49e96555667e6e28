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

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "narsp/config.hpp"
#include "narsp/data.hpp"
#include "narsp/toy.hpp"

using namespace narsp;

namespace {

const char* kReminderRow =
    "Please remind me to call John\t[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO [IN:CREATE_CALL "
    "[SL:METHOD call ] [SL:CONTACT John ] ] ] ]";

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("narsp_test_data_" + name)).string();
}

ErrorCode bad_row_cause(const std::string& text) {
  try {
    parse_tsv(text);
  } catch (const BadRowError& e) {
    return e.cause();
  }
  ADD_FAILURE() << "no BadRowError for: " << text;
  return ErrorCode::BadRow;
}

}  // namespace

TEST(Tsv, ParsesReminderRow) {
  const auto rows = parse_tsv(std::string(kReminderRow) + "\n\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].source, tokenize("Please remind me to call John"));
  EXPECT_EQ(rows[0].target.size(), 15u);
  EXPECT_EQ(rows[0].target.front(), "[IN:CREATE_REMINDER");
}

TEST(Tsv, RejectsWrongColumnCountWithLineNumber) {
  const std::string text = std::string(kReminderRow) + "\na\tb\tc\n";
  try {
    parse_tsv(text);
    FAIL();
  } catch (const BadRowError& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadRow);
    EXPECT_EQ(e.cause(), ErrorCode::ColumnCount);
    EXPECT_EQ(e.line_no(), 2u);
  }
  EXPECT_EQ(bad_row_cause("just one column\n"), ErrorCode::ColumnCount);
}

TEST(Tsv, RejectsLeafMissingFromUtterance) {
  EXPECT_EQ(bad_row_cause("call me\t[IN:X [SL:DATE tomorrow ] ]\n"), ErrorCode::DecoupledViolation);
  EXPECT_EQ(bad_row_cause("call me\t[IN:X [SL:A me ]\n"), ErrorCode::UnbalancedBrackets);
  EXPECT_EQ(bad_row_cause(" \t[IN:X ]\n"), ErrorCode::EmptySource);
}

TEST(Tsv, ValidateCollectsEveryBadRow) {
  const std::string text = std::string(kReminderRow) + "\nx\t[IN:X y ]\n\nz\t[IN:Z z ]\nq\n";
  const TsvReport r = validate_tsv_text(text);
  EXPECT_EQ(r.rows, 4u);
  ASSERT_EQ(r.bad.size(), 2u);
  EXPECT_EQ(r.bad[0].line_no, 2u);
  EXPECT_EQ(r.bad[0].cause, ErrorCode::DecoupledViolation);
  EXPECT_EQ(r.bad[1].line_no, 5u);
  EXPECT_EQ(r.bad[1].cause, ErrorCode::ColumnCount);
}

TEST(Tsv, FileRoundTrip) {
  const auto data = gen_toy(ToyGrammarSpec::defaults(), 4, 50);
  const std::string path = tmp_path("rt.tsv");
  write_file(path, to_tsv(data));
  EXPECT_EQ(read_tsv(path), data);
  std::filesystem::remove(path);
  EXPECT_THROW(read_tsv(path), Error);
}

TEST(Vocabulary, SingleExampleLayout) {
  const auto rows = parse_tsv(kReminderRow);
  const Vocabulary v = Vocabulary::build(rows);
  // Ontology: 2 intents, 4 slots, "]"; source: 6 distinct words.
  EXPECT_EQ(v.ontology_size(), 7u);
  EXPECT_EQ(v.source_size(), 6u);
  EXPECT_EQ(v.size(), 5u + 7u + 6u);
  for (std::int32_t i = 0; i < 5; ++i) {
    EXPECT_EQ(v.token_class(i), TokenClass::Special);
    EXPECT_EQ(v.token(i), Vocabulary::kSpecials[static_cast<std::size_t>(i)]);
  }
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocabulary::kEos), "</s>");
  // Lexicographic within each block.
  EXPECT_EQ(v.ontology_token(0), "[IN:CREATE_CALL");
  EXPECT_EQ(v.ontology_token(6), "]");
  EXPECT_EQ(v.token_class(v.ontology_id(0)), TokenClass::Ontology);
  EXPECT_EQ(v.token_class(v.source_id("John")), TokenClass::Source);
  EXPECT_EQ(v.source_id("nope"), Vocabulary::kUnk);
  EXPECT_EQ(v.source_id("john"), Vocabulary::kUnk);
}

TEST(Vocabulary, MinCountMapsRareWordsToUnk) {
  const std::vector<Example> rows{{tokenize("a b"), tokenize("[IN:X a ]")}, {tokenize("a c"), tokenize("[IN:X ]")}};
  const Vocabulary v = Vocabulary::build(rows, 2);
  EXPECT_EQ(v.source_size(), 1u);
  EXPECT_NE(v.source_id("a"), Vocabulary::kUnk);
  EXPECT_EQ(v.source_id("b"), Vocabulary::kUnk);
  EXPECT_EQ(v.source_id("c"), Vocabulary::kUnk);
  EXPECT_THROW(Vocabulary::build({}), Error);
}

TEST(Vocabulary, SaveLoadSaveIsByteIdentical) {
  const Vocabulary v = Vocabulary::build(gen_toy(ToyGrammarSpec::defaults(), 9, 300));
  const std::string a = tmp_path("v1.txt"), b = tmp_path("v2.txt");
  v.save(a);
  const Vocabulary back = Vocabulary::load(a);
  back.save(b);
  EXPECT_EQ(back, v);
  EXPECT_EQ(read_file(a), read_file(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Vocabulary, FromTextRejectsCorruption) {
  const Vocabulary v = Vocabulary::build(parse_tsv(kReminderRow));
  std::string text = v.to_text();
  EXPECT_EQ(Vocabulary::from_text(text), v);
  EXPECT_THROW(Vocabulary::from_text(text.substr(text.find('\n') + 1)), Error);
  std::string swapped = text;
  swapped.replace(swapped.find("\tontology"), 9, "\tbogus");
  EXPECT_THROW(Vocabulary::from_text(swapped), Error);
}

TEST(EncodeExample, ReminderPointerIds) {
  const auto rows = parse_tsv(kReminderRow);
  const Vocabulary v = Vocabulary::build(rows);
  const EncodedExample e = encode_example(rows[0], v, 100);
  ASSERT_EQ(e.length, 15u);
  ASSERT_EQ(e.target.size(), 15u);
  const auto G = static_cast<std::int32_t>(v.ontology_size());
  // "me" is source position 2, "call" 4, "John" 5.
  EXPECT_EQ(e.target[2], G + 2);
  EXPECT_EQ(e.target[7], G + 4);
  EXPECT_EQ(e.target[10], G + 5);
  EXPECT_EQ(e.target[0], static_cast<std::int32_t>(*v.ontology_index("[IN:CREATE_REMINDER")));
  EXPECT_EQ(e.target.back(), static_cast<std::int32_t>(*v.ontology_index("]")));
  // With an EOS slot the copy block shifts by one.
  EXPECT_EQ(encode_example(rows[0], v, 100, true).target[2], G + 3);
  EXPECT_EQ(e.source_ids.size(), 6u);
}

TEST(EncodeExample, Errors) {
  const auto rows = parse_tsv(kReminderRow);
  const Vocabulary v = Vocabulary::build(rows);
  const Example bad{tokenize("remind me"), tokenize("[IN:CREATE_REMINDER [SL:TODO John ] ]")};
  try {
    encode_example(bad, v, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnalignableLeaf);
  }
  try {
    encode_example(rows[0], v, 14);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TargetTooLong);
  }
  try {
    encode_example(Example{{}, tokenize("[IN:X ]")}, v, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySource);
  }
}

TEST(EncodeExample, ResolvePointerInvertsEncoding) {
  const auto data = gen_toy(ToyGrammarSpec::defaults(), 21, 500);
  const Vocabulary v = Vocabulary::build(data);
  for (bool eos : {false, true}) {
    for (const auto& ex : data) {
      const EncodedExample e = encode_example(ex, v, 100, eos);
      std::vector<std::string> back;
      for (auto id : e.target) back.push_back(resolve_pointer(id, ex.source, v, eos).value());
      ASSERT_EQ(back, ex.target);
      for (auto id : e.target) {
        ASSERT_EQ(decoder_input_id(id, e.source_ids, v, eos),
                  is_ontology_token(*resolve_pointer(id, ex.source, v, eos))
                      ? v.ontology_id(static_cast<std::size_t>(id))
                      : v.source_id(*resolve_pointer(id, ex.source, v, eos)));
      }
    }
  }
  const auto G = static_cast<std::int32_t>(v.ontology_size());
  EXPECT_FALSE(resolve_pointer(G, {"a"}, v, true).has_value());
  EXPECT_EQ(decoder_input_id(G, {7}, v, true), Vocabulary::kEos);
  EXPECT_FALSE(resolve_pointer(G + 5, {"a"}, v, false).has_value());
  EXPECT_FALSE(resolve_pointer(-1, {"a"}, v, false).has_value());
  EXPECT_THROW(decoder_input_id(G + 5, {7}, v, false), Error);
}

TEST(GenToy, DeterministicPerSeed) {
  const auto spec = ToyGrammarSpec::defaults();
  EXPECT_EQ(to_tsv(gen_toy(spec, 42, 200)), to_tsv(gen_toy(spec, 42, 200)));
  EXPECT_NE(to_tsv(gen_toy(spec, 42, 200)), to_tsv(gen_toy(spec, 43, 200)));
}

TEST(GenToy, SamplesAreValidDecoupledTreesWithNesting) {
  const auto spec = ToyGrammarSpec::defaults();
  const auto data = gen_toy(spec, 7, 1000);
  std::size_t deep = 0;
  std::vector<std::size_t> lengths;
  for (const auto& ex : data) {
    const ParseTree t = check_example(ex);
    const TreeStats st = tree_stats(t);
    ASSERT_LE(st.depth, spec.max_depth);
    if (st.depth >= 3) ++deep;
    lengths.push_back(ex.target.size());
  }
  EXPECT_GT(deep, 0u);
  std::nth_element(lengths.begin(), lengths.begin() + 500, lengths.end());
  const double median = static_cast<double>(lengths[500]);
  EXPECT_NEAR(median, spec.median_target_length, 2.0);
}

TEST(GenToy, RejectsInvalidGrammar) {
  auto spec = ToyGrammarSpec::defaults();
  spec.root_intents = {"IN:NOT_THERE"};
  EXPECT_THROW(gen_toy(spec, 1, 1), Error);
  spec = ToyGrammarSpec::defaults();
  spec.intents[0].templates = {"hello {SL:MISSING}"};
  EXPECT_THROW(gen_toy(spec, 1, 1), Error);
}

TEST(Config, ToySpecJsonRoundTrip) {
  const auto spec = ToyGrammarSpec::defaults();
  const ToyGrammarSpec back = toy_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back).dump(), to_json(spec).dump());
  EXPECT_EQ(to_tsv(gen_toy(back, 3, 50)), to_tsv(gen_toy(spec, 3, 50)));
}

TEST(Config, UnknownKeysAreRejected) {
  auto expect_bad = [](auto&& f) {
    try {
      f();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadConfig) << e.what();
    }
  };
  json m = to_json(ModelConfig::base(Variant::NAR));
  m["model_dimm"] = 3;
  expect_bad([&] { model_config_from_json(m); });
  expect_bad([&] { decode_config_from_json(json{{"kk", 5}}); });
  expect_bad([&] { decode_config_from_json(json{{"k", "five"}}); });
  json t = to_json(ToyGrammarSpec::defaults());
  t["extra"] = true;
  expect_bad([&] { toy_spec_from_json(t); });
  expect_bad([&] { parse_json("{not json", "x"); });
  expect_bad([&] { detail::parse_variant("nat"); });
}

TEST(Config, ModelConfigRoundTripAndPresets) {
  for (auto v : {Variant::NAR, Variant::AR}) {
    const ModelConfig p = ModelConfig::base(v);
    EXPECT_EQ(model_config_from_json(to_json(p)), p);
    const ModelConfig r = ModelConfig::reduced(64, v);
    EXPECT_EQ(model_config_from_json(to_json(r)), r);
  }
  const ModelConfig p = model_config_from_json(json{{"preset", "base"}});
  EXPECT_EQ(p.model_dim, 160u);
  EXPECT_EQ(p.encoder_kernels, (std::vector<std::size_t>{3, 7, 15, 21, 27}));
  EXPECT_EQ(p.decoder_kernels, (std::vector<std::size_t>{7, 27}));
  EXPECT_EQ(p.length_kernels, (std::vector<std::size_t>{3, 9}));
  EXPECT_EQ(p.length_conv_dim, 512u);
  EXPECT_EQ(p.length_hidden, 256u);
  EXPECT_EQ(p.pointer_heads, 8u);
  EXPECT_EQ(p.decoder_cross_heads, 2u);
  EXPECT_EQ(model_config_from_json(json{{"preset", "reduced"}, {"model_dim", 32}}).model_dim, 32u);
}
