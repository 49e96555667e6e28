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

#include <filesystem>
#include <string>

#include "narsp/checkpoint.hpp"
#include "test_util.hpp"

using namespace narsp;
using narsp::testing::tiny_config;
using narsp::testing::tiny_vocab;

namespace {

void expect_bad_checkpoint(const std::string& bytes) {
  try {
    load_checkpoint_bytes<float>(bytes);
    FAIL() << "loaded a corrupt checkpoint";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadCheckpoint) << e.what();
  }
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteExact) {
  for (auto variant : {Variant::NAR, Variant::AR}) {
    Model<float> m(tiny_config(variant), tiny_vocab(), 17);
    const std::string a = checkpoint_bytes(m, {7, 0.625});
    const auto back = load_checkpoint_bytes<float>(a);
    EXPECT_EQ(back.meta.epoch, 7u);
    EXPECT_EQ(back.meta.val_em, 0.625);
    EXPECT_EQ(back.model.config(), m.config());
    EXPECT_EQ(back.model.vocab(), m.vocab());
    EXPECT_EQ(checkpoint_bytes(back.model, back.meta), a);
    ASSERT_EQ(back.model.parameters().all().size(), m.parameters().all().size());
    for (std::size_t i = 0; i < m.parameters().all().size(); ++i) {
      EXPECT_EQ(back.model.parameters().all()[i].value.values(), m.parameters().all()[i].value.values());
    }
  }
}

TEST(Checkpoint, FileRoundTrip) {
  Model<float> m(tiny_config(), tiny_vocab(), 3);
  const std::string path = (std::filesystem::temp_directory_path() / "narsp_test_ckpt.bin").string();
  save_checkpoint(path, m, {1, 0.5});
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(checkpoint_bytes(back.model, back.meta), read_file(path));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<float>(path), Error);
}

TEST(Checkpoint, LoadsIntoDoublePrecision) {
  Model<float> m(tiny_config(), tiny_vocab(), 3);
  const std::string bytes = checkpoint_bytes(m, {});
  const auto d = load_checkpoint_bytes<double>(bytes);
  EXPECT_EQ(checkpoint_bytes(d.model, d.meta), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  Model<float> m(tiny_config(), tiny_vocab(), 3);
  const std::string good = checkpoint_bytes(m, {});
  expect_bad_checkpoint("");
  expect_bad_checkpoint("narsp-checkpoint 2\n" + good.substr(good.find('\n') + 1));
  expect_bad_checkpoint(good.substr(0, good.size() - 1));
  expect_bad_checkpoint(good + "x");
  std::string renamed = good;
  renamed.replace(renamed.find("embed.word"), 10, "embed.wore");
  expect_bad_checkpoint(renamed);
  std::string reshaped = good;
  const auto at = reshaped.find("embed.word 2 20 6");
  ASSERT_NE(at, std::string::npos);
  reshaped.replace(at, 17, "embed.word 2 20 5");
  expect_bad_checkpoint(reshaped);
}
