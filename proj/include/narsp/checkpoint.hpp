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

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "narsp/config.hpp"
#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/model.hpp"

// Checkpoint layout (all text lines end in '\n'):
//   narsp-checkpoint <version>
//   meta <json>
//   config <json>
//   vocab <byte count>
//   <vocabulary file bytes>
//   params <count>
//   then per parameter: "<name> <rank> <dim>..." followed by the values as
//   little-endian float32.

namespace narsp {

inline constexpr std::string_view kCheckpointMagic = "narsp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::size_t epoch = 0;
  double val_em = 0.0;
  bool operator==(const CheckpointMeta&) const = default;
};

namespace detail {

inline void put_f32(std::string& out, float f) {
  auto u = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  char b[4];
  std::memcpy(b, &u, 4);
  out.append(b, 4);
}

inline float get_f32(const char* p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  return std::bit_cast<float>(u);
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::string_view bytes) : b_(bytes) {}

  std::string line() {
    const auto nl = b_.find('\n', pos_);
    if (nl == std::string_view::npos) fail("truncated header");
    std::string out(b_.substr(pos_, nl - pos_));
    pos_ = nl + 1;
    return out;
  }

  std::string_view take(std::size_t n) {
    if (b_.size() - pos_ < n) fail("truncated payload");
    auto out = b_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string field(const std::string& key) {
    std::string l = line();
    if (l.rfind(key + " ", 0) != 0) fail("expected '" + key + "' line");
    return l.substr(key.size() + 1);
  }

  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] static void fail(const std::string& why) { throw Error(ErrorCode::BadCheckpoint, why); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

inline std::size_t parse_count(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    CheckpointReader::fail("bad number '" + s + "'");
  }
  if (used != s.size()) CheckpointReader::fail("bad number '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

template <typename T>
std::string checkpoint_bytes(const Model<T>& model, const CheckpointMeta& meta) {
  std::string out;
  out += std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  out += "meta " + json{{"epoch", meta.epoch}, {"val_em", meta.val_em}}.dump() + "\n";
  out += "config " + to_json(model.config()).dump() + "\n";
  const std::string vocab = model.vocab().to_text();
  out += "vocab " + std::to_string(vocab.size()) + "\n" + vocab;
  const auto& params = model.parameters().all();
  out += "params " + std::to_string(params.size()) + "\n";
  for (const auto& p : params) {
    out += p.name + " " + std::to_string(p.value.rank());
    for (auto d : p.value.shape()) out += " " + std::to_string(d);
    out += "\n";
    for (T v : p.value.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const CheckpointMeta& meta) {
  write_file(path, checkpoint_bytes(model, meta));
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  CheckpointMeta meta;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint_bytes(std::string_view bytes) {
  detail::CheckpointReader r(bytes);
  if (r.line() != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
    detail::CheckpointReader::fail("not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
  }
  CheckpointMeta meta;
  ModelConfig config;
  try {
    const json m = json::parse(r.field("meta"));
    meta.epoch = m.at("epoch").get<std::size_t>();
    meta.val_em = m.at("val_em").get<double>();
    config = model_config_from_json(json::parse(r.field("config")));
  } catch (const nlohmann::json::exception& e) {
    detail::CheckpointReader::fail(std::string("header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadCheckpoint) throw;
    detail::CheckpointReader::fail(e.what());
  }
  const std::size_t vocab_bytes = detail::parse_count(r.field("vocab"));
  Vocabulary vocab = Vocabulary::from_text(r.take(vocab_bytes));

  Model<T> model(config, std::move(vocab), 0);
  auto& params = model.parameters().all();
  if (detail::parse_count(r.field("params")) != params.size()) {
    detail::CheckpointReader::fail("parameter count does not match the architecture");
  }
  for (auto& p : params) {
    std::istringstream head(r.line());
    std::string name;
    std::size_t rank = 0;
    head >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) head >> d;
    if (!head || name != p.name || shape != p.value.shape()) {
      detail::CheckpointReader::fail("unexpected tensor header for " + p.name);
    }
    const std::string_view raw = r.take(4 * p.value.numel());
    T* dst = p.value.mutable_data().data();
    for (std::size_t i = 0; i < p.value.numel(); ++i) dst[i] = static_cast<T>(detail::get_f32(raw.data() + 4 * i));
  }
  if (!r.done()) detail::CheckpointReader::fail("trailing bytes");
  return {std::move(model), meta};
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  return load_checkpoint_bytes<T>(read_file(path));
}

}  // namespace narsp
