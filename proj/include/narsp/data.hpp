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
#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "narsp/error.hpp"
#include "narsp/tree.hpp"

namespace narsp {

/// One utterance and its serialized decoupled parse.
struct Example {
  std::vector<std::string> source;
  std::vector<std::string> target;

  std::string source_text() const { return join(source); }
  std::string target_text() const { return join(target); }
  bool operator==(const Example&) const = default;
};

/// Checks that `target` parses and that its leaves all occur in `source`.
/// Throws ParseError or Error(DecoupledViolation).
inline ParseTree check_example(const Example& ex) {
  if (ex.source.empty()) throw Error(ErrorCode::EmptySource, "empty utterance");
  ParseTree tree = parse_tokens(ex.target);
  const auto report = validate_against_source(tree, ex.source);
  if (!report.ok()) {
    throw Error(ErrorCode::DecoupledViolation, "leaf '" + report.missing.front() + "' not in utterance");
  }
  tree.source_ref = ex.source;
  return tree;
}

/// Parses one "utterance<TAB>serialized tree" row. `line_no` is 1-based.
inline Example parse_tsv_row(std::string_view line, std::size_t line_no) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), '\t')) + 1;
  if (cols != 2) {
    throw BadRowError(line_no, ErrorCode::ColumnCount, "expected 2 columns, found " + std::to_string(cols));
  }
  const std::size_t tab = line.find('\t');
  Example ex{tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))};
  try {
    check_example(ex);
  } catch (const Error& e) {
    throw BadRowError(line_no, e.code(), e.what());
  }
  return ex;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

namespace detail {

template <typename F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    if (!tokenize(line).empty()) fn(line, line_no);
    pos = nl + 1;
  }
}

}  // namespace detail

inline std::vector<Example> parse_tsv(std::string_view text) {
  std::vector<Example> out;
  detail::for_each_line(text, [&out](std::string_view line, std::size_t no) {
    out.push_back(parse_tsv_row(line, no));
  });
  return out;
}

/// Reads a two-column TSV; blank lines are skipped. Throws BadRowError on
/// the first invalid row.
inline std::vector<Example> read_tsv(const std::string& path) { return parse_tsv(read_file(path)); }

struct BadRow {
  std::size_t line_no;
  ErrorCode cause;
  std::string message;
};

struct TsvReport {
  std::size_t rows = 0;
  std::vector<BadRow> bad;
};

/// Like read_tsv but collects every bad row instead of stopping.
inline TsvReport validate_tsv_text(std::string_view text) {
  TsvReport report;
  detail::for_each_line(text, [&report](std::string_view line, std::size_t no) {
    ++report.rows;
    try {
      parse_tsv_row(line, no);
    } catch (const BadRowError& e) {
      report.bad.push_back({e.line_no(), e.cause(), e.what()});
    }
  });
  return report;
}

inline std::string to_tsv(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& ex : examples) out += ex.source_text() + "\t" + ex.target_text() + "\n";
  return out;
}

enum class TokenClass { Special, Ontology, Source };

inline std::string_view to_string(TokenClass c) {
  switch (c) {
    case TokenClass::Special: return "special";
    case TokenClass::Ontology: return "ontology";
    case TokenClass::Source: return "source";
  }
  return "?";
}

/// Dense id space: specials at 0..4, then ontology tokens, then source
/// tokens, each group in lexicographic order.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::int32_t kBos = 3;
  static constexpr std::int32_t kEos = 4;
  static constexpr std::size_t kSpecialCount = 5;
  static constexpr std::array<std::string_view, kSpecialCount> kSpecials = {"<pad>", "<unk>", "<mask>",
                                                                            "<s>", "</s>"};

  Vocabulary() { rebuild({}, {}); }

  Vocabulary(std::vector<std::string> ontology, std::vector<std::string> source) {
    rebuild(std::move(ontology), std::move(source));
  }

  /// Ontology from every "[IN:*", "[SL:*" and "]" in the targets; source
  /// tokens seen fewer than `min_count` times fall back to UNK.
  static Vocabulary build(const std::vector<Example>& train, std::size_t min_count = 1) {
    if (train.empty()) throw Error(ErrorCode::EmptyDataset, "cannot build a vocabulary from no examples");
    std::map<std::string, std::size_t> onto, src;
    for (const auto& ex : train) {
      for (const auto& t : ex.target) {
        if (is_ontology_token(t)) ++onto[t];
      }
      for (const auto& t : ex.source) ++src[t];
    }
    std::vector<std::string> o, s;
    for (auto& [tok, n] : onto) o.push_back(tok);
    for (auto& [tok, n] : src) {
      if (n >= min_count) s.push_back(tok);
    }
    return Vocabulary(std::move(o), std::move(s));
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t ontology_size() const { return ontology_count_; }
  std::size_t source_size() const { return tokens_.size() - kSpecialCount - ontology_count_; }

  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  TokenClass token_class(std::int32_t id) const {
    const auto i = static_cast<std::size_t>(id);
    if (i < kSpecialCount) return TokenClass::Special;
    if (i < kSpecialCount + ontology_count_) return TokenClass::Ontology;
    return TokenClass::Source;
  }

  /// Source-side id; unknown tokens map to UNK.
  std::int32_t source_id(const std::string& tok) const {
    auto it = source_index_.find(tok);
    return it == source_index_.end() ? kUnk : it->second;
  }

  /// Position of an ontology token within the ontology block.
  std::optional<std::size_t> ontology_index(const std::string& tok) const {
    auto it = ontology_index_.find(tok);
    if (it == ontology_index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& ontology_token(std::size_t index) const {
    return tokens_.at(kSpecialCount + index);
  }

  std::int32_t ontology_id(std::size_t index) const {
    return static_cast<std::int32_t>(kSpecialCount + index);
  }

  /// "token<TAB>id<TAB>class" lines.
  std::string to_text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out += tokens_[i] + "\t" + std::to_string(i) + "\t" +
             std::string(to_string(token_class(static_cast<std::int32_t>(i)))) + "\n";
    }
    return out;
  }

  static Vocabulary from_text(std::string_view text) {
    std::vector<std::string> onto, src;
    std::size_t expected = 0;
    detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
      std::vector<std::string> cols;
      std::size_t pos = 0;
      while (true) {
        const std::size_t tab = line.find('\t', pos);
        cols.emplace_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
        if (tab == std::string_view::npos) break;
        pos = tab + 1;
      }
      auto fail = [no](const std::string& why) {
        throw Error(ErrorCode::BadCheckpoint, "vocabulary line " + std::to_string(no) + ": " + why);
      };
      if (cols.size() != 3) fail("expected 3 columns");
      if (cols[1] != std::to_string(expected)) fail("ids must be dense and ordered");
      if (expected < kSpecialCount) {
        if (cols[0] != kSpecials[expected] || cols[2] != "special") fail("special tokens out of place");
      } else if (cols[2] == "ontology") {
        if (!src.empty()) fail("ontology after source tokens");
        onto.push_back(cols[0]);
      } else if (cols[2] == "source") {
        src.push_back(cols[0]);
      } else {
        fail("unknown class '" + cols[2] + "'");
      }
      ++expected;
    });
    if (expected < kSpecialCount) throw Error(ErrorCode::BadCheckpoint, "vocabulary lacks specials");
    return Vocabulary(std::move(onto), std::move(src));
  }

  void save(const std::string& path) const { write_file(path, to_text()); }
  static Vocabulary load(const std::string& path) { return from_text(read_file(path)); }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && ontology_count_ == o.ontology_count_; }

 private:
  void rebuild(std::vector<std::string> ontology, std::vector<std::string> source) {
    tokens_.assign(kSpecials.begin(), kSpecials.end());
    ontology_count_ = ontology.size();
    ontology_index_.clear();
    source_index_.clear();
    for (std::size_t i = 0; i < ontology.size(); ++i) {
      ontology_index_.emplace(ontology[i], i);
      tokens_.push_back(std::move(ontology[i]));
    }
    for (auto& s : source) {
      source_index_.emplace(s, static_cast<std::int32_t>(tokens_.size()));
      tokens_.push_back(std::move(s));
    }
  }

  std::vector<std::string> tokens_;
  std::size_t ontology_count_ = 0;
  std::unordered_map<std::string, std::size_t> ontology_index_;
  std::unordered_map<std::string, std::int32_t> source_index_;
};

/// Size of the generation block of the pointer space: the ontology, plus EOS
/// when the decoder is autoregressive. Copy of source position p has
/// pointer id generation_size + p.
inline std::size_t generation_size(const Vocabulary& vocab, bool with_eos) {
  return vocab.ontology_size() + (with_eos ? 1 : 0);
}

struct EncodedExample {
  std::vector<std::int32_t> source_ids;  // vocabulary ids
  std::vector<std::int32_t> target;      // pointer-space ids
  std::size_t length = 0;                // target length T
};

/// Ontology targets map to their ontology index; leaf tokens map to the copy
/// id of their first occurrence in the source.
inline EncodedExample encode_example(const Example& ex, const Vocabulary& vocab, std::size_t max_target_len,
                                     bool with_eos = false) {
  if (ex.source.empty()) throw Error(ErrorCode::EmptySource, "empty utterance");
  if (ex.target.size() > max_target_len) {
    throw Error(ErrorCode::TargetTooLong, std::to_string(ex.target.size()) + " tokens > max " +
                                              std::to_string(max_target_len));
  }
  const std::size_t gen = generation_size(vocab, with_eos);
  EncodedExample enc;
  enc.length = ex.target.size();
  enc.source_ids.reserve(ex.source.size());
  for (const auto& s : ex.source) enc.source_ids.push_back(vocab.source_id(s));
  for (const auto& t : ex.target) {
    if (is_ontology_token(t)) {
      auto idx = vocab.ontology_index(t);
      if (!idx) throw Error(ErrorCode::IndexOutOfRange, "ontology token '" + t + "' not in vocabulary");
      enc.target.push_back(static_cast<std::int32_t>(*idx));
      continue;
    }
    auto it = std::find(ex.source.begin(), ex.source.end(), t);
    if (it == ex.source.end()) throw Error(ErrorCode::UnalignableLeaf, "leaf '" + t + "' not in utterance");
    enc.target.push_back(static_cast<std::int32_t>(gen + static_cast<std::size_t>(it - ex.source.begin())));
  }
  return enc;
}

/// Vocabulary id fed to the decoder for a pointer-space token: the ontology
/// symbol itself, EOS, or the id of the copied source token.
inline std::int32_t decoder_input_id(std::int32_t pointer_id, const std::vector<std::int32_t>& source_ids,
                                     const Vocabulary& vocab, bool with_eos) {
  const auto i = static_cast<std::size_t>(pointer_id);
  if (i < vocab.ontology_size()) return vocab.ontology_id(i);
  const std::size_t gen = generation_size(vocab, with_eos);
  if (i < gen) return Vocabulary::kEos;
  if (i - gen >= source_ids.size()) throw Error(ErrorCode::IndexOutOfRange, "pointer id " + std::to_string(pointer_id));
  return source_ids[i - gen];
}

/// Maps pointer-space ids back to strings against `source`. EOS (AR only)
/// and out-of-range ids resolve to nullopt.
inline std::optional<std::string> resolve_pointer(std::int32_t id, const std::vector<std::string>& source,
                                                  const Vocabulary& vocab, bool with_eos) {
  if (id < 0) return std::nullopt;
  const auto i = static_cast<std::size_t>(id);
  if (i < vocab.ontology_size()) return vocab.ontology_token(i);
  const std::size_t gen = generation_size(vocab, with_eos);
  if (i < gen) return std::nullopt;
  if (i - gen < source.size()) return source[i - gen];
  return std::nullopt;
}

}  // namespace narsp
