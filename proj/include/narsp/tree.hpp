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
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "narsp/error.hpp"

namespace narsp {

/// Splits on ASCII whitespace; case is preserved.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

enum class OntologyKind { IntentOpen, SlotOpen, Close };

struct OntologyToken {
  OntologyKind kind;
  std::string label;  // "IN:..." or "SL:..."; empty for Close

  std::string text() const { return kind == OntologyKind::Close ? "]" : "[" + label; }
  bool operator==(const OntologyToken&) const = default;
};

inline bool is_valid_label(std::string_view label) {
  if (label.size() <= 3) return false;
  if (label.substr(0, 3) != "IN:" && label.substr(0, 3) != "SL:") return false;
  return label.find_first_of("[]") == std::string_view::npos;
}

/// Classifies a serialized token. Returns nullopt for leaf text; throws
/// MalformedLabel for a "[" token that is not "[IN:X" or "[SL:X".
inline std::optional<OntologyToken> classify_token(std::string_view token, std::size_t index = 0) {
  if (token == "]") return OntologyToken{OntologyKind::Close, ""};
  if (token.empty() || token.front() != '[') return std::nullopt;
  const std::string_view label = token.substr(1);
  if (!is_valid_label(label)) {
    throw ParseError(ErrorCode::MalformedLabel, index, "bad open token '" + std::string(token) + "'");
  }
  return OntologyToken{label.substr(0, 3) == "IN:" ? OntologyKind::IntentOpen : OntologyKind::SlotOpen,
                       std::string(label)};
}

inline bool is_ontology_token(std::string_view token) {
  return token == "]" || (!token.empty() && token.front() == '[');
}

enum class NodeKind { Intent, Slot, Leaf };

/// Intent and slot nodes carry their label ("IN:X"/"SL:Y"); leaf nodes
/// carry the copied source token in `label` and have no children.
struct ParseNode {
  NodeKind kind = NodeKind::Intent;
  std::string label;
  std::vector<ParseNode> children;

  static ParseNode leaf(std::string token) { return {NodeKind::Leaf, std::move(token), {}}; }
  static ParseNode intent(std::string label, std::vector<ParseNode> children = {}) {
    return {NodeKind::Intent, std::move(label), std::move(children)};
  }
  static ParseNode slot(std::string label, std::vector<ParseNode> children = {}) {
    return {NodeKind::Slot, std::move(label), std::move(children)};
  }

  bool is_leaf() const { return kind == NodeKind::Leaf; }
  bool operator==(const ParseNode&) const = default;
};

struct ParseTree {
  ParseNode root;
  std::optional<std::vector<std::string>> source_ref;

  bool operator==(const ParseTree& other) const { return root == other.root; }
};

namespace detail {

inline void serialize_into(const ParseNode& node, std::vector<std::string>& out) {
  if (node.is_leaf()) {
    out.push_back(node.label);
    return;
  }
  out.push_back("[" + node.label);
  for (const auto& child : node.children) serialize_into(child, out);
  out.push_back("]");
}

}  // namespace detail

inline std::vector<std::string> serialize_tokens(const ParseTree& tree) {
  std::vector<std::string> out;
  detail::serialize_into(tree.root, out);
  return out;
}

inline std::string serialize(const ParseTree& tree) { return join(serialize_tokens(tree)); }

/// Parses whitespace-tokenized bracket notation. Intents hold slots and
/// leaves; slots hold leaves and intents; the root must be an intent.
inline ParseTree parse_tokens(const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw ParseError(ErrorCode::EmptyTree, 0, "no tokens");
  std::vector<ParseNode> stack;
  std::optional<ParseNode> root;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (root) {
      throw ParseError(ErrorCode::UnbalancedBrackets, i, "content after the root closed");
    }
    const auto onto = classify_token(tok, i);
    if (!onto) {
      if (stack.empty()) throw ParseError(ErrorCode::NonIntentRoot, i, "leaf '" + tok + "' outside a node");
      stack.back().children.push_back(ParseNode::leaf(tok));
      continue;
    }
    switch (onto->kind) {
      case OntologyKind::IntentOpen:
        if (!stack.empty() && stack.back().kind != NodeKind::Slot) {
          throw ParseError(ErrorCode::InvalidNesting, i, "intent directly inside intent");
        }
        stack.push_back(ParseNode::intent(onto->label));
        break;
      case OntologyKind::SlotOpen:
        if (stack.empty()) throw ParseError(ErrorCode::NonIntentRoot, i, "root is a slot");
        if (stack.back().kind != NodeKind::Intent) {
          throw ParseError(ErrorCode::InvalidNesting, i, "slot directly inside slot");
        }
        stack.push_back(ParseNode::slot(onto->label));
        break;
      case OntologyKind::Close: {
        if (stack.empty()) throw ParseError(ErrorCode::UnbalancedBrackets, i, "unmatched ']'");
        ParseNode done = std::move(stack.back());
        stack.pop_back();
        if (stack.empty()) {
          root = std::move(done);
        } else {
          stack.back().children.push_back(std::move(done));
        }
        break;
      }
    }
  }
  if (!stack.empty()) {
    throw ParseError(ErrorCode::UnbalancedBrackets, tokens.size(),
                     std::to_string(stack.size()) + " unclosed node(s) at end of input");
  }
  return ParseTree{std::move(*root), std::nullopt};
}

inline ParseTree parse_serialized(std::string_view text) { return parse_tokens(tokenize(text)); }

/// Leaf tokens in document order.
inline std::vector<std::string> leaf_tokens(const ParseNode& node) {
  std::vector<std::string> out;
  auto walk = [&out](const auto& self, const ParseNode& n) -> void {
    if (n.is_leaf()) {
      out.push_back(n.label);
      return;
    }
    for (const auto& c : n.children) self(self, c);
  };
  walk(walk, node);
  return out;
}

struct ValidationReport {
  std::vector<std::string> missing;  // leaf occurrences absent from the source
  bool ok() const { return missing.empty(); }
};

inline ValidationReport validate_against_source(const ParseTree& tree,
                                                const std::vector<std::string>& source) {
  ValidationReport report;
  for (auto& tok : leaf_tokens(tree.root)) {
    if (std::find(source.begin(), source.end(), tok) == source.end()) report.missing.push_back(tok);
  }
  return report;
}

/// Token-level comparison; insensitive to whitespace runs, case-sensitive.
inline bool exact_match(std::string_view pred, std::string_view gold) {
  return tokenize(pred) == tokenize(gold);
}

struct SlotSpan {
  std::string label;   // "SL:..."
  std::size_t start;   // first token, inclusive
  std::size_t end;     // one past the last token
};

/// Builds the depth-2 decoupled tree of a flat intent/slot annotation.
/// Spans are half-open token ranges; children follow source order.
inline ParseTree from_flat(const std::string& intent, std::vector<SlotSpan> slots,
                           const std::vector<std::string>& tokens) {
  if (!is_valid_label(intent) || intent.substr(0, 3) != "IN:") {
    throw ParseError(ErrorCode::MalformedLabel, 0, "intent label '" + intent + "'");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    if (!is_valid_label(s.label) || s.label.substr(0, 3) != "SL:") {
      throw ParseError(ErrorCode::MalformedLabel, i, "slot label '" + s.label + "'");
    }
    if (s.start >= s.end || s.end > tokens.size()) {
      throw Error(ErrorCode::SpanOutOfBounds, s.label + " [" + std::to_string(s.start) + "," +
                                                  std::to_string(s.end) + ") over " +
                                                  std::to_string(tokens.size()) + " tokens");
    }
  }
  std::stable_sort(slots.begin(), slots.end(),
                   [](const SlotSpan& a, const SlotSpan& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < slots.size(); ++i) {
    if (slots[i].start < slots[i - 1].end) {
      throw Error(ErrorCode::OverlappingSlots, slots[i - 1].label + " and " + slots[i].label);
    }
  }
  ParseNode root = ParseNode::intent(intent);
  for (const auto& s : slots) {
    ParseNode slot = ParseNode::slot(s.label);
    for (std::size_t t = s.start; t < s.end; ++t) slot.children.push_back(ParseNode::leaf(tokens[t]));
    root.children.push_back(std::move(slot));
  }
  return ParseTree{std::move(root), tokens};
}

struct TreeStats {
  std::size_t depth = 0;         // intent/slot nesting depth; root alone is 1
  std::size_t node_count = 0;    // intent + slot nodes
  std::size_t leaf_count = 0;
  std::size_t token_length = 0;  // serialized token count
};

inline TreeStats tree_stats(const ParseTree& tree) {
  TreeStats stats;
  auto walk = [&stats](const auto& self, const ParseNode& n, std::size_t depth) -> void {
    if (n.is_leaf()) {
      ++stats.leaf_count;
      ++stats.token_length;
      return;
    }
    ++stats.node_count;
    stats.token_length += 2;
    stats.depth = std::max(stats.depth, depth);
    for (const auto& c : n.children) self(self, c, depth + 1);
  };
  walk(walk, tree.root, 1);
  return stats;
}

}  // namespace narsp
