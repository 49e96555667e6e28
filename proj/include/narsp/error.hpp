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
#include <stdexcept>
#include <string>
#include <string_view>

namespace narsp {

enum class ErrorCode {
  // decoupled-tree
  UnbalancedBrackets,
  EmptyTree,
  NonIntentRoot,
  MalformedLabel,
  InvalidNesting,
  OverlappingSlots,
  SpanOutOfBounds,
  // tensor-core / model-core
  ShapeMismatch,
  AllMasked,
  OddDim,
  IndexOutOfRange,
  InvalidBeta,
  LengthOutOfRange,
  EmptyInput,
  // data-io / trainer / inference
  BadRow,
  ColumnCount,
  DecoupledViolation,
  UnalignableLeaf,
  TargetTooLong,
  EmptySource,
  EmptyDataset,
  WrongVariant,
  BadConfig,
  BadCheckpoint,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnbalancedBrackets: return "UnbalancedBrackets";
    case ErrorCode::EmptyTree: return "EmptyTree";
    case ErrorCode::NonIntentRoot: return "NonIntentRoot";
    case ErrorCode::MalformedLabel: return "MalformedLabel";
    case ErrorCode::InvalidNesting: return "InvalidNesting";
    case ErrorCode::OverlappingSlots: return "OverlappingSlots";
    case ErrorCode::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::OddDim: return "OddDim";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidBeta: return "InvalidBeta";
    case ErrorCode::LengthOutOfRange: return "LengthOutOfRange";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BadRow: return "BadRow";
    case ErrorCode::ColumnCount: return "ColumnCount";
    case ErrorCode::DecoupledViolation: return "DecoupledViolation";
    case ErrorCode::UnalignableLeaf: return "UnalignableLeaf";
    case ErrorCode::TargetTooLong: return "TargetTooLong";
    case ErrorCode::EmptySource: return "EmptySource";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::WrongVariant: return "WrongVariant";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Base exception for every library failure. `code()` is stable and meant
/// for programmatic dispatch; `what()` is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Tree syntax error positioned at a token index. An index equal to the token
/// count means end-of-input.
class ParseError : public Error {
 public:
  ParseError(ErrorCode code, std::size_t token_index, const std::string& detail)
      : Error(code, "token " + std::to_string(token_index) + ": " + detail),
        token_index_(token_index) {}

  std::size_t token_index() const noexcept { return token_index_; }

 private:
  std::size_t token_index_;
};

/// A rejected TSV row. `cause()` is the underlying failure.
class BadRowError : public Error {
 public:
  BadRowError(std::size_t line_no, ErrorCode cause, const std::string& detail)
      : Error(ErrorCode::BadRow, "line " + std::to_string(line_no) + " (" +
                                     std::string(to_string(cause)) + "): " + detail),
        line_no_(line_no),
        cause_(cause) {}

  std::size_t line_no() const noexcept { return line_no_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::size_t line_no_;
  ErrorCode cause_;
};

}  // namespace narsp
