// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shortv {

enum class ErrorKind {
  kShape,        // dimension mismatch between operands
  kInput,        // out-of-range index, empty set, malformed argument
  kNumeric,      // non-finite intermediate
  kDegenerate,   // mathematically undefined input (zero-norm vector)
  kSchedule,     // pruning schedule violates a model invariant
  kState,        // operation called in the wrong state
  kAccounting,   // analytical and instrumented FLOPs disagree
  kIo,           // unreadable or malformed file
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kInput: return "input_error";
    case ErrorKind::kNumeric: return "numeric_error";
    case ErrorKind::kDegenerate: return "degenerate_input_error";
    case ErrorKind::kSchedule: return "invalid_schedule_error";
    case ErrorKind::kState: return "state_error";
    case ErrorKind::kAccounting: return "accounting_error";
    case ErrorKind::kIo: return "io_error";
  }
  return "unknown_error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace shortv
