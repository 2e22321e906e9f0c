#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnscope {

/// Machine-readable error categories. The string form is part of the API
/// wire format (see error_code_name).
enum class ErrorCode {
  shape_mismatch,
  non_finite,
  empty_input,
  vocab_capability,
  invalid_id,
  invalid_vocab,
  capacity_exceeded,
  checkpoint_corrupt,
  unsupported_operation,
  invalid_config,
  io_failure,
  version_mismatch,
  tensor_shape_mismatch,
  truncated_blob,
  unknown_tensor,
  missing_tensor,
  manifest_invalid,
  config_invariant,
  out_of_range,
  filter_capability,
  invalid_filter,
  insufficient_length,
  masked_candidate,
  invalid_argument,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::vocab_capability: return "vocab_capability";
    case ErrorCode::invalid_id: return "invalid_id";
    case ErrorCode::invalid_vocab: return "invalid_vocab";
    case ErrorCode::capacity_exceeded: return "capacity_exceeded";
    case ErrorCode::checkpoint_corrupt: return "checkpoint_corrupt";
    case ErrorCode::unsupported_operation: return "unsupported_operation";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::io_failure: return "io_failure";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::tensor_shape_mismatch: return "tensor_shape_mismatch";
    case ErrorCode::truncated_blob: return "truncated_blob";
    case ErrorCode::unknown_tensor: return "unknown_tensor";
    case ErrorCode::missing_tensor: return "missing_tensor";
    case ErrorCode::manifest_invalid: return "manifest_invalid";
    case ErrorCode::config_invariant: return "config_invariant";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::filter_capability: return "filter_capability";
    case ErrorCode::invalid_filter: return "invalid_filter";
    case ErrorCode::insufficient_length: return "insufficient_length";
    case ErrorCode::masked_candidate: return "masked_candidate";
    case ErrorCode::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message)
      : Error(ErrorCode::shape_mismatch, message) {}
};

class TokenizerError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

/// Raised by checkpoint load/save. Each failure mode has its own code so a
/// caller can tell a truncated blob from a bad manifest.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ViewError : public Error {
 public:
  using Error::Error;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnscope
