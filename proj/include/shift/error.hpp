#pragma once

#include <stdexcept>
#include <string>

namespace shift {

enum class ErrorCode {
  // corpus
  malformed_row,
  inconsistent_category,
  empty_dataset,
  incomplete_dataset,
  invalid_ratios,
  window_too_long,
  invalid_profile,
  // template
  malformed_prediction,
  // tokenizer
  empty_corpus,
  unknown_id,
  // numerics
  shape_mismatch,
  non_finite,
  not_scalar,
  sequence_too_long,
  wrong_length,
  // training
  empty_target,
  non_finite_loss,
  // eval
  vocab_mismatch,
  empty_input,
  singular_system,
  // generic
  invalid_argument,
  io_error,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace shift
