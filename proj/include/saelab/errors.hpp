// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_ERRORS_HPP
#define SAELAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace saelab {

enum class ErrorCode {
  invalid_input = 1,
  degenerate_input = 2,
  training_failure = 3,
  io_error = 4,
  stage_failure = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorCode::invalid_input, what) {}
};

class DegenerateInput : public Error {
 public:
  explicit DegenerateInput(const std::string& what)
      : Error(ErrorCode::degenerate_input, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::io_error, what) {}
};

// TrainingFailure lives in lm.hpp / sae.hpp because it carries a checkpoint.

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

}  // namespace saelab

#endif  // SAELAB_ERRORS_HPP
