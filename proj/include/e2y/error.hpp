// SPDX-License-Identifier: Apache-2.0
/**
 * @file   error.hpp
 * @brief  Exception hierarchy shared by every e2y module.
 *
 * The CLI maps each family onto a stable exit code: I/O and format
 * problems exit 1, validation problems exit 2, numerical aborts exit 3.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace e2y {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or stream failure.
class IoError : public Error {
public:
  using Error::Error;
};

/// File exists but is not something we can decode (bad magic, codec, version).
class UnsupportedFormatError : public IoError {
public:
  using IoError::IoError;
};

/// Payload truncated or checksum mismatch.
class CorruptionError : public IoError {
public:
  CorruptionError(const std::string &what, std::size_t byte_offset)
    : IoError(what + " (byte offset " + std::to_string(byte_offset) + ")"),
      offset_(byte_offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

/// A value violates a documented invariant or precondition.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Tensor dimensions are incompatible with a block.
class ShapeError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Out-of-range algorithm parameter (even median window, bad shift, ...).
class ParameterError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Malformed text input (CSV, config).
class ParseError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Raw signal does not span the label timeline.
class CoverageError : public ValidationError {
public:
  CoverageError(const std::string &what, std::size_t missing_steps)
    : ValidationError(what), missing_(missing_steps) {}
  std::size_t missing_steps() const noexcept { return missing_; }

private:
  std::size_t missing_;
};

/// A metric is undefined for the given input (fewer than two steps, empty set).
class MetricError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Scale step asked to stretch a zero-variance series.
class DegenerateScaleError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Training produced a non-finite loss.
class NumericalAbort : public Error {
public:
  NumericalAbort(const std::string &what, long step, std::string last_good)
    : Error(what), step_(step), last_good_(std::move(last_good)) {}
  long step() const noexcept { return step_; }
  const std::string &last_good_checkpoint() const noexcept { return last_good_; }

private:
  long step_;
  std::string last_good_;
};

} // namespace e2y
