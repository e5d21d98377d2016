#pragma once

#include <stdexcept>
#include <string>

namespace berag {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (bad sizes, ids, empty inputs).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A distribution had no finite mass to normalize.
class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where a finite one is required.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string node)
      : Error(what), node_(std::move(node)) {}
  explicit NumericError(const std::string& what) : Error(what) {}

  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

/// Concatenated context exceeds the configured context window.
class OutOfLengthError : public Error {
 public:
  OutOfLengthError(std::size_t length, std::size_t limit)
      : Error("context length " + std::to_string(length) + " exceeds limit " +
              std::to_string(limit)),
        length_(length),
        limit_(limit) {}

  std::size_t length() const noexcept { return length_; }
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t length_;
  std::size_t limit_;
};

/// Training diverged; carries where it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error(what + " (epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// Input file failed schema validation or a checkpoint version check.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint is malformed or was written by an incompatible format version.
class CheckpointError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

}  // namespace berag
