#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rssm {

// Base of every error raised by the library. Each subclass corresponds to
// one error category; the CLI maps categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class MissingRootError : public Error {
 public:
  using Error::Error;
};

class TaxonomyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, long step)
      : Error(what + " (epoch " + std::to_string(epoch) + ", step " +
              std::to_string(step) + ")"),
        epoch_(epoch),
        step_(step) {}
  int epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  int epoch_;
  long step_;
};

// Malformed bytes in a checkpoint, NPY or ZIP stream. Carries the byte
// offset at which parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)),
        detail_(what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  // Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class GridError : public Error {
 public:
  using Error::Error;
};

class FilterError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace rssm
