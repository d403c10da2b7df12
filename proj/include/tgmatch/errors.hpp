#pragma once

#include <stdexcept>
#include <string>

namespace tgmatch {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor or clip shapes disagree with what an operation expects.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// An operation received a clip of the wrong modality (e.g. TG where RGB is required).
class ModalityError : public Error {
public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed files, missing inputs, checkpoint mismatches.
class IoError : public Error {
public:
  using Error::Error;
};

/// A non-finite loss term during optimization. `term()` names the offender.
class TrainingFault : public Error {
public:
  TrainingFault(std::string term, const std::string& what)
      : Error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

private:
  std::string term_;
};

}  // namespace tgmatch
