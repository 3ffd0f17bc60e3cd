#pragma once

#include <stdexcept>
#include <string>

namespace dtfl {

// Shape, range or precondition violation in caller-supplied values.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training produced a NaN/Inf. The message carries round/client/batch context
// when it is raised from the engine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV ingestion failure (missing file, ragged row, bad cell, non-binary label).
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configuration failure. `field` is a dotted path such as
// "fl.client_fraction".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace dtfl
