#pragma once

#include <stdexcept>
#include <string>

namespace coexist {

// Invalid or inconsistent configuration (scenario values, CLI arguments).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical reduction could not produce a meaningful answer.
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tag-file or scenario-file decoding failure. `location` is a line number
// for text inputs and a byte offset for binary inputs.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : std::runtime_error(what), location_(location) {}
  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// The classical time-transfer link does not close its power budget.
class LinkDownError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coexist
