#pragma once

#include <stdexcept>
#include <string>

namespace decoyweaver {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scenario config does not conform to the schema. `path` is a JSON-pointer-ish
// location such as "stages[2].vulnerabilities[0].difficulty".
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class DuplicateIdError : public Error {
 public:
  using Error::Error;
};

class CompileError : public Error {
 public:
  using Error::Error;
};

class UnknownScenario : public Error {
 public:
  using Error::Error;
};

class UnknownSession : public Error {
 public:
  using Error::Error;
};

class StaleEvent : public Error {
 public:
  using Error::Error;
};

class SessionClosed : public Error {
 public:
  using Error::Error;
};

class UnknownStage : public Error {
 public:
  using Error::Error;
};

// Operator action that is well-formed JSON but semantically unusable.
class InvalidAction : public Error {
 public:
  using Error::Error;
};

class EmptyGroup : public Error {
 public:
  using Error::Error;
};

class EndpointUnreachable : public Error {
 public:
  using Error::Error;
};

class ScenarioMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptLog : public Error {
 public:
  using Error::Error;
};

class PortInUse : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A scenario bundle failed to load or validate; the message carries the report.
class InvalidBundle : public Error {
 public:
  using Error::Error;
};

}  // namespace decoyweaver
