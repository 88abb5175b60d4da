#pragma once

#include <stdexcept>
#include <string>

namespace qurate {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kData = 2,
  kService = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

// Bad invocation or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

// Malformed, missing, or inconsistent input data; also numerical failures.
class DataError : public Error {
 public:
  using Error::Error;
};

// An external service (the LLM judge endpoint) could not be reached.
class ServiceError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kService; }
};

}  // namespace qurate
