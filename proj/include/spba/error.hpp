#pragma once

#include <stdexcept>
#include <string>

namespace spba {

/// Failure category. The CLI maps these onto process exit codes.
enum class ErrorKind {
  config,   // invalid or inconsistent configuration (exit 2)
  data,     // missing, malformed or insufficient data (exit 3)
  runtime,  // anything else (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void config_error(const std::string& what) {
  throw Error(ErrorKind::config, what);
}

[[noreturn]] inline void data_error(const std::string& what) {
  throw Error(ErrorKind::data, what);
}

[[noreturn]] inline void runtime_error(const std::string& what) {
  throw Error(ErrorKind::runtime, what);
}

}  // namespace spba
