#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unlearn {

enum class ErrorKind {
  kShape,
  kLength,
  kVocabulary,
  kInput,
  kConfig,
  kParse,
  kSchema,
  kAlignment,
  kDomain,
  kNumeric,
  kProvenance,
  kCompatibility,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for the CLI: 2 config, 3 data, 4 numeric, 5 incompatibility.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Thrown for a bad or unknown configuration key; carries the key name.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(ErrorKind::kConfig, message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Thrown by the dataset loaders; carries the 1-based line number (0 if unknown).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::kParse, message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Thrown when training or evaluation hits a NaN/Inf; step is -1 outside a loop.
class NumericError : public Error {
 public:
  NumericError(long step, const std::string& message)
      : Error(ErrorKind::kNumeric, message), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace unlearn
