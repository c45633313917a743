#pragma once

#include <stdexcept>
#include <string>

namespace semireward {

// Base of every error the library throws. kind() is a stable, machine-readable
// class name; the CLI prints it verbatim on failure.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape_error", message) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain_error", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

class UnsupportedVariant : public Error {
 public:
  explicit UnsupportedVariant(const std::string& message)
      : Error("unsupported_variant", message) {}
};

class TapeError : public Error {
 public:
  explicit TapeError(const std::string& message) : Error("tape_error", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace semireward
