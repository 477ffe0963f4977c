#pragma once

#include <stdexcept>
#include <string>

namespace tedi {

/// Base of every error raised by the library. `code()` is a short stable
/// identifier used by the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error("shape_error", what) {}
};

class InvalidResolution : public Error {
public:
  explicit InvalidResolution(const std::string& what) : Error("invalid_resolution", what) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class LookupError : public Error {
public:
  explicit LookupError(const std::string& what) : Error("lookup_error", what) {}
};

class ParseError : public Error {
public:
  explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

class TokenizationError : public Error {
public:
  explicit TokenizationError(const std::string& what) : Error("tokenization_error", what) {}
};

class ModelNotReady : public Error {
public:
  explicit ModelNotReady(const std::string& what) : Error("model_not_ready", what) {}
};

class NoAttributeError : public Error {
public:
  explicit NoAttributeError(const std::string& what) : Error("no_attribute", what) {}
};

/// A registry file whose bytes do not match its recorded hash.
class IntegrityError : public Error {
public:
  explicit IntegrityError(const std::string& what) : Error("integrity_error", what) {}
};

/// Raised when a training or optimization loop produces a non-finite loss.
class DivergenceError : public Error {
public:
  DivergenceError(long step, const std::string& what)
      : Error("divergence", what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

}  // namespace tedi
