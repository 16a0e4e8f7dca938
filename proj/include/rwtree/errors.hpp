#pragma once

#include <stdexcept>
#include <string>

namespace rwtree {

/// Base class for every error raised by the library. The CLI maps
/// ConfigError subclasses to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InvalidRegime : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class RegimeMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class MissingTailConstant : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

class ArenaCapacity : public Error {
 public:
  using Error::Error;
};

class TruncationTooShallow : public Error {
 public:
  TruncationTooShallow(const std::string& what, double gap) : Error(what), gap_(gap) {}
  double gap() const { return gap_; }

 private:
  double gap_;
};

class TailMassTooLarge : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, double last_mean, double previous_mean)
      : Error(what), last_mean_(last_mean), previous_mean_(previous_mean) {}
  double last_mean() const { return last_mean_; }
  double previous_mean() const { return previous_mean_; }

 private:
  double last_mean_;
  double previous_mean_;
};

class DegenerateTail : public Error {
 public:
  using Error::Error;
};

class DegenerateWindow : public Error {
 public:
  using Error::Error;
};

class TooFewExceedances : public Error {
 public:
  using Error::Error;
};

}  // namespace rwtree
