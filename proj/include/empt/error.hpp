#pragma once

#include <stdexcept>
#include <string>

namespace empt {

// Base of every error thrown by this library. `kind()` is a short stable tag
// used by the CLI for its one-line machine-parsable error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct InvalidValue : Error {
  explicit InvalidValue(const std::string& w) : Error("invalid-value", w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};
struct ContextOverflow : Error {
  explicit ContextOverflow(const std::string& w) : Error("context-overflow", w) {}
};
struct TrainingHalted : Error {
  explicit TrainingHalted(const std::string& w) : Error("training-halted", w) {}
};

}  // namespace empt
