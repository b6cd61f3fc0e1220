#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recad {

// Base of every error thrown by the library. `kind()` is a stable tag the CLI
// prints and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message);
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("invalid-argument", message) {}
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& message) : Error("empty-input", message) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& message) : Error("dimension-mismatch", message) {}
};

class DegenerateDimension : public Error {
 public:
  DegenerateDimension(std::size_t dim, const std::string& name);
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& message) : Error("parameter", message) {}
};

// Simulation left the admissible region (negative or unbounded populations).
class InstabilityError : public Error {
 public:
  InstabilityError(std::size_t step, const std::string& message);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class PlacementError : public Error {
 public:
  explicit PlacementError(const std::string& message) : Error("placement", message) {}
};

class InsufficientHistory : public Error {
 public:
  explicit InsufficientHistory(const std::string& message) : Error("insufficient-history", message) {}
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& message);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class SingularDesign : public Error {
 public:
  explicit SingularDesign(const std::string& message) : Error("singular-design", message) {}
};

class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& message) : Error("undefined-metric", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

}  // namespace recad
