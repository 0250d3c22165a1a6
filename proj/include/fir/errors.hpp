#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fir {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not conform (matmul dims, elementwise mismatch, ...).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid module configuration (unsupported kernel size, head split, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Fractal geometry does not tile the feature map.
class GeometryError : public Error {
 public:
  explicit GeometryError(const std::string& msg) : Error(msg) {}
};

/// API misuse (e.g. backward from a non-scalar tensor).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

/// Mathematical domain violation (e.g. zero-norm vector in cosine gradient).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

/// Malformed checkpoint or config file. Carries the byte offset of the
/// first inconsistency when it is known.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::uint64_t offset)
      : Error(msg + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  explicit FormatError(const std::string& msg) : Error(msg), offset_(0) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training loss became non-finite. Carries the iteration index.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::int64_t iteration)
      : Error(msg + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

}  // namespace fir
