#pragma once

#include <stdexcept>
#include <string>

namespace falcon {

/// Base of every error the library throws. `code()` is a stable
/// machine-readable tag used by the CLI exit-code mapping and by the
/// protocol's ERROR frames.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& m) : Error("invalid_argument", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& m) : Error("dimension_mismatch", m) {}
};

}  // namespace falcon
