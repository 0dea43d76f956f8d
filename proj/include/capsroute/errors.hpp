#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace capsroute {

/// Base for every error raised by the library. The CLI maps the concrete
/// subclass onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A config, label, or argument is outside its allowed range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace capsroute
