#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace guide {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tag-markup error; offset is the byte position in the raw input.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(message + " at byte " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A statistic that is undefined for the given input (single-class AUC,
// zero-variance correlation, log of zero influence).
class UndefinedStatistic : public Error {
 public:
  using Error::Error;
};

}  // namespace guide
