#pragma once

#include <stdexcept>
#include <string>

namespace miscalib {

// Base of every error raised by the library. The CLI maps each subclass to a
// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

class BehindCamera : public Error {
 public:
  using Error::Error;
};

class NoValidRegion : public Error {
 public:
  using Error::Error;
};

class SizeMismatch : public Error {
 public:
  using Error::Error;
};

class TooFewValidPoints : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class MissingKey : public ParseError {
 public:
  explicit MissingKey(std::string key)
      : ParseError("missing key: " + key), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class NonPositiveFocal : public ParseError {
 public:
  using ParseError::ParseError;
};

class VersionMismatch : public ParseError {
 public:
  using ParseError::ParseError;
};

class EmptyInputDir : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace miscalib
