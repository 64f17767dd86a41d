#pragma once

#include <stdexcept>
#include <string>

namespace smcl {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes (2 for input/config problems, 3 for aborted training).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A user-supplied spec or parameter is outside its documented domain.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Dataset content cannot satisfy the request (missing files, class too small).
class DataError : public Error {
 public:
  using Error::Error;
};

// Sampler index lists are inconsistent with the distribution they serve.
class IndexCorruption : public Error {
 public:
  using Error::Error;
};

// A documented precondition on tensor shapes/values was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A loss became NaN/Inf. Training aborts; the last written checkpoint stays.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace smcl
