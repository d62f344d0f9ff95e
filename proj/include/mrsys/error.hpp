#pragma once

#include <stdexcept>
#include <string>

namespace mrsys {

// Failure classes map one-to-one onto the C API status codes and CLI exit codes.
enum class ErrorKind {
  Validation = 1,  // bad input, violated precondition, malformed file
  Runtime = 2,     // divergence, I/O failure, internal inconsistency
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace mrsys
