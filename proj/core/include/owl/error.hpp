#pragma once

#include <stdexcept>
#include <string>

namespace owl {

enum class ErrorKind {
  kInvalidArgument,
  kDimensionMismatch,
  kNumeric,
  kIntegrity,
  kIo,
  kDegenerate,
};

const char* to_string(ErrorKind kind);

// Every recoverable failure in the library is reported as an owl::Error. The
// kind drives the CLI exit code (see tools/cli.cpp).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace owl
