// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cstr {

enum class ErrorKind {
  kShape,   // operand extents disagree
  kValue,   // argument outside the operation's domain
  kFormat,  // malformed file contents
  kIo,      // file could not be opened, read or written
  kConfig,  // invalid run configuration or model description
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Same kind, message prefixed with "<where>: ".
  Error with_context(const std::string& where) const {
    return Error(kind_, where + ": " + what());
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace cstr
