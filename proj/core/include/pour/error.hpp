#pragma once

#include <stdexcept>
#include <string>

namespace pour {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (bad magic, bad header field, truncated payload).
class FormatError : public Error {
  public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Operand extents do not satisfy an operation's shape contract.
class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A precondition other than shape was violated (empty atlas, non-scalar
// loss, degenerate input, ...).
class ContractError : public Error {
  public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure (unreadable / unwritable path).
class IoError : public Error {
  public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace pour
