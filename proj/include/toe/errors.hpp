#pragma once

#include <stdexcept>
#include <string>

namespace toe {

/// Malformed input data or a violated data invariant (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad command-line usage or configuration (CLI exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken internal contract, e.g. an update to a frozen parameter block
/// (CLI exit code 3).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

#define TOE_ASSERT(cond, msg)                                              \
  do {                                                                     \
    if (!(cond)) throw ::toe::InternalError(std::string("assertion failed: ") + (msg)); \
  } while (0)

}  // namespace toe
