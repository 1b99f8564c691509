#pragma once

#include <stdexcept>
#include <string>

namespace eagle {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable on-disk artifacts (bad magic, truncation,
// non-finite payload values, schema/version mismatch).
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Caller violated an operation precondition.
struct ArgumentError : Error {
  using Error::Error;
};

// Chat endpoint failures: unreachable after retries, non-2xx status,
// empty completion.
struct EndpointError : Error {
  using Error::Error;
};

}  // namespace eagle
