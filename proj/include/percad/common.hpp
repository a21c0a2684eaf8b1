#pragma once

#include <stdexcept>
#include <string>

namespace percad {

inline constexpr const char* kToolVersion = "0.1.0";

// Base error for all library failures. CLI maps Error -> exit 1,
// ConfigError/UsageError -> exit 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericsError : Error {
  using Error::Error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

}  // namespace percad

#define PERCAD_CHECK(cond, msg)                                  \
  do {                                                           \
    if (!(cond)) throw ::percad::Error(std::string(msg));        \
  } while (0)

#define PERCAD_CHECK_ARG(cond, msg)                              \
  do {                                                           \
    if (!(cond)) throw ::percad::ConfigError(std::string(msg));  \
  } while (0)
