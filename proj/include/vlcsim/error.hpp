#pragma once

#include <stdexcept>
#include <string>

namespace vlcsim {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A requested target cannot be reached inside the allowed domain.
class OutOfRange : public Error {
 public:
  using Error::Error;
};

// Measured voltages are inconsistent (e.g. negative signal power).
class InvalidMeasurement : public Error {
 public:
  using Error::Error;
};

// Bad sweep configuration or an I/O failure tied to one.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace vlcsim
