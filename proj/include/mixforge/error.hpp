#pragma once

#include <stdexcept>
#include <string>

namespace mixforge {

// All domain failures derive from Error so callers (CLI, service) can map
// them to a single exit code or status class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Unparseable input: CSV cells, JSON documents, bundles.
class ParseError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Degenerate or insufficient data (n too small, zero variance, singular systems).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A named thing (column, feature, target) was requested but is absent.
class LookupError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixforge
