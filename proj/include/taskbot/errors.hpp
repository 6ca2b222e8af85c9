// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace taskbot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required, or a diverged loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Violated calling contract (non-scalar loss, empty utterance, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unknown slot or slot value.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Corpus structure violation, e.g. a KB result without an API call.
class StructureError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// A template placeholder that cannot be filled.
class LexicalisationError : public Error {
 public:
  using Error::Error;
};

}  // namespace taskbot
