#pragma once

#include <stdexcept>
#include <string>

namespace moemil {

// All library errors derive from Error so callers can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition or misuse of an API (exit code 2 in the CLI).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Inconsistent patch hierarchy (orphans, duplicate paths, bad levels).
class StructureError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Config or checkpoint written by an incompatible version.
class VersionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN/Inf where finite values are required (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable/unwritable files (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk container (exit code 3).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace moemil
