// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef ILA_ERRORS_HPP_
#define ILA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ila {

// Broad failure classes; the CLI maps each one to an exit code.
enum class ErrorKind {
  kDimension,
  kIndex,
  kContract,
  kConfig,
  kLookup,
  kComparison,
  kNumeric,
  kNotStable,
  kIo,
  kChecksum,
  kVersion,
  kTruncated,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define ILA_DEFINE_ERROR(Name, Kind)                 \
  class Name : public Error {                        \
   public:                                           \
    explicit Name(const std::string& what)           \
        : Error(ErrorKind::Kind, what) {}            \
  };

ILA_DEFINE_ERROR(DimensionError, kDimension)
ILA_DEFINE_ERROR(IndexError, kIndex)
ILA_DEFINE_ERROR(ContractError, kContract)
ILA_DEFINE_ERROR(ConfigError, kConfig)
ILA_DEFINE_ERROR(LookupError, kLookup)
ILA_DEFINE_ERROR(ComparisonError, kComparison)
ILA_DEFINE_ERROR(NumericError, kNumeric)
ILA_DEFINE_ERROR(IoError, kIo)
ILA_DEFINE_ERROR(ChecksumError, kChecksum)
ILA_DEFINE_ERROR(VersionError, kVersion)
ILA_DEFINE_ERROR(TruncatedError, kTruncated)

#undef ILA_DEFINE_ERROR

// Exit codes: 0 success, 2 usage, 3 contract/config, 4 numeric, 5 I/O.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNumeric:
    case ErrorKind::kNotStable:
      return 4;
    case ErrorKind::kIo:
    case ErrorKind::kChecksum:
    case ErrorKind::kVersion:
    case ErrorKind::kTruncated:
      return 5;
    default:
      return 3;
  }
}

}  // namespace ila

#endif  // ILA_ERRORS_HPP_
