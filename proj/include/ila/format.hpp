// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef ILA_FORMAT_HPP_
#define ILA_FORMAT_HPP_

#include <charconv>
#include <string>

namespace ila {

// Shortest decimal text that parses back to exactly `v`.
inline std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace ila

#endif  // ILA_FORMAT_HPP_
