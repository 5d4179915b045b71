// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dvnc {

enum class ErrorKind {
  config,             // bad configuration or usage
  dimension,          // shape mismatch
  numeric,            // NaN/Inf or numeric failure
  contract,           // precondition violated
  insufficient_data,  // not enough samples for the requested operation
  io,                 // file or format problem
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace dvnc
