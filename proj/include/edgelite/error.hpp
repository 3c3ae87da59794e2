#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edgelite {

enum class ErrorKind {
  size,
  shape,
  type,
  spec,
  config,
  data,
  contract,
  calibration,
  placement,
  measurement,
  capability,
  io,
  bad_magic,
  version_mismatch,
  truncated,
  checksum,
  decode,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the
/// CLI's exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) raise(kind, what);
}

}  // namespace edgelite
