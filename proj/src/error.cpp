#include "edgelite/error.hpp"

namespace edgelite {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::size: return "size error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::type: return "type error";
    case ErrorKind::spec: return "spec error";
    case ErrorKind::config: return "config error";
    case ErrorKind::data: return "data error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::calibration: return "calibration error";
    case ErrorKind::placement: return "placement error";
    case ErrorKind::measurement: return "measurement error";
    case ErrorKind::capability: return "capability error";
    case ErrorKind::io: return "io error";
    case ErrorKind::bad_magic: return "bad magic";
    case ErrorKind::version_mismatch: return "version mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::checksum: return "checksum error";
    case ErrorKind::decode: return "decode error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void raise(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace edgelite
