#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stormcast {

// Fine-grained failure kinds. Each maps onto one of the CLI exit codes
// (1 usage, 2 data/format, 3 numeric).
enum class Errc {
  invalid_argument,
  shape,
  io,
  bad_magic,
  truncated,
  non_finite,
  version_mismatch,
  missing_blob,
  shape_mismatch,
  corrupt,
  parse,
  uninitialized,
  numeric,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::shape: return "shape error";
    case Errc::io: return "i/o error";
    case Errc::bad_magic: return "unrecognized format";
    case Errc::truncated: return "truncated payload";
    case Errc::non_finite: return "non-finite value";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::missing_blob: return "missing blob";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::corrupt: return "corrupt checkpoint";
    case Errc::parse: return "parse error";
    case Errc::uninitialized: return "uninitialized statistics";
    case Errc::numeric: return "numeric failure";
  }
  return "unknown";
}

constexpr int exit_code(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return 1;
    case Errc::non_finite:
    case Errc::numeric: return 3;
    default: return 2;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace stormcast
