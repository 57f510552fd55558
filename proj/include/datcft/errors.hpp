#pragma once
#include <stdexcept>
#include <string>

namespace datcft {

// Error families map to CLI exit codes: config 2, io 3, numeric 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class WavFault { MissingFile, Multichannel, UnsupportedEncoding, Malformed };

struct WavError : IoError {
  WavFault fault;
  WavError(WavFault f, const std::string& msg) : IoError(msg), fault(f) {}
};

}  // namespace datcft
