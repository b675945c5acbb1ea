#pragma once

#include <stdexcept>
#include <string>

namespace fluxtalk {

// Broad error classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kDomain,          // argument outside the mathematical domain
  kRange,           // target outside an attainable band
  kDimension,       // vector/matrix size mismatch
  kSingular,        // matrix not invertible
  kPole,            // evaluation too close to a pole
  kDegenerate,      // degenerate parameters (d = 1, Omega = 0, ...)
  kUnknownLabel,    // label not present in a device
  kPrecondition,    // input data does not satisfy an operation's precondition
  kFit,             // nonlinear fit did not converge
  kNoSignal,        // no usable signal in a scan / trace
  kIdentifiability, // data cannot constrain the requested parameters
  kConfig,          // malformed configuration
  kIo,              // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kDimension: return "dimension mismatch";
    case ErrorKind::kSingular: return "singular matrix";
    case ErrorKind::kPole: return "pole";
    case ErrorKind::kDegenerate: return "degenerate parameters";
    case ErrorKind::kUnknownLabel: return "unknown label";
    case ErrorKind::kPrecondition: return "precondition violated";
    case ErrorKind::kFit: return "fit failure";
    case ErrorKind::kNoSignal: return "no signal";
    case ErrorKind::kIdentifiability: return "not identifiable";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kIo: return "I/O error";
  }
  return "error";
}

}  // namespace fluxtalk
