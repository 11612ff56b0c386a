#pragma once

#include <stdexcept>
#include <string>

namespace bevlab {

// Error categories shared by the core and the C API.
enum class Status : int {
  kOk = 0,
  kDimensionMismatch = 1,
  kFormatError = 2,
  kIoError = 3,
  kValidationError = 4,
  kOutOfExtent = 5,
  kBoundsError = 6,
  kDegenerateEmbedding = 7,
  kInsufficientNegatives = 8,
  kEmptyInstance = 9,
  kEmptyBank = 10,
  kPlacementError = 11,
  kResourceGuard = 12,
  kDiverged = 13,
  kConfigError = 14,
  kGradCheckFailed = 15,
  kInternal = 16,
};

const char* status_name(Status s);

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& msg)
      : std::runtime_error(msg), status_(status) {}

  Status status() const { return status_; }

 private:
  Status status_;
};

[[noreturn]] inline void fail(Status status, const std::string& msg) {
  throw Error(status, msg);
}

}  // namespace bevlab
