#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ubnn {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kValidation,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kTrailingData,
  kSchema,
  kMalformedForest,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated input";
    case ErrorCode::kTrailingData: return "trailing data";
    case ErrorCode::kSchema: return "schema violation";
    case ErrorCode::kMalformedForest: return "malformed forest";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown error";
}

/// Every failure in the library surfaces as this exception. `layer()` is set
/// when the failure can be attributed to one entry of a layer list.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::optional<std::size_t> layer = std::nullopt)
      : std::runtime_error(format(code, what, layer)), code_(code), layer_(layer) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> layer() const noexcept { return layer_; }

 private:
  static std::string format(ErrorCode code, const std::string& what,
                            std::optional<std::size_t> layer) {
    std::string out = to_string(code);
    if (layer) out += " (layer " + std::to_string(*layer) + ")";
    out += ": ";
    out += what;
    return out;
  }

  ErrorCode code_;
  std::optional<std::size_t> layer_;
};

}  // namespace ubnn
