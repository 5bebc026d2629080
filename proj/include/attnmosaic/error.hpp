// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnmosaic {

/// Stable error categories. The CLI prints code_name() as a one-line prefix,
/// so the names must not change between releases.
enum class ErrorCode {
  kUsage,
  kNoTiles,
  kGridTooSmall,
  kConstraint,
  kIo,
  kValidation,
  kState,
  kEmptyPrompt,
  kDomain,
  kFitFailed,
};

constexpr std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage: return "E_USAGE";
    case ErrorCode::kNoTiles: return "E_NO_TILES";
    case ErrorCode::kGridTooSmall: return "E_GRID_TOO_SMALL";
    case ErrorCode::kConstraint: return "E_CONSTRAINT";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kValidation: return "E_VALIDATION";
    case ErrorCode::kState: return "E_STATE";
    case ErrorCode::kEmptyPrompt: return "E_EMPTY_PROMPT";
    case ErrorCode::kDomain: return "E_DOMAIN";
    case ErrorCode::kFitFailed: return "E_FIT_FAILED";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace attnmosaic
