#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace probfed {

// Every failure the library reports carries one of these codes so callers
// (and the CLI exit-code mapping) can branch without parsing messages.
enum class Errc {
  kInvalidArgument,
  kAllZero,
  kLengthMismatch,
  kEmptyMatrix,
  kSimplexViolation,
  kBadMagic,
  kBadVersion,
  kBadKind,
  kTruncated,
  kMalformed,
  kOversize,
  kBrokerUnavailable,
  kInvalidSpec,
  kDivergence,
  kDimensionMismatch,
  kShapeMismatch,
  kInconsistentC,
  kDuplicateClient,
  kEmptyAlignment,
  kSingleClass,
  kOrderMismatch,
  kBadCut,
  kEmptyContext,
  kSampleMismatch,
  kInsufficientContributions,
  kFutureRound,
  kNotEligible,
  kScenarioMismatch,
  kParseError,
  kValidationError,
  kMissingArtifact,
  kIo,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace probfed
