#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace halludetect {

enum class ErrorCode {
  kEmptyQuestion,
  kEmptyField,
  kBackendUnreachable,
  kTimeout,
  kMissingLogprobs,
  kInvalidSampling,
  kScorerUnreachable,
  kMalformedScorerReply,
  kNoTokens,
  kNoSamples,
  kEmptyInput,
  kTooFewScores,
  kTooFewSamples,
  kInvalidPartition,
  kDegenerateLabels,
  kMissingLabels,
  kParseError,
  kMissingField,
  kUnknownId,
  kMissingGeneration,
  kInvalidConfig,
  kInvalidArgument,
  kIo,
};

std::string_view ErrorCodeName(ErrorCode code);

// Every failure in the library surfaces as this exception; callers switch on
// code() rather than parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

  // Same code, message prefixed with `context`.
  Error WithContext(const std::string& context) const { return Error(code_, context + ": " + detail_); }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace halludetect
