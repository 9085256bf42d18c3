#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psae {

enum class ErrorCode {
  // midi
  MalformedHeader,
  UnsupportedFormat,
  TruncatedChunk,
  UnmatchedNoteOn,
  NoNoteEvents,
  PolyphonyDetected,
  // quantize
  NoteTooShort,
  SequenceTooLong,
  EmptySequence,
  UnsupportedMeter,
  // augment
  NoPitchTokens,
  IllegalShift,
  TruncationTooLarge,
  InvalidPolicy,
  // nn / model
  ShapeMismatch,
  EmptyBatch,
  NoRecordedGraph,
  InvalidConfig,
  UnknownToken,
  NoEligiblePositions,
  NonFiniteLoss,
  // scoring
  NoScoreablePositions,
  SingleClassOnly,
  ManifestMalformed,
  // persistence / cli
  ChecksumMismatch,
  BadCheckpoint,
  BadCorpusFile,
  NoInputs,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::TruncatedChunk: return "TruncatedChunk";
    case ErrorCode::UnmatchedNoteOn: return "UnmatchedNoteOn";
    case ErrorCode::NoNoteEvents: return "NoNoteEvents";
    case ErrorCode::PolyphonyDetected: return "PolyphonyDetected";
    case ErrorCode::NoteTooShort: return "NoteTooShort";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::UnsupportedMeter: return "UnsupportedMeter";
    case ErrorCode::NoPitchTokens: return "NoPitchTokens";
    case ErrorCode::IllegalShift: return "IllegalShift";
    case ErrorCode::TruncationTooLarge: return "TruncationTooLarge";
    case ErrorCode::InvalidPolicy: return "InvalidPolicy";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NoRecordedGraph: return "NoRecordedGraph";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::NoEligiblePositions: return "NoEligiblePositions";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NoScoreablePositions: return "NoScoreablePositions";
    case ErrorCode::SingleClassOnly: return "SingleClassOnly";
    case ErrorCode::ManifestMalformed: return "ManifestMalformed";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::BadCorpusFile: return "BadCorpusFile";
    case ErrorCode::NoInputs: return "NoInputs";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` is stable; `what()` is
/// "<CodeName>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace psae
