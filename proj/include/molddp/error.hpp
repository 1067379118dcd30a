#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace molddp {

enum class ErrorKind {
  // smiles
  EmptyInput,
  UnbalancedBranch,
  UnclosedRing,
  UnknownElement,
  MalformedCharge,
  MalformedBracketAtom,
  SyntaxError,
  Unsupported,
  // graphenc
  EmptyDataset,
  TooFewSamples,
  // gpack
  PathExists,
  InvalidShardConfig,
  SchemaMismatch,
  MissingSubfile,
  CorruptIndex,
  BadMagic,
  VersionUnsupported,
  IndexOutOfRange,
  // dataload
  SourceUnreadable,
  InconsistentFeatureWidth,
  EmptyBatch,
  // gcnn
  ShapeMismatch,
  EmptyGraphSlot,
  LengthMismatch,
  // ddp
  TransportFailure,
  Timeout,
  // generic
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::UnbalancedBranch: return "UnbalancedBranch";
    case ErrorKind::UnclosedRing: return "UnclosedRing";
    case ErrorKind::UnknownElement: return "UnknownElement";
    case ErrorKind::MalformedCharge: return "MalformedCharge";
    case ErrorKind::MalformedBracketAtom: return "MalformedBracketAtom";
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::Unsupported: return "Unsupported";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::PathExists: return "PathExists";
    case ErrorKind::InvalidShardConfig: return "InvalidShardConfig";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::MissingSubfile: return "MissingSubfile";
    case ErrorKind::CorruptIndex: return "CorruptIndex";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::SourceUnreadable: return "SourceUnreadable";
    case ErrorKind::InconsistentFeatureWidth: return "InconsistentFeatureWidth";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyGraphSlot: return "EmptyGraphSlot";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::TransportFailure: return "TransportFailure";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace molddp
