#pragma once

#include <stdexcept>
#include <string>

namespace graspn {

enum class Errc {
  // parsing / io
  UnknownAtom,
  UnmatchedRingBond,
  UnmatchedParenthesis,
  EmptyInput,
  UnsupportedFeature,
  IoError,
  ParseError,
  MalformedLine,
  IndexOutOfRange,
  // graph / fragmentation
  DisconnectedInput,
  EmptyGraph,
  // tensor engine
  ShapeMismatch,
  EmptySegment,
  InvalidIndex,
  // training
  InvalidRatio,
  EmptyDataset,
  ConfigMismatch,
  // checkpoint
  BadMagic,
  VersionMismatch,
  // metrics
  DegenerateLabels,
  LengthMismatch,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::UnknownAtom: return "UnknownAtom";
    case Errc::UnmatchedRingBond: return "UnmatchedRingBond";
    case Errc::UnmatchedParenthesis: return "UnmatchedParenthesis";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::UnsupportedFeature: return "UnsupportedFeature";
    case Errc::IoError: return "IoError";
    case Errc::ParseError: return "ParseError";
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::DisconnectedInput: return "DisconnectedInput";
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptySegment: return "EmptySegment";
    case Errc::InvalidIndex: return "InvalidIndex";
    case Errc::InvalidRatio: return "InvalidRatio";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::LengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace graspn
