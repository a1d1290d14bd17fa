#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pillsort {

enum class Errc {
  ChannelMismatch,
  DimensionMismatch,
  InvalidElement,
  InvalidNdc,
  UnknownImage,
  InvalidFoldCount,
  InvalidFraction,
  NoForeground,
  PlacementFailed,
  InvalidAugment,
  EmptyResult,
  MissingSide,
  MissingGroundTruth,
  InvalidBbox,
  ShapeMismatch,
  MissingClass,
  NotADistribution,
  EmptyEnsemble,
  InvalidK,
  UnknownClass,
  ConflictingFlag,
  InvalidThreshold,
  MissingPrediction,
  Undefined,
  EmptyConfusion,
  SetMismatch,
  ParseError,
  Io,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidElement: return "InvalidElement";
    case Errc::InvalidNdc: return "InvalidNdc";
    case Errc::UnknownImage: return "UnknownImage";
    case Errc::InvalidFoldCount: return "InvalidFoldCount";
    case Errc::InvalidFraction: return "InvalidFraction";
    case Errc::NoForeground: return "NoForeground";
    case Errc::PlacementFailed: return "PlacementFailed";
    case Errc::InvalidAugment: return "InvalidAugment";
    case Errc::EmptyResult: return "EmptyResult";
    case Errc::MissingSide: return "MissingSide";
    case Errc::MissingGroundTruth: return "MissingGroundTruth";
    case Errc::InvalidBbox: return "InvalidBbox";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingClass: return "MissingClass";
    case Errc::NotADistribution: return "NotADistribution";
    case Errc::EmptyEnsemble: return "EmptyEnsemble";
    case Errc::InvalidK: return "InvalidK";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::ConflictingFlag: return "ConflictingFlag";
    case Errc::InvalidThreshold: return "InvalidThreshold";
    case Errc::MissingPrediction: return "MissingPrediction";
    case Errc::Undefined: return "Undefined";
    case Errc::EmptyConfusion: return "EmptyConfusion";
    case Errc::SetMismatch: return "SetMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace pillsort
