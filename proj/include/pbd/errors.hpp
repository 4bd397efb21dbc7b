#pragma once

#include <stdexcept>
#include <string>

namespace pbd {

enum class ErrorKind {
  DimensionMismatch,
  EmptyMeasurement,
  NonFiniteOutput,
  NonFiniteLoss,
  BadMagic,
  BadCrc,
  DimChainMismatch,
  UnknownLayerKind,
  BadSize,
  BadLength,
  KernelTooLarge,
  TooSmall,
  InvalidArgument,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyMeasurement: return "EmptyMeasurement";
    case ErrorKind::NonFiniteOutput: return "NonFiniteOutput";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::BadCrc: return "BadCrc";
    case ErrorKind::DimChainMismatch: return "DimChainMismatch";
    case ErrorKind::UnknownLayerKind: return "UnknownLayerKind";
    case ErrorKind::BadSize: return "BadSize";
    case ErrorKind::BadLength: return "BadLength";
    case ErrorKind::KernelTooLarge: return "KernelTooLarge";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Library-wide exception; `kind()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pbd
