#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace disdop {

/// Base class for every failure the library reports.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A matrix row whose L2 norm is at or below the zero threshold (1e-12).
struct ZeroRow : Error {
  std::size_t row;
  explicit ZeroRow(std::size_t r)
      : Error("row " + std::to_string(r) + " has (near-)zero L2 norm"), row(r) {}
};

struct ZeroVector : Error {
  ZeroVector() : Error("vector has (near-)zero L2 norm") {}
};

/// A keep-mask row with no surviving entries.
struct EmptyRow : Error {
  std::size_t row;
  explicit EmptyRow(std::size_t r)
      : Error("keep mask row " + std::to_string(r) + " has no true entries"),
        row(r) {}
};

struct ConstantVector : Error {
  ConstantVector()
      : Error("vector is constant (standard deviation below 1e-12)") {}
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct TooFewPoints : Error {
  using Error::Error;
};

struct EmptyBatch : Error {
  EmptyBatch() : Error("instance batch is empty") {}
};

struct MissingGrid : Error {
  using Error::Error;
};

struct NonFiniteLoss : Error {
  using Error::Error;
};

struct LengthMismatch : Error {
  using Error::Error;
};

struct IoFailure : Error {
  using Error::Error;
};

struct BadMagic : Error {
  using Error::Error;
};

struct UnsupportedVersion : Error {
  using Error::Error;
};

struct UnsupportedDtype : Error {
  using Error::Error;
};

struct InvalidConfig : Error {
  using Error::Error;
};

}  // namespace disdop
