#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fcn {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor/layer dimension mismatch or invalid extent.
struct ShapeError : Error {
  using Error::Error;
};

/// Parameter outside its documented domain (rate >= 1, factor < 1, ...).
struct InvalidParamError : Error {
  using Error::Error;
};

/// Label id out of range for the class count.
struct InvalidLabelError : Error {
  using Error::Error;
};

/// Stream grids cannot be brought into exact pixel-center alignment.
struct AlignmentError : Error {
  using Error::Error;
};

/// Operation called out of order (e.g. backward without forward caches).
struct StateError : Error {
  using Error::Error;
};

/// Malformed input file; carries the byte offset of the failure.
struct ParseError : Error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t at)
      : Error(msg + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

/// Stream-scale calibration failed (e.g. an all-zero stream).
struct CalibrationError : Error {
  using Error::Error;
};

/// Filesystem failure outside parse errors.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fcn
