#pragma once

#include <stdexcept>
#include <string>

namespace scenewatch {

// Base class for all domain errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingEgoError : Error {
  using Error::Error;
};

struct LengthMismatchError : Error {
  using Error::Error;
};

struct EmptyInputError : Error {
  using Error::Error;
};

struct MalformedRowError : Error {
  MalformedRowError(std::size_t line, const std::string& what)
      : Error("malformed row at line " + std::to_string(line) + ": " + what),
        line_number(line) {}
  std::size_t line_number;
};

struct NonMonotoneFramesError : Error {
  explicit NonMonotoneFramesError(const std::string& vehicle)
      : Error("non-monotone frame ids for vehicle " + vehicle), vehicle_id(vehicle) {}
  std::string vehicle_id;
};

struct ShapeMismatchError : Error {
  using Error::Error;
};

struct NonFiniteLossError : Error {
  using Error::Error;
};

struct EmptyResidualsError : Error {
  using Error::Error;
};

struct DegenerateInputError : Error {
  using Error::Error;
};

struct SceneSetMismatchError : Error {
  using Error::Error;
};

struct TooFewPointsError : Error {
  using Error::Error;
};

struct SingleClusterError : Error {
  using Error::Error;
};

struct IncompleteRunError : Error {
  using Error::Error;
};

struct StageFailureError : Error {
  StageFailureError(const std::string& stage_name, const std::string& cause)
      : Error("stage '" + stage_name + "' failed: " + cause), stage(stage_name) {}
  std::string stage;
};

}  // namespace scenewatch
