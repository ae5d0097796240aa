#pragma once

#include <stdexcept>
#include <string>

namespace splatfuse {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// se3_log called on a rotation whose angle is too close to pi.
struct AngleNearPiError : Error {
  using Error::Error;
};

/// Mask-based segmentation selected no primitives.
struct EmptySelectionError : Error {
  using Error::Error;
};

/// ICP correspondences are rank-deficient (or too few points).
struct DegenerateGeometryError : Error {
  using Error::Error;
};

/// Pose refinement target subset projects to no pixel in any view.
struct NoVisiblePixelsError : Error {
  using Error::Error;
};

/// Region descriptor requested over an empty mask.
struct EmptyMaskError : Error {
  using Error::Error;
};

/// Voxel grids with different origins or voxel sizes combined.
struct GridFrameMismatchError : Error {
  using Error::Error;
};

/// Image dimensions disagree where they must match.
struct DimensionMismatchError : Error {
  using Error::Error;
};

/// Malformed input file; message carries line/field diagnostics.
struct ParseError : Error {
  using Error::Error;
};

/// novel_state / replay asked about an object id that was never registered.
struct UnknownObjectError : Error {
  using Error::Error;
};

/// Error from one stage of the fusion pipeline, tagged with the stage name.
struct StageError : Error {
  StageError(const std::string& stage_name, const std::string& message)
      : Error("[" + stage_name + "] " + message), stage(stage_name) {}
  std::string stage;
};

}  // namespace splatfuse
