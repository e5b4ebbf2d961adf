// Intensity-based rigid 2D US to 3D US registration: NCC objective,
// coordinate descent with golden-section line searches over a three-level
// image pyramid, and tracked-pose warm starting across a frame sequence.

#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ablreg/tps.hpp"
#include "ablreg/volume.hpp"

namespace ablreg {

/// A live 2D frame. tracked_pose must already be expressed in the 3D US
/// volume frame; its extent and resolution describe the frame's pixel grid.
struct TrackedFrame {
  Image2D image;
  double timestamp = 0.0;
  SlicePose tracked_pose;

  void validate() const;
};

/// Frame placed at `pose`: pixel grid and spacing follow the pose.
TrackedFrame frame_from_pose(const Image2D& image, const SlicePose& pose, double timestamp = 0.0);

struct S2VOptions {
  int levels = 3;
  double initial_step_mm = 4.0;   // search half-width at the coarsest level
  double initial_step_deg = 4.0;
  double final_step_mm = 0.02;    // refinement stops below this (degrees share the value)
  int golden_iterations = 10;
  int max_sweeps_per_level = 30;
  double min_overlap = 0.25;
  /// Also start the coarsest level one search width away along each parameter.
  bool coarse_restarts = true;
  Exec exec = Exec::parallel;
};

struct S2VResult {
  SlicePose refined_pose;
  double score = 0.0;
  double initial_score = 0.0;
  int iterations = 0;  // objective evaluations
  bool converged = false;
  double runtime_seconds = 0.0;
  bool failed = false;
  std::string error;
};

class S2VError : public Error {
 public:
  using Error::Error;
};

/// Sentinel returned when the overlap is below the minimum or a variance is zero.
inline constexpr double kNccInvalid = -std::numeric_limits<double>::infinity();

/// NCC between `slice` and mpr_slice(volume, pose) over valid pixels.
double similarity_ncc(const Image2D& slice, const Volume& volume, const SlicePose& pose, double min_overlap = 0.25,
                      Exec exec = Exec::parallel);

/// Pose with the 6 parameters (tx, ty, tz mm; rx, ry, rz deg) applied as a
/// rigid motion about the image centre of `base`, in the volume frame.
SlicePose perturb_pose(const SlicePose& base, const Eigen::Matrix<double, 6, 1>& params);

S2VResult register_slice(const TrackedFrame& frame, const Volume& volume, const S2VOptions& options = {});
S2VResult register_slice_from(const TrackedFrame& frame, const Volume& volume, const SlicePose& init,
                              const S2VOptions& options = {});

/// Frame i starts at (refined_{i-1} o tracked_{i-1}^-1) o tracked_i when
/// warm_start is set. Per-frame failures are recorded, not thrown.
std::vector<S2VResult> register_sequence(const std::vector<TrackedFrame>& frames, const Volume& volume,
                                         const S2VOptions& options = {}, bool warm_start = true);

/// Maps a point in the 3D US frame into the CT/MRI frame: warp(T_rigid(p)).
Vec3 us_to_ctmri(const Vec3& p_us, const RigidTransform3D& t_rigid, const std::optional<TpsWarp>& warp);

/// CT/MRI view matching a registered frame: base pixels are the CT/MRI
/// values at the mapped positions of the frame's pixels, the overlay is the
/// live frame itself.
FusedView mpr_chain(const S2VResult& result, const TrackedFrame& frame, const RigidTransform3D& t_rigid,
                    const std::optional<TpsWarp>& warp, const Volume& ctmri, const FusedViewOptions& options = {},
                    Exec exec = Exec::parallel);

}  // namespace ablreg
