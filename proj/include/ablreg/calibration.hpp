// System calibration: arm kinematics (Denavit-Hartenberg + LM), Z-bar
// fiducial localisation, and hand-eye probe calibration.
//
// DH convention: standard (distal). Link i is
//   Rot_z(theta) * Trans_z(d) * Trans_x(a) * Rot_x(alpha)
// with theta = theta_offset + encoder for revolute joints and
// d = d + encoder for prismatic joints. dh_forward maps F_end into the arm
// base frame F_1.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ablreg/geometry.hpp"
#include "ablreg/levenberg_marquardt.hpp"

namespace ablreg {

enum class JointKind { revolute, prismatic };

struct DhJoint {
  double theta_offset_deg = 0.0;
  double d = 0.0;  // mm
  double a = 0.0;  // mm
  double alpha_deg = 0.0;
  JointKind kind = JointKind::revolute;
};

struct DhChain {
  std::vector<DhJoint> joints;

  std::size_t size() const { return joints.size(); }
  /// Throws Error if the chain is empty or an angle is outside (-180, 180].
  void validate() const;
  /// Flattened [theta_offset, d, a, alpha] per joint.
  VecX parameters() const;
  static DhChain from_parameters(const DhChain& shape, const VecX& params);
};

/// One encoder value per joint (deg for revolute, mm for prismatic).
struct JointReading {
  std::vector<double> values;
};

RigidTransform3D dh_link(const DhJoint& joint, double encoder);
RigidTransform3D dh_forward(const DhChain& chain, const JointReading& reading);

struct ArmObservation {
  JointReading reading;
  RigidTransform3D measured_end_pose;  // F_end -> F_1, from the tracker
};

struct ArmCalibrationOptions {
  double rotation_weight_mm_per_deg = 1.0;
  bool analytic_jacobian = true;
  /// Singular values below this fraction of the largest mark a parameter
  /// direction as unidentifiable.
  double rank_tolerance = 1e-9;
  LmOptions lm = [] {
    LmOptions o;
    o.relative_cost_tolerance = 1e-10;
    return o;
  }();
};

struct ArmCalibrationResult {
  DhChain chain;
  double cost = 0.0;
  int iterations = 0;
  /// Null-space directions of the residual Jacobian at the optimum, in the
  /// flattened parameter order. Empty when all parameters are identifiable.
  std::vector<VecX> unidentifiable_directions;
  std::vector<std::string> warnings;
};

/// Raised when an iterative solver stops without meeting its tolerances.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double final_cost) : Error(what), final_cost(final_cost) {}
  double final_cost;
};

/// Stacked residual: per observation 3 translation components (mm) then 3
/// rotation-vector components of R_meas^T R_pred (deg, weighted).
VecX arm_residual(const DhChain& shape, const VecX& params, std::span<const ArmObservation> observations,
                  double rotation_weight);
MatX arm_jacobian(const DhChain& shape, const VecX& params, std::span<const ArmObservation> observations,
                  double rotation_weight);

ArmCalibrationResult calibrate_arm(const DhChain& chain_init, std::span<const ArmObservation> observations,
                                   const ArmCalibrationOptions& options = {});

// --- Z-bar fiducials -------------------------------------------------------

/// Wire AB and wire CD are parallel; BC is the diagonal. Points in F_vol.
struct ZBarFiducial {
  int id = 0;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  Vec3 c = Vec3::Zero();
  Vec3 d = Vec3::Zero();

  void validate() const;
};

/// Image-plane intersections (mm, image coordinates) with AB, BC and CD.
struct ZBarObservation {
  int fiducial_id = 0;
  Vec2 p1 = Vec2::Zero();
  Vec2 p2 = Vec2::Zero();
  Vec2 p3 = Vec2::Zero();
};

class DegenerateObservation : public Error {
 public:
  using Error::Error;
};
class InconsistentObservation : public Error {
 public:
  using Error::Error;
};

/// Location in F_vol where the image plane crosses the diagonal wire BC.
Vec3 zbar_locate(const ZBarFiducial& fiducial, const ZBarObservation& obs);

/// Pose of the image plane (image -> F_vol) fitted to the located diagonal
/// points of all usable observations. Needs three non-collinear points.
RigidTransform3D image_pose_from_zbar(std::span<const ZBarFiducial> fiducials,
                                      std::span<const ZBarObservation> observations);

// --- hand-eye ----------------------------------------------------------------

/// Motion pairs for A_i X = X B_i. A_i: relative motions of F_end;
/// B_i: corresponding relative motions of the image frame.
struct HandEyeProblem {
  std::vector<RigidTransform3D> a;
  std::vector<RigidTransform3D> b;
};

struct HandEyeOptions {
  bool lm_polish = false;
};

struct HandEyeResult {
  RigidTransform3D x;  // F_2dUS -> F_end
  double max_residual_ed = 0.0;
  double max_residual_ga = 0.0;
};

/// Tsai-Lenz two-step solution of A_i X = X B_i.
HandEyeResult calibrate_probe(const HandEyeProblem& problem, const HandEyeOptions& options = {});

/// Builds motion pairs over all pose combinations from end poses (F_end -> F_1) and image
/// poses (image -> F_vol) recorded at the same instants.
HandEyeProblem hand_eye_pairs(std::span<const RigidTransform3D> end_poses,
                              std::span<const RigidTransform3D> image_poses);

/// Point-based alternative: fits X directly from image points and their
/// phantom locations given a known phantom pose (F_vol -> F_1).
RigidTransform3D calibrate_probe_points(std::span<const RigidTransform3D> end_poses,
                                        const std::vector<std::vector<Vec2>>& image_points,
                                        const std::vector<std::vector<Vec3>>& phantom_points,
                                        const RigidTransform3D& phantom_pose);

/// Image plane pose in F_1: dh_forward(chain, reading) composed with probe_cal.
RigidTransform3D tracked_image_pose(const DhChain& chain, const JointReading& reading,
                                    const RigidTransform3D& probe_cal);

// --- calibration session ---------------------------------------------------

struct CalibrationTruth {
  DhChain chain;
  RigidTransform3D probe_calibration;
};

struct CalibrationSession {
  DhChain chain;  // nominal / initial chain
  std::vector<JointReading> readings;
  std::vector<RigidTransform3D> measured_poses;
  std::vector<ZBarFiducial> zbar_fiducials;
  std::vector<std::vector<ZBarObservation>> zbar_observations;  // per reading
  std::optional<RigidTransform3D> phantom_pose;                 // F_vol -> F_1
  /// Readings held out from calibration, with their observations.
  std::vector<JointReading> holdout_readings;
  std::vector<std::vector<ZBarObservation>> holdout_observations;
  std::optional<CalibrationTruth> truth;

  std::vector<ArmObservation> arm_observations() const;
};

/// Arm calibration followed by hand-eye calibration on a session.
struct SystemCalibration {
  ArmCalibrationResult arm;
  HandEyeResult probe;
};
SystemCalibration calibrate_system(const CalibrationSession& session, const ArmCalibrationOptions& arm_options = {},
                                   const HandEyeOptions& probe_options = {});

/// Summary of tracked-vs-ground-truth image plane errors over a set of poses.
struct PoseErrorSummary {
  std::string label;
  Vec3 mean_translational = Vec3::Zero();
  double ed_mean = 0.0;
  double ed_sd = 0.0;
  Vec3 mean_rotational = Vec3::Zero();
  double ga_mean = 0.0;
  double ga_sd = 0.0;
  std::size_t count = 0;
};
PoseErrorSummary summarize_pose_errors(const std::string& label, std::span<const PoseError> errors);

/// Compares tracked image planes against the Z-bar landmark-defined planes
/// (mapped through the phantom pose) for the session's hold-out readings, or
/// all readings when there is no hold-out set.
PoseErrorSummary verify_calibration(const CalibrationSession& session, const DhChain& chain,
                                    const RigidTransform3D& probe_cal, const std::string& label);

}  // namespace ablreg
