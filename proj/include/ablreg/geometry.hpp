// Rigid transforms, frames, and pose error metrics.
//
// Conventions used across the library:
//   - Rotations are stored as 3x3 matrices. Quaternions only appear while
//     generating random rotations and inside the hand-eye solver.
//   - Lengths are millimetres, interface angles are degrees, internal
//     angles are radians.
//   - A RigidTransform3D maps points x -> R * x + t.

#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ablreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Proper rigid transform (rotation + translation in mm).
struct RigidTransform3D {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform3D identity() { return {}; }
  static RigidTransform3D from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform3D from_rotation(const Mat3& r) { return {r, Vec3::Zero()}; }
  /// Builds from a homogeneous matrix; throws Error if the upper-left block
  /// is not a proper rotation within `tolerance`.
  static RigidTransform3D from_matrix(const Mat4& m, double tolerance = 1e-6);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_vector(const Vec3& v) const { return rotation * v; }
  Mat4 matrix() const;

  /// True if the rotation is orthonormal with det +1 within `tolerance`.
  bool is_valid(double tolerance = 1e-9) const;
};

/// Result maps x -> a(b(x)).
RigidTransform3D compose(const RigidTransform3D& a, const RigidTransform3D& b);
RigidTransform3D inverse(const RigidTransform3D& t);

/// Nearest proper rotation in the Frobenius sense (SVD projection).
Mat3 nearest_rotation(const Mat3& m);

/// Rotation of `angle_deg` about `axis` (normalized internally).
Mat3 rotation_about(const Vec3& axis, double angle_deg);
Mat3 rot_x(double angle_deg);
Mat3 rot_y(double angle_deg);
Mat3 rot_z(double angle_deg);

/// Exponential map from a rotation vector in radians.
Mat3 exp_so3(const Vec3& rotation_vector);
/// Logarithm map to a rotation vector in radians, angle in [0, pi].
Vec3 log_so3(const Mat3& r);
/// Geodesic angle between two rotations in degrees, in [0, 180].
double geodesic_angle_deg(const Mat3& a, const Mat3& b);

/// Fixed-axis XYZ Euler angles (degrees): R = Rz(rz) * Ry(ry) * Rx(rx).
Vec3 euler_xyz_deg(const Mat3& r);
Mat3 from_euler_xyz_deg(const Vec3& angles_deg);

/// Skew-symmetric cross-product matrix.
Mat3 skew(const Vec3& v);

/// Uniformly distributed rotation from a random unit quaternion.
Mat3 random_rotation(std::mt19937_64& rng);
/// Random rigid transform: uniform rotation, translation uniform in a cube
/// of half-width `max_translation`.
RigidTransform3D random_transform(std::mt19937_64& rng, double max_translation);
/// Rotation of a fixed angle about a uniformly random axis.
Mat3 random_rotation_of_angle(std::mt19937_64& rng, double angle_deg);
Vec3 random_unit_vector(std::mt19937_64& rng);

struct PoseError {
  Vec3 translational = Vec3::Zero();  // Tx, Ty, Tz in mm, estimated - truth
  double euclidean_distance = 0.0;    // ED, mm
  Vec3 rotational = Vec3::Zero();     // Rx, Ry, Rz in degrees (XYZ fixed-axis)
  double geodesic_angle = 0.0;        // GA, degrees
};

/// Translation and rotation difference between an estimated and a
/// ground-truth pose. The rotational difference is R_est * R_gt^T.
PoseError pose_error(const RigidTransform3D& estimated, const RigidTransform3D& ground_truth);

/// Least-squares rigid fit (Kabsch with reflection guard) mapping `source`
/// points onto `target` points, optionally weighted.
RigidTransform3D fit_rigid_points(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                  const std::vector<double>& weights = {});

}  // namespace ablreg
