#include "ablreg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace ablreg {

RigidTransform3D RigidTransform3D::from_matrix(const Mat4& m, double tolerance) {
  RigidTransform3D t{m.block<3, 3>(0, 0), m.block<3, 1>(0, 3)};
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tolerance) {
    throw Error("matrix last row must be [0 0 0 1]");
  }
  if (!t.is_valid(tolerance)) {
    throw Error("matrix is not a proper rigid transform");
  }
  if ((t.rotation.transpose() * t.rotation - Mat3::Identity()).norm() > 1e-12) {
    t.rotation = nearest_rotation(t.rotation);
  }
  return t;
}

Mat4 RigidTransform3D::matrix() const {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

bool RigidTransform3D::is_valid(double tolerance) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  return ortho < tolerance && std::abs(rotation.determinant() - 1.0) < tolerance;
}

RigidTransform3D compose(const RigidTransform3D& a, const RigidTransform3D& b) {
  RigidTransform3D out{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  if ((out.rotation.transpose() * out.rotation - Mat3::Identity()).norm() > 1e-12) {
    out.rotation = nearest_rotation(out.rotation);
  }
  return out;
}

RigidTransform3D inverse(const RigidTransform3D& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Mat3 rotation_about(const Vec3& axis, double angle_deg) {
  return Eigen::AngleAxisd(angle_deg * kDegToRad, axis.normalized()).toRotationMatrix();
}

Mat3 rot_x(double angle_deg) { return rotation_about(Vec3::UnitX(), angle_deg); }
Mat3 rot_y(double angle_deg) { return rotation_about(Vec3::UnitY(), angle_deg); }
Mat3 rot_z(double angle_deg) { return rotation_about(Vec3::UnitZ(), angle_deg); }

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Vec3 log_so3(const Mat3& r) {
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double theta = std::atan2(0.5 * v.norm(), 0.5 * (r.trace() - 1.0));
  if (theta < 1e-6) {
    // first-order: R - R^T = 2 sin(theta) [axis]x
    return 0.5 * v;
  }
  if (kPi - theta < 1e-4) {
    // near pi the antisymmetric part vanishes; recover the axis from R + I
    const Mat3 b = 0.5 * (r + Mat3::Identity());
    int k = 0;
    b.diagonal().maxCoeff(&k);
    Vec3 axis = b.col(k) / std::sqrt(std::max(b(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(v) < 0) axis = -axis;
    return theta * axis;
  }
  return theta / (2.0 * std::sin(theta)) * v;
}

double geodesic_angle_deg(const Mat3& a, const Mat3& b) {
  const Mat3 d = a * b.transpose();
  const double c = std::clamp((d.trace() - 1.0) * 0.5, -1.0, 1.0);
  double angle = std::acos(c);
  // acos loses precision near 0; the rotation-vector norm does not.
  if (angle < 1e-3) angle = log_so3(d).norm();
  return angle * kRadToDeg;
}

Vec3 euler_xyz_deg(const Mat3& r) {
  const double ry = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  double rx = 0.0;
  double rz = 0.0;
  if (std::abs(std::cos(ry)) > 1e-12) {
    rx = std::atan2(r(2, 1), r(2, 2));
    rz = std::atan2(r(1, 0), r(0, 0));
  } else {
    // gimbal lock: fold everything into rz
    rz = std::atan2(-r(0, 1), r(1, 1));
  }
  return Vec3(rx, ry, rz) * kRadToDeg;
}

Mat3 from_euler_xyz_deg(const Vec3& a) { return rot_z(a.z()) * rot_y(a.y()) * rot_x(a.x()); }

Vec3 random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    q = Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-9);
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

Mat3 random_rotation_of_angle(std::mt19937_64& rng, double angle_deg) {
  return rotation_about(random_unit_vector(rng), angle_deg);
}

RigidTransform3D random_transform(std::mt19937_64& rng, double max_translation) {
  std::uniform_real_distribution<double> u(-max_translation, max_translation);
  RigidTransform3D t;
  t.rotation = random_rotation(rng);
  t.translation = Vec3(u(rng), u(rng), u(rng));
  return t;
}

PoseError pose_error(const RigidTransform3D& estimated, const RigidTransform3D& ground_truth) {
  PoseError e;
  e.translational = estimated.translation - ground_truth.translation;
  e.euclidean_distance = e.translational.norm();
  const Mat3 delta = estimated.rotation * ground_truth.rotation.transpose();
  e.rotational = euler_xyz_deg(delta);
  e.geodesic_angle = geodesic_angle_deg(estimated.rotation, ground_truth.rotation);
  if (estimated.rotation == ground_truth.rotation) {
    e.rotational.setZero();
    e.geodesic_angle = 0.0;
  }
  return e;
}

RigidTransform3D fit_rigid_points(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                  const std::vector<double>& weights) {
  if (source.size() != target.size() || source.size() < 3) {
    throw Error("fit_rigid_points: need at least 3 paired points");
  }
  if (!weights.empty() && weights.size() != source.size()) {
    throw Error("fit_rigid_points: weight count mismatch");
  }
  const auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  double wsum = 0.0;
  Vec3 cs = Vec3::Zero();
  Vec3 ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    wsum += w(i);
    cs += w(i) * source[i];
    ct += w(i) * target[i];
  }
  if (wsum <= 0) throw Error("fit_rigid_points: weights sum to zero");
  cs /= wsum;
  ct /= wsum;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    h += w(i) * (target[i] - ct) * (source[i] - cs).transpose();
  }
  RigidTransform3D t;
  t.rotation = nearest_rotation(h);
  t.translation = ct - t.rotation * cs;
  return t;
}

}  // namespace ablreg
