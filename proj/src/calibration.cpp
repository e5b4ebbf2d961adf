#include "ablreg/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ablreg {

namespace {

constexpr int kParamsPerJoint = 4;

bool angle_in_range(double deg) { return deg > -180.0 && deg <= 180.0; }

Mat4 rot_z4(double rad) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix();
  return m;
}

Mat4 rot_x4(double rad) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix();
  return m;
}

Mat4 trans4(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 3) = t;
  return m;
}

struct LinkFactors {
  Mat4 rz, tz, tx, rx;
};

LinkFactors link_factors(const DhJoint& joint, double encoder) {
  const bool revolute = joint.kind == JointKind::revolute;
  const double theta = (joint.theta_offset_deg + (revolute ? encoder : 0.0)) * kDegToRad;
  const double d = joint.d + (revolute ? 0.0 : encoder);
  return {rot_z4(theta), trans4(Vec3(0, 0, d)), trans4(Vec3(joint.a, 0, 0)), rot_x4(joint.alpha_deg * kDegToRad)};
}

// Inverse of the right Jacobian of SO(3).
Mat3 right_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  double coeff = 1.0 / 12.0;
  if (theta > 1e-6) {
    coeff = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() + 0.5 * k + coeff * k * k;
}

Vec3 vee(const Mat3& s) { return Vec3(s(2, 1), s(0, 2), s(1, 0)); }

void check_reading(const DhChain& chain, const JointReading& reading) {
  if (reading.values.size() != chain.size()) {
    std::ostringstream msg;
    msg << "joint reading has " << reading.values.size() << " values, chain has " << chain.size() << " joints";
    throw Error(msg.str());
  }
}

}  // namespace

void DhChain::validate() const {
  if (joints.empty()) throw Error("DH chain must have at least one joint");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    if (!angle_in_range(joints[i].alpha_deg) || !angle_in_range(joints[i].theta_offset_deg)) {
      throw Error("DH joint " + std::to_string(i) + ": angles must lie in (-180, 180]");
    }
  }
}

VecX DhChain::parameters() const {
  VecX p(static_cast<Eigen::Index>(joints.size()) * kParamsPerJoint);
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i) * kParamsPerJoint;
    p[k] = joints[i].theta_offset_deg;
    p[k + 1] = joints[i].d;
    p[k + 2] = joints[i].a;
    p[k + 3] = joints[i].alpha_deg;
  }
  return p;
}

DhChain DhChain::from_parameters(const DhChain& shape, const VecX& params) {
  if (params.size() != static_cast<Eigen::Index>(shape.size()) * kParamsPerJoint) {
    throw Error("DH parameter vector has wrong length");
  }
  DhChain out = shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i) * kParamsPerJoint;
    out.joints[i].theta_offset_deg = params[k];
    out.joints[i].d = params[k + 1];
    out.joints[i].a = params[k + 2];
    out.joints[i].alpha_deg = params[k + 3];
  }
  return out;
}

RigidTransform3D dh_link(const DhJoint& joint, double encoder) {
  const LinkFactors f = link_factors(joint, encoder);
  const Mat4 m = f.rz * f.tz * f.tx * f.rx;
  return {m.block<3, 3>(0, 0), m.block<3, 1>(0, 3)};
}

RigidTransform3D dh_forward(const DhChain& chain, const JointReading& reading) {
  check_reading(chain, reading);
  RigidTransform3D t;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    t = compose(t, dh_link(chain.joints[i], reading.values[i]));
  }
  return t;
}

VecX arm_residual(const DhChain& shape, const VecX& params, std::span<const ArmObservation> observations,
                  double rotation_weight) {
  const DhChain chain = DhChain::from_parameters(shape, params);
  VecX r(static_cast<Eigen::Index>(observations.size()) * 6);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const RigidTransform3D pred = dh_forward(chain, observations[i].reading);
    const RigidTransform3D& meas = observations[i].measured_end_pose;
    const auto k = static_cast<Eigen::Index>(i) * 6;
    r.segment<3>(k) = pred.translation - meas.translation;
    r.segment<3>(k + 3) = log_so3(meas.rotation.transpose() * pred.rotation) * kRadToDeg * rotation_weight;
  }
  return r;
}

MatX arm_jacobian(const DhChain& shape, const VecX& params, std::span<const ArmObservation> observations,
                  double rotation_weight) {
  const DhChain chain = DhChain::from_parameters(shape, params);
  const std::size_t n = chain.size();
  MatX j = MatX::Zero(static_cast<Eigen::Index>(observations.size()) * 6, params.size());

  Mat4 gz = Mat4::Zero();  // generator of rotation about z
  gz(0, 1) = -1;
  gz(1, 0) = 1;
  Mat4 gx = Mat4::Zero();  // generator of rotation about x
  gx(1, 2) = -1;
  gx(2, 1) = 1;
  Mat4 gtz = Mat4::Zero();
  gtz(2, 3) = 1;
  Mat4 gtx = Mat4::Zero();
  gtx(0, 3) = 1;

  std::vector<LinkFactors> factors(n);
  std::vector<Mat4> links(n);
  std::vector<Mat4> prefix(n + 1);
  std::vector<Mat4> suffix(n + 1);
  for (std::size_t o = 0; o < observations.size(); ++o) {
    const auto& obs = observations[o];
    check_reading(chain, obs.reading);
    for (std::size_t i = 0; i < n; ++i) {
      factors[i] = link_factors(chain.joints[i], obs.reading.values[i]);
      links[i] = factors[i].rz * factors[i].tz * factors[i].tx * factors[i].rx;
    }
    prefix[0] = Mat4::Identity();
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * links[i];
    suffix[n] = Mat4::Identity();
    for (std::size_t i = n; i-- > 0;) suffix[i] = links[i] * suffix[i + 1];

    const Mat4& full = prefix[n];
    const Mat3 r_pred = full.block<3, 3>(0, 0);
    const Mat3 r_meas = obs.measured_end_pose.rotation;
    const Vec3 phi = log_so3(r_meas.transpose() * r_pred);
    const Mat3 jr_inv = right_jacobian_inverse(phi);
    const auto row = static_cast<Eigen::Index>(o) * 6;

    for (std::size_t i = 0; i < n; ++i) {
      const LinkFactors& f = factors[i];
      const Mat4 d_links[kParamsPerJoint] = {
          gz * links[i] * kDegToRad,         // theta offset, degrees
          f.rz * gtz * f.tx * f.rx,          // d
          f.rz * f.tz * gtx * f.rx,          // a
          links[i] * gx * kDegToRad,         // alpha, degrees
      };
      for (int p = 0; p < kParamsPerJoint; ++p) {
        const Mat4 d_full = prefix[i] * d_links[p] * suffix[i + 1];
        const auto col = static_cast<Eigen::Index>(i) * kParamsPerJoint + p;
        j.block<3, 1>(row, col) = d_full.block<3, 1>(0, 3);
        const Vec3 omega = vee(r_pred.transpose() * d_full.block<3, 3>(0, 0));
        j.block<3, 1>(row + 3, col) = jr_inv * omega * kRadToDeg * rotation_weight;
      }
    }
  }
  return j;
}

ArmCalibrationResult calibrate_arm(const DhChain& chain_init, std::span<const ArmObservation> observations,
                                   const ArmCalibrationOptions& options) {
  chain_init.validate();
  const std::size_t n = chain_init.size();
  const std::size_t min_obs = (4 * n + 5) / 6 + 2;
  if (observations.size() < min_obs) {
    throw Error("calibrate_arm: need at least " + std::to_string(min_obs) + " observations, got " +
                std::to_string(observations.size()));
  }
  const double w = options.rotation_weight_mm_per_deg;
  const ResidualFn residual = [&](const VecX& p) { return arm_residual(chain_init, p, observations, w); };
  JacobianFn jacobian;
  if (options.analytic_jacobian) {
    jacobian = [&](const VecX& p) { return arm_jacobian(chain_init, p, observations, w); };
  }
  const LmResult lm = lm_minimize(residual, jacobian, chain_init.parameters(), options.lm);
  if (!lm.converged()) {
    std::ostringstream msg;
    msg << "calibrate_arm: no convergence after " << lm.iterations << " iterations, final cost " << lm.cost;
    throw ConvergenceError(msg.str(), lm.cost);
  }

  ArmCalibrationResult out;
  out.chain = DhChain::from_parameters(chain_init, lm.parameters);
  out.cost = lm.cost;
  out.iterations = lm.iterations;

  const MatX j = arm_jacobian(chain_init, lm.parameters, observations, w);
  Eigen::JacobiSVD<MatX> svd(j, Eigen::ComputeFullV);
  const VecX s = svd.singularValues();
  const double smax = s.size() > 0 ? s[0] : 0.0;
  for (Eigen::Index k = 0; k < j.cols(); ++k) {
    const double sk = k < s.size() ? s[k] : 0.0;
    if (sk <= options.rank_tolerance * smax) {
      out.unidentifiable_directions.push_back(svd.matrixV().col(k));
    }
  }
  if (!out.unidentifiable_directions.empty()) {
    std::ostringstream msg;
    msg << out.unidentifiable_directions.size() << " unidentifiable parameter direction(s):";
    for (const auto& v : out.unidentifiable_directions) {
      msg << " [" << v.transpose() << "]";
    }
    out.warnings.push_back(msg.str());
  }
  return out;
}

// --- Z-bar -----------------------------------------------------------------

void ZBarFiducial::validate() const {
  const Vec3 n = (b - a).cross(c - b);
  if (n.norm() < 1e-9) throw Error("Z-bar fiducial " + std::to_string(id) + ": wires are collinear");
  const Vec3 un = n.normalized();
  if (std::abs(un.dot(d - a)) > 0.01) {
    throw Error("Z-bar fiducial " + std::to_string(id) + ": endpoints are not coplanar");
  }
  const double cosang = std::abs((b - a).normalized().dot((d - c).normalized()));
  if (std::acos(std::min(cosang, 1.0)) * kRadToDeg > 0.1) {
    throw Error("Z-bar fiducial " + std::to_string(id) + ": wires AB and CD are not parallel");
  }
}

Vec3 zbar_locate(const ZBarFiducial& fiducial, const ZBarObservation& obs) {
  const Vec2 span = obs.p3 - obs.p1;
  const double len = span.norm();
  if (len < 0.5) {
    throw DegenerateObservation("Z-bar fiducial " + std::to_string(fiducial.id) +
                                ": |p3 - p1| below 0.5 mm, image plane nearly parallel to the wire layer");
  }
  const Vec2 dir = span / len;
  const Vec2 rel = obs.p2 - obs.p1;
  const double off_line = std::abs(dir.x() * rel.y() - dir.y() * rel.x());
  if (off_line > 0.2) {
    throw InconsistentObservation("Z-bar fiducial " + std::to_string(fiducial.id) +
                                  ": intersection points are not collinear");
  }
  // signed position of p2 along p1 -> p3; equals |p2-p1|/|p3-p1| for collinear points between them
  const double r = rel.dot(dir) / len;
  if (r < -0.05 || r > 1.05) {
    throw InconsistentObservation("Z-bar fiducial " + std::to_string(fiducial.id) + ": ratio " +
                                  std::to_string(r) + " outside the diagonal");
  }
  const double rc = std::clamp(r, 0.0, 1.0);
  return fiducial.b + rc * (fiducial.c - fiducial.b);
}

RigidTransform3D image_pose_from_zbar(std::span<const ZBarFiducial> fiducials,
                                      std::span<const ZBarObservation> observations) {
  std::vector<Vec3> image_pts;
  std::vector<Vec3> phantom_pts;
  for (const auto& obs : observations) {
    const auto it = std::find_if(fiducials.begin(), fiducials.end(),
                                 [&](const ZBarFiducial& f) { return f.id == obs.fiducial_id; });
    if (it == fiducials.end()) throw Error("unknown Z-bar fiducial id " + std::to_string(obs.fiducial_id));
    try {
      phantom_pts.push_back(zbar_locate(*it, obs));
    } catch (const DegenerateObservation&) {
      continue;
    }
    image_pts.emplace_back(obs.p2.x(), obs.p2.y(), 0.0);
  }
  if (image_pts.size() < 3) throw Error("image_pose_from_zbar: fewer than 3 usable fiducials");
  // non-collinearity of the image points
  Eigen::MatrixXd centered(image_pts.size(), 2);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : image_pts) mean += p;
  mean /= static_cast<double>(image_pts.size());
  for (std::size_t i = 0; i < image_pts.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) = (image_pts[i] - mean).head<2>().transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  if (svd.singularValues()[1] < 1e-6 * std::max(1.0, svd.singularValues()[0])) {
    throw Error("image_pose_from_zbar: located points are collinear");
  }
  return fit_rigid_points(image_pts, phantom_pts);
}

// --- hand-eye ----------------------------------------------------------------

namespace {

// Modified Rodrigues vector 2 sin(theta/2) n.
Vec3 modified_rodrigues(const Mat3& r) {
  const Vec3 w = log_so3(r);
  const double theta = w.norm();
  if (theta < 1e-15) return Vec3::Zero();
  return 2.0 * std::sin(theta / 2.0) * w / theta;
}

RigidTransform3D polish_hand_eye(const HandEyeProblem& p, const RigidTransform3D& x0) {
  const ResidualFn residual = [&](const VecX& q) {
    const RigidTransform3D x{exp_so3(q.head<3>()) * x0.rotation, x0.translation + q.tail<3>()};
    VecX r(static_cast<Eigen::Index>(p.a.size()) * 6);
    for (std::size_t i = 0; i < p.a.size(); ++i) {
      const RigidTransform3D lhs = compose(p.a[i], x);
      const RigidTransform3D rhs = compose(x, p.b[i]);
      const auto k = static_cast<Eigen::Index>(i) * 6;
      r.segment<3>(k) = lhs.translation - rhs.translation;
      r.segment<3>(k + 3) = log_so3(rhs.rotation.transpose() * lhs.rotation) * kRadToDeg;
    }
    return r;
  };
  const LmResult lm = lm_minimize(residual, {}, VecX::Zero(6));
  return {exp_so3(lm.parameters.head<3>()) * x0.rotation, x0.translation + lm.parameters.tail<3>()};
}

}  // namespace

HandEyeResult calibrate_probe(const HandEyeProblem& problem, const HandEyeOptions& options) {
  if (problem.a.size() != problem.b.size()) throw Error("calibrate_probe: A and B lists differ in length");
  if (problem.a.size() < 2) throw Error("calibrate_probe: need at least 2 motion pairs");

  // degenerate motion check: at least two A rotation axes more than 5 degrees apart
  std::vector<Vec3> axes;
  for (const auto& a : problem.a) {
    const Vec3 w = log_so3(a.rotation);
    if (w.norm() > 1e-6) axes.push_back(w.normalized());
  }
  bool spread = false;
  for (std::size_t i = 0; i < axes.size() && !spread; ++i) {
    for (std::size_t k = i + 1; k < axes.size() && !spread; ++k) {
      const double ang = std::acos(std::min(1.0, std::abs(axes[i].dot(axes[k])))) * kRadToDeg;
      spread = ang > 5.0;
    }
  }
  if (!spread) throw Error("calibrate_probe: degenerate motion, rotation axes are parallel");

  const auto m = static_cast<Eigen::Index>(problem.a.size());
  MatX lhs(3 * m, 3);
  VecX rhs(3 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vec3 pa = modified_rodrigues(problem.a[static_cast<std::size_t>(i)].rotation);
    const Vec3 pb = modified_rodrigues(problem.b[static_cast<std::size_t>(i)].rotation);
    lhs.block<3, 3>(3 * i, 0) = skew(pa + pb);
    rhs.segment<3>(3 * i) = pb - pa;
  }
  const Vec3 px_prime = lhs.colPivHouseholderQr().solve(rhs);
  const Vec3 px = 2.0 * px_prime / std::sqrt(1.0 + px_prime.squaredNorm());
  const double px2 = px.squaredNorm();
  Mat3 rx = (1.0 - px2 / 2.0) * Mat3::Identity() +
            0.5 * (px * px.transpose() + std::sqrt(std::max(0.0, 4.0 - px2)) * skew(px));
  rx = nearest_rotation(rx);

  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& a = problem.a[static_cast<std::size_t>(i)];
    const auto& b = problem.b[static_cast<std::size_t>(i)];
    lhs.block<3, 3>(3 * i, 0) = a.rotation - Mat3::Identity();
    rhs.segment<3>(3 * i) = rx * b.translation - a.translation;
  }
  const Vec3 tx = lhs.colPivHouseholderQr().solve(rhs);

  HandEyeResult out;
  out.x = {rx, tx};
  if (options.lm_polish) out.x = polish_hand_eye(problem, out.x);
  for (std::size_t i = 0; i < problem.a.size(); ++i) {
    const PoseError e = pose_error(compose(problem.a[i], out.x), compose(out.x, problem.b[i]));
    out.max_residual_ed = std::max(out.max_residual_ed, e.euclidean_distance);
    out.max_residual_ga = std::max(out.max_residual_ga, e.geodesic_angle);
  }
  return out;
}

HandEyeProblem hand_eye_pairs(std::span<const RigidTransform3D> end_poses,
                              std::span<const RigidTransform3D> image_poses) {
  if (end_poses.size() != image_poses.size()) throw Error("hand_eye_pairs: pose lists differ in length");
  HandEyeProblem p;
  for (std::size_t i = 0; i < end_poses.size(); ++i) {
    for (std::size_t j = i + 1; j < end_poses.size(); ++j) {
      // E_j^-1 E_i X = X V_j^-1 V_i
      p.a.push_back(compose(inverse(end_poses[j]), end_poses[i]));
      p.b.push_back(compose(inverse(image_poses[j]), image_poses[i]));
    }
  }
  return p;
}

RigidTransform3D calibrate_probe_points(std::span<const RigidTransform3D> end_poses,
                                        const std::vector<std::vector<Vec2>>& image_points,
                                        const std::vector<std::vector<Vec3>>& phantom_points,
                                        const RigidTransform3D& phantom_pose) {
  if (end_poses.size() != image_points.size() || end_poses.size() != phantom_points.size()) {
    throw Error("calibrate_probe_points: per-pose lists differ in length");
  }
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  for (std::size_t i = 0; i < end_poses.size(); ++i) {
    if (image_points[i].size() != phantom_points[i].size()) {
      throw Error("calibrate_probe_points: point count mismatch at pose " + std::to_string(i));
    }
    const RigidTransform3D to_end = compose(inverse(end_poses[i]), phantom_pose);
    for (std::size_t k = 0; k < image_points[i].size(); ++k) {
      src.emplace_back(image_points[i][k].x(), image_points[i][k].y(), 0.0);
      dst.push_back(to_end.apply(phantom_points[i][k]));
    }
  }
  return fit_rigid_points(src, dst);
}

RigidTransform3D tracked_image_pose(const DhChain& chain, const JointReading& reading,
                                    const RigidTransform3D& probe_cal) {
  return compose(dh_forward(chain, reading), probe_cal);
}

// --- session-level helpers ---------------------------------------------------

std::vector<ArmObservation> CalibrationSession::arm_observations() const {
  if (readings.size() != measured_poses.size()) {
    throw Error("calibration session: readings and measured_poses differ in length");
  }
  std::vector<ArmObservation> obs;
  obs.reserve(readings.size());
  for (std::size_t i = 0; i < readings.size(); ++i) obs.push_back({readings[i], measured_poses[i]});
  return obs;
}

SystemCalibration calibrate_system(const CalibrationSession& session, const ArmCalibrationOptions& arm_options,
                                   const HandEyeOptions& probe_options) {
  SystemCalibration out;
  const auto obs = session.arm_observations();
  out.arm = calibrate_arm(session.chain, obs, arm_options);

  if (session.zbar_observations.size() != session.readings.size()) {
    throw Error("calibration session: zbar_observations must have one entry per reading");
  }
  std::vector<RigidTransform3D> end_poses;
  std::vector<RigidTransform3D> image_poses;
  for (std::size_t i = 0; i < session.readings.size(); ++i) {
    RigidTransform3D v;
    try {
      v = image_pose_from_zbar(session.zbar_fiducials, session.zbar_observations[i]);
    } catch (const Error&) {
      continue;  // pose without enough usable fiducials
    }
    end_poses.push_back(dh_forward(out.arm.chain, session.readings[i]));
    image_poses.push_back(v);
  }
  out.probe = calibrate_probe(hand_eye_pairs(end_poses, image_poses), probe_options);
  return out;
}

PoseErrorSummary summarize_pose_errors(const std::string& label, std::span<const PoseError> errors) {
  PoseErrorSummary s;
  s.label = label;
  s.count = errors.size();
  if (errors.empty()) return s;
  const double n = static_cast<double>(errors.size());
  for (const auto& e : errors) {
    s.mean_translational += e.translational / n;
    s.mean_rotational += e.rotational / n;
    s.ed_mean += e.euclidean_distance / n;
    s.ga_mean += e.geodesic_angle / n;
  }
  double ved = 0.0;
  double vga = 0.0;
  for (const auto& e : errors) {
    ved += (e.euclidean_distance - s.ed_mean) * (e.euclidean_distance - s.ed_mean);
    vga += (e.geodesic_angle - s.ga_mean) * (e.geodesic_angle - s.ga_mean);
  }
  s.ed_sd = std::sqrt(ved / n);
  s.ga_sd = std::sqrt(vga / n);
  return s;
}

PoseErrorSummary verify_calibration(const CalibrationSession& session, const DhChain& chain,
                                    const RigidTransform3D& probe_cal, const std::string& label) {
  if (!session.phantom_pose) throw Error("calibration verify: session has no phantom_pose");
  const bool holdout = !session.holdout_readings.empty();
  const auto& readings = holdout ? session.holdout_readings : session.readings;
  const auto& observations = holdout ? session.holdout_observations : session.zbar_observations;
  if (readings.size() != observations.size()) throw Error("calibration verify: observation count mismatch");
  std::vector<PoseError> errors;
  for (std::size_t i = 0; i < readings.size(); ++i) {
    RigidTransform3D landmark_plane;
    try {
      landmark_plane = compose(*session.phantom_pose, image_pose_from_zbar(session.zbar_fiducials, observations[i]));
    } catch (const Error&) {
      continue;
    }
    errors.push_back(pose_error(tracked_image_pose(chain, readings[i], probe_cal), landmark_plane));
  }
  return summarize_pose_errors(label, errors);
}

}  // namespace ablreg
