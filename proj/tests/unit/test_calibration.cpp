#include <doctest.h>

#include <cmath>

#include "ablreg/calibration.hpp"
#include "ablreg/synth.hpp"
#include "../support/generators.hpp"

using namespace ablreg;

namespace {

// Independent DH oracle: the link matrix written out element by element.
Mat4 dh_matrix(double theta_deg, double d, double a, double alpha_deg) {
  const double ct = std::cos(theta_deg * kDegToRad), st = std::sin(theta_deg * kDegToRad);
  const double ca = std::cos(alpha_deg * kDegToRad), sa = std::sin(alpha_deg * kDegToRad);
  Mat4 m;
  m << ct, -st * ca, st * sa, a * ct,
       st, ct * ca, -ct * sa, a * st,
       0, sa, ca, d,
       0, 0, 0, 1;
  return m;
}

Mat4 manual_forward(const DhChain& chain, const JointReading& q) {
  Mat4 m = Mat4::Identity();
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const DhJoint& j = chain.joints[i];
    const bool rev = j.kind == JointKind::revolute;
    m = m * dh_matrix(j.theta_offset_deg + (rev ? q.values[i] : 0.0), j.d + (rev ? 0.0 : q.values[i]), j.a,
                      j.alpha_deg);
  }
  return m;
}

std::vector<ArmObservation> observe(const DhChain& truth, gen::Rng& rng, int n) {
  std::vector<ArmObservation> obs;
  for (int i = 0; i < n; ++i) {
    const JointReading q = gen::reading(rng, truth.size());
    obs.push_back({q, dh_forward(truth, q)});
  }
  return obs;
}

HandEyeProblem consistent_pairs(const RigidTransform3D& x, gen::Rng& rng, int n) {
  HandEyeProblem p;
  for (int i = 0; i < n; ++i) {
    const RigidTransform3D a = gen::transform(rng, 100.0);
    p.a.push_back(a);
    p.b.push_back(compose(inverse(x), compose(a, x)));
  }
  return p;
}

RigidTransform3D jitter(const RigidTransform3D& t, gen::Rng& rng, double deg, double mm) {
  const Vec3 w = gen::gaussian3(rng, deg * kDegToRad);
  return {exp_so3(w) * t.rotation, t.translation + gen::gaussian3(rng, mm)};
}

}  // namespace

TEST_SUITE("calibration") {
  TEST_CASE("dh_forward examples") {
    DhChain zero{{DhJoint{}}};
    CHECK((dh_forward(zero, {{0.0}}).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-15);

    DhChain one{{DhJoint{0.0, 0.0, 100.0, 0.0}}};
    const RigidTransform3D t = dh_forward(one, {{90.0}});
    CHECK((t.rotation - rot_z(90.0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((t.translation - Vec3(0, 100, 0)).norm() < 1e-12);

    DhChain planar{{DhJoint{0.0, 0.0, 50.0, 0.0}, DhJoint{0.0, 0.0, 50.0, 0.0}}};
    CHECK((dh_forward(planar, {{90.0, -90.0}}).translation - Vec3(50, 50, 0)).norm() < 1e-12);

    CHECK_THROWS_AS(dh_forward(planar, {{1.0}}), Error);
  }

  TEST_CASE("dh_forward equals the manual matrix product and is rigid") {
    gen::Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      DhChain c = gen::chain(rng, gen::uniform_int(rng, 1, 7));
      if (trial % 3 == 0) c.joints.back().kind = JointKind::prismatic;
      const JointReading q = gen::reading(rng, c.size());
      const RigidTransform3D t = dh_forward(c, q);
      CHECK((t.matrix() - manual_forward(c, q)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(t.is_valid(1e-9));
    }
  }

  TEST_CASE("tracked_image_pose composes end pose and probe calibration") {
    gen::Rng rng(12);
    const DhChain c = gen::chain(rng, 6);
    const JointReading q = gen::reading(rng, 6);
    const RigidTransform3D x = gen::transform(rng, 50.0);
    const Mat4 expected = manual_forward(c, q) * x.matrix();
    CHECK((tracked_image_pose(c, q, x).matrix() - expected).cwiseAbs().maxCoeff() < 1e-9);
    DhChain zero{{DhJoint{}}};
    CHECK(pose_error(tracked_image_pose(zero, {{0.0}}, RigidTransform3D::identity()), RigidTransform3D::identity())
              .euclidean_distance == 0.0);
  }

  TEST_CASE("calibrate_arm is a fixed point on self-consistent data") {
    gen::Rng rng(13);
    const DhChain c = default_arm_chain();
    const auto obs = observe(c, rng, 30);
    const ArmCalibrationResult r = calibrate_arm(c, obs);
    CHECK(r.cost < 1e-18);
    CHECK((r.chain.parameters() - c.parameters()).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("calibrate_arm recovers a perturbed link length") {
    DhChain truth{{DhJoint{0.0, 100.0, 30.0, 90.0}, DhJoint{5.0, 10.0, 150.0, -90.0},
                   DhJoint{-3.0, 20.0, 120.0, 60.0}}};
    DhChain init = truth;
    init.joints[1].a += 5.0;
    gen::Rng rng(14);
    const auto obs = observe(truth, rng, 20);
    const ArmCalibrationResult r = calibrate_arm(init, obs);
    CHECK(std::abs(r.chain.joints[1].a - truth.joints[1].a) < 1e-6);
    CHECK(r.cost < 1e-18);
  }

  TEST_CASE("calibrate_arm holds out-of-sample accuracy under tracker noise") {
    gen::Rng rng(15);
    const DhChain nominal = default_arm_chain();
    DhChain truth = nominal;
    for (auto& j : truth.joints) {
      j.d += gen::uniform(rng, -2, 2);
      j.a += gen::uniform(rng, -2, 2);
      j.theta_offset_deg += gen::uniform(rng, -1, 1);
      j.alpha_deg += gen::uniform(rng, -1, 1);
    }
    std::vector<ArmObservation> obs;
    for (int i = 0; i < 50; ++i) {
      const JointReading q = gen::reading(rng, truth.size(), 60.0);
      obs.push_back({q, jitter(dh_forward(truth, q), rng, 0.1, 0.2)});
    }
    const ArmCalibrationResult r = calibrate_arm(nominal, obs);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const JointReading q = gen::reading(rng, truth.size(), 60.0);
      worst = std::max(worst, pose_error(dh_forward(r.chain, q), dh_forward(truth, q)).euclidean_distance);
    }
    CHECK(worst < 0.5);
  }

  TEST_CASE("analytic and forward-difference DH Jacobians agree") {
    gen::Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
      const DhChain c = gen::chain(rng, 4);
      std::vector<ArmObservation> obs;
      for (int i = 0; i < 5; ++i) {
        const JointReading q = gen::reading(rng, 4);
        obs.push_back({q, jitter(dh_forward(c, q), rng, 1.0, 1.0)});
      }
      const VecX p = c.parameters();
      const ResidualFn fn = [&](const VecX& x) { return arm_residual(c, x, obs, 1.0); };
      const MatX analytic = arm_jacobian(c, p, obs, 1.0);
      const MatX numeric = forward_difference_jacobian(fn, p, fn(p));
      const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
      CHECK((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
  }

  TEST_CASE("calibrate_arm reports unidentifiable directions") {
    // two parallel revolute joints with zero offsets: d1 and d2 only enter as a sum
    DhChain c{{DhJoint{0.0, 10.0, 100.0, 0.0}, DhJoint{0.0, 20.0, 80.0, 0.0}}};
    gen::Rng rng(17);
    const auto obs = observe(c, rng, 10);
    const ArmCalibrationResult r = calibrate_arm(c, obs);
    CHECK_FALSE(r.unidentifiable_directions.empty());
    CHECK_FALSE(r.warnings.empty());
  }

  TEST_CASE("zbar_locate examples") {
    const ZBarFiducial f{0, {0, 0, 0}, {0, 60, 0}, {10, 0, 0}, {10, 60, 0}};
    CHECK((zbar_locate(f, {0, {0, 0}, {5, 0}, {10, 0}}) - 0.5 * (f.b + f.c)).norm() < 1e-12);
    CHECK((zbar_locate(f, {0, {0, 0}, {0, 0}, {10, 0}}) - f.b).norm() < 1e-12);
    CHECK_THROWS_AS(zbar_locate(f, {0, {0, 0}, {0.1, 0}, {0.2, 0}}), DegenerateObservation);
    CHECK_THROWS_AS(zbar_locate(f, {0, {0, 0}, {12, 0}, {10, 0}}), InconsistentObservation);
    CHECK_THROWS_AS(zbar_locate(f, {0, {0, 0}, {-1, 0}, {10, 0}}), InconsistentObservation);
  }

  TEST_CASE("zbar_locate reproduces the analytic diagonal crossing") {
    gen::Rng rng(18);
    const auto phantom = synth_zbar_phantom();
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const RigidTransform3D pose{random_rotation_of_angle(rng, 20.0) * rot_x(90.0),
                                  Vec3(gen::uniform(rng, -50, -40), gen::uniform(rng, -20, 20), gen::uniform(rng, 0, 10))};
      for (const auto& f : phantom) {
        const ZBarIntersection hit = zbar_intersect(f, pose);
        if (!hit.observation) continue;
        CHECK((zbar_locate(f, *hit.observation) - hit.diagonal_point).norm() < 1e-9);
        ++checked;
      }
    }
    CHECK(checked > 100);
  }

  TEST_CASE("zbar_locate is invariant to in-plane rigid motion of the observation") {
    gen::Rng rng(19);
    const ZBarFiducial f{0, {0, 0, 0}, {0, 60, 0}, {10, 0, 0}, {10, 60, 0}};
    for (int trial = 0; trial < 200; ++trial) {
      const double r = gen::uniform(rng, 0.0, 1.0);
      const double len = gen::uniform(rng, 1.0, 20.0);
      const Vec2 p1 = gen::vec2(rng, 50.0);
      const Vec2 dir = Eigen::Rotation2Dd(gen::uniform(rng, -kPi, kPi)) * Vec2::UnitX();
      const ZBarObservation obs{0, p1, p1 + r * len * dir, p1 + len * dir};
      const Eigen::Rotation2Dd rot(gen::uniform(rng, -kPi, kPi));
      const Vec2 shift = gen::vec2(rng, 100.0);
      const ZBarObservation moved{0, rot * obs.p1 + shift, rot * obs.p2 + shift, rot * obs.p3 + shift};
      CHECK((zbar_locate(f, obs) - zbar_locate(f, moved)).norm() < 1e-9);
    }
  }

  TEST_CASE("image_pose_from_zbar recovers a plane from exact crossings") {
    gen::Rng rng(20);
    const auto phantom = synth_zbar_phantom();
    const RigidTransform3D pose{random_rotation_of_angle(rng, 10.0) * rot_x(90.0), Vec3(-45, 5, 5)};
    std::vector<ZBarObservation> obs;
    for (const auto& f : phantom) {
      const auto hit = zbar_intersect(f, pose);
      if (hit.observation) obs.push_back(*hit.observation);
    }
    REQUIRE(obs.size() >= 3);
    const RigidTransform3D fit = image_pose_from_zbar(phantom, obs);
    CHECK(pose_error(fit, pose).euclidean_distance < 1e-8);
    CHECK(pose_error(fit, pose).geodesic_angle < 1e-8);
  }

  TEST_CASE("calibrate_probe on exact motions") {
    gen::Rng rng(21);
    const HandEyeResult id = calibrate_probe(consistent_pairs(RigidTransform3D::identity(), rng, 3));
    CHECK(pose_error(id.x, RigidTransform3D::identity()).euclidean_distance < 1e-10);
    CHECK(pose_error(id.x, RigidTransform3D::identity()).geodesic_angle < 1e-10);

    for (int trial = 0; trial < 20; ++trial) {
      const RigidTransform3D x = gen::transform(rng, 150.0);
      const HandEyeResult r = calibrate_probe(consistent_pairs(x, rng, 5));
      CHECK(pose_error(r.x, x).euclidean_distance < 1e-8);
      CHECK(pose_error(r.x, x).geodesic_angle < 1e-8);
      CHECK(r.max_residual_ed < 1e-8);
      CHECK(r.max_residual_ga < 1e-8);
    }
  }

  TEST_CASE("calibrate_probe under motion noise") {
    gen::Rng rng(22);
    const RigidTransform3D x = default_probe_calibration();
    HandEyeProblem p = consistent_pairs(x, rng, 20);
    for (auto& a : p.a) a = jitter(a, rng, 0.1, 0.1);
    for (const bool polish : {false, true}) {
      HandEyeOptions opt;
      opt.lm_polish = polish;
      const HandEyeResult r = calibrate_probe(p, opt);
      CHECK(pose_error(r.x, x).euclidean_distance < 0.5);
      CHECK(pose_error(r.x, x).geodesic_angle < 0.2);
    }
  }

  TEST_CASE("calibrate_probe rejects degenerate problems") {
    gen::Rng rng(23);
    HandEyeProblem one = consistent_pairs(RigidTransform3D::identity(), rng, 1);
    CHECK_THROWS_AS(calibrate_probe(one), Error);

    // every motion about the same axis
    HandEyeProblem parallel;
    const RigidTransform3D x = gen::transform(rng);
    for (double deg : {20.0, 45.0, 70.0}) {
      const RigidTransform3D a{rot_z(deg), Vec3(deg, 0, 0)};
      parallel.a.push_back(a);
      parallel.b.push_back(compose(inverse(x), compose(a, x)));
    }
    CHECK_THROWS_AS(calibrate_probe(parallel), Error);
  }

  TEST_CASE("Z-bar session: exact recovery without noise") {
    const ZBarSession z = synth_zbar_session(3, default_arm_chain(), 30);
    const SystemCalibration cal = calibrate_system(z.session);
    CHECK((cal.arm.chain.parameters() - z.session.truth->chain.parameters()).cwiseAbs().maxCoeff() < 1e-6);
    const PoseError px = pose_error(cal.probe.x, z.session.truth->probe_calibration);
    CHECK(px.euclidean_distance < 1e-8);
    CHECK(px.geodesic_angle < 1e-8);
  }

  TEST_CASE("full calibration beats arm-only calibration on held-out planes") {
    const ZBarSession z = synth_zbar_session(4, default_arm_chain(), 30);
    const SystemCalibration cal = calibrate_system(z.session);
    const PoseErrorSummary full = verify_calibration(z.session, cal.arm.chain, cal.probe.x, "full");
    const PoseErrorSummary arm = verify_calibration(z.session, cal.arm.chain, RigidTransform3D::identity(), "arm");
    CHECK(full.count == z.session.holdout_readings.size());
    CHECK(full.ed_mean < arm.ed_mean);
    CHECK(full.ed_mean < 1e-6);
  }

  TEST_CASE("summarize_pose_errors uses population statistics") {
    std::vector<PoseError> errs(2);
    errs[0].euclidean_distance = 1.0;
    errs[1].euclidean_distance = 3.0;
    errs[0].geodesic_angle = 2.0;
    errs[1].geodesic_angle = 2.0;
    const PoseErrorSummary s = summarize_pose_errors("x", errs);
    CHECK(s.ed_mean == doctest::Approx(2.0));
    CHECK(s.ed_sd == doctest::Approx(1.0));
    CHECK(s.ga_sd == doctest::Approx(0.0));
    CHECK(s.count == 2);
  }
}
