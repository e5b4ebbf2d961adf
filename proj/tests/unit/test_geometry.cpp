#include <doctest.h>

#include "ablreg/geometry.hpp"
#include "ablreg/levenberg_marquardt.hpp"
#include "../support/generators.hpp"

using namespace ablreg;

TEST_SUITE("geometry") {
  TEST_CASE("pose_error of identical poses is exactly zero") {
    gen::Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const auto t = gen::transform(rng);
      const PoseError e = pose_error(t, t);
      CHECK(e.translational == Vec3::Zero());
      CHECK(e.euclidean_distance == 0.0);
      CHECK(e.rotational == Vec3::Zero());
      CHECK(e.geodesic_angle == 0.0);
    }
  }

  TEST_CASE("pose_error examples") {
    const PoseError shift = pose_error(RigidTransform3D::from_translation({3, 4, 0}), RigidTransform3D::identity());
    CHECK(shift.euclidean_distance == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(shift.geodesic_angle == 0.0);

    const PoseError turn = pose_error(RigidTransform3D::from_rotation(rot_z(10.0)), RigidTransform3D::identity());
    CHECK(turn.geodesic_angle == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(turn.rotational.z() == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(turn.rotational.x()) < 1e-12);
    CHECK(std::abs(turn.rotational.y()) < 1e-12);
    CHECK(turn.euclidean_distance == 0.0);
  }

  TEST_CASE("geodesic angle is invariant under common left composition") {
    gen::Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const auto a = gen::transform(rng), b = gen::transform(rng), g = gen::transform(rng);
      const double ga = pose_error(a, b).geodesic_angle;
      const double gga = pose_error(compose(g, a), compose(g, b)).geodesic_angle;
      CHECK(std::abs(ga - gga) < 1e-6);
    }
  }

  TEST_CASE("compose is associative") {
    gen::Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const auto a = gen::transform(rng), b = gen::transform(rng), c = gen::transform(rng);
      const Mat4 lhs = compose(compose(a, b), c).matrix();
      const Mat4 rhs = compose(a, compose(b, c)).matrix();
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("inverse composes to identity") {
    gen::Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const auto t = gen::transform(rng);
      CHECK((compose(t, inverse(t)).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("Euler XYZ round trip and agreement with an explicit product") {
    gen::Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const Vec3 angles(gen::uniform(rng, -170, 170), gen::uniform(rng, -80, 80), gen::uniform(rng, -170, 170));
      const Mat3 r = from_euler_xyz_deg(angles);
      CHECK((r - rot_z(angles.z()) * rot_y(angles.y()) * rot_x(angles.x())).cwiseAbs().maxCoeff() < 1e-14);
      CHECK((euler_xyz_deg(r) - angles).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("exp and log maps are inverse") {
    gen::Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      Vec3 w = gen::vec3(rng, 1.0);
      if (w.norm() > 3.0) w *= 3.0 / w.norm();
      CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-10);
    }
    // angle of pi: the axis must survive up to sign
    const Vec3 axis = Vec3(1, 2, 3).normalized();
    const Vec3 w = log_so3(exp_so3(kPi * axis));
    CHECK(std::abs(w.norm() - kPi) < 1e-9);
    CHECK(std::abs(std::abs(w.normalized().dot(axis)) - 1.0) < 1e-9);
  }

  TEST_CASE("geodesic angle matches the trace formula") {
    gen::Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const Mat3 a = random_rotation(rng), b = random_rotation(rng);
      const double c = std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
      CHECK(geodesic_angle_deg(a, b) == doctest::Approx(std::acos(c) * kRadToDeg).epsilon(1e-9));
    }
  }

  TEST_CASE("from_matrix rejects non-rigid blocks") {
    Mat4 m = Mat4::Identity();
    m(0, 0) = 2.0;
    CHECK_THROWS_AS(RigidTransform3D::from_matrix(m), Error);
    Mat4 reflect = Mat4::Identity();
    reflect(2, 2) = -1.0;
    CHECK_THROWS_AS(RigidTransform3D::from_matrix(reflect), Error);
    Mat4 bad_row = Mat4::Identity();
    bad_row(3, 0) = 1.0;
    CHECK_THROWS_AS(RigidTransform3D::from_matrix(bad_row), Error);
  }

  TEST_CASE("fit_rigid_points recovers a transform and never reflects") {
    gen::Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const auto t = gen::transform(rng);
      const auto src = gen::points(rng, 20, 50.0);
      std::vector<Vec3> dst;
      for (const auto& p : src) dst.push_back(t.apply(p));
      const auto fit = fit_rigid_points(src, dst);
      CHECK(pose_error(fit, t).euclidean_distance < 1e-9);
      CHECK(pose_error(fit, t).geodesic_angle < 1e-7);
    }
    // mirrored planar input must still produce a proper rotation
    std::vector<Vec3> src{{0, 0, 0}, {10, 0, 0}, {0, 10, 0}, {10, 10, 0}};
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back({p.x(), -p.y(), 0});
    CHECK(fit_rigid_points(src, dst).is_valid());
  }
}

TEST_SUITE("lm") {
  TEST_CASE("linear least squares") {
    std::vector<double> xs{0, 1, 2, 3, 4, 5};
    const ResidualFn r = [&](const VecX& p) {
      VecX out(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = p[0] * xs[i] + p[1] - (2.0 * xs[i] + 1.0);
      return out;
    };
    const LmResult res = lm_minimize(r, {}, VecX::Zero(2));
    CHECK(std::abs(res.parameters[0] - 2.0) < 1e-12);
    CHECK(std::abs(res.parameters[1] - 1.0) < 1e-12);
  }

  TEST_CASE("Rosenbrock from (-1.2, 1)") {
    const ResidualFn r = [](const VecX& p) {
      VecX out(2);
      out << 1.0 - p[0], 10.0 * (p[1] - p[0] * p[0]);
      return out;
    };
    const JacobianFn j = [](const VecX& p) {
      MatX out(2, 2);
      out << -1.0, 0.0, -20.0 * p[0], 10.0;
      return out;
    };
    VecX init(2);
    init << -1.2, 1.0;
    for (const bool analytic : {true, false}) {
      const LmResult res = lm_minimize(r, analytic ? j : JacobianFn{}, init);
      CHECK(std::abs(res.parameters[0] - 1.0) < 1e-8);
      CHECK(std::abs(res.parameters[1] - 1.0) < 1e-8);
      CHECK(res.converged());
    }
  }

  TEST_CASE("exponential decay rate") {
    const ResidualFn r = [](const VecX& p) {
      VecX out(11);
      for (int t = 0; t <= 10; ++t) out[t] = std::exp(-p[0] * t) - std::exp(-0.5 * t);
      return out;
    };
    const LmResult res = lm_minimize(r, {}, VecX::Constant(1, 0.1));
    CHECK(std::abs(res.parameters[0] - 0.5) < 1e-9);
  }

  TEST_CASE("non-finite residual names the iterate") {
    const ResidualFn r = [](const VecX& p) {
      VecX out(1);
      out[0] = std::log(p[0]);
      return out;
    };
    try {
      lm_minimize(r, {}, VecX::Constant(1, -1.0));
      FAIL("expected NonFiniteResidual");
    } catch (const NonFiniteResidual& e) {
      CHECK(e.iterate.size() == 1);
      CHECK(e.iterate[0] == -1.0);
    }
  }
}
