#include <doctest.h>

#include <chrono>

#include "ablreg/tps.hpp"
#include "../support/generators.hpp"

using namespace ablreg;

namespace {

std::vector<Vec3> cube_corners(double h) {
  std::vector<Vec3> out;
  for (int i = 0; i < 8; ++i) out.push_back(Vec3(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h));
  return out;
}

Volume sphere_mask(int n, double radius) {
  VolumeGeometry g;
  g.dims = {n, n, n};
  g.origin = Vec3::Constant(-(n - 1) / 2.0);
  Volume m = Volume::zeros(g, Modality::MASK, ElementKind::uint8);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        if (g.index_to_world(Vec3(i, j, k)).norm() <= radius) m.at(i, j, k) = 1.0f;
  return m;
}

OrientedBox box(const Vec3& centre, const Vec3& half) { return {RigidTransform3D::from_translation(centre), half}; }

EditState fresh_state(const ControlPointSet& cps) { return {cps, fit_control_points(cps), 0.0}; }

}  // namespace

TEST_SUITE("tps") {
  TEST_CASE("targets equal to sources give the identity") {
    gen::Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
      const auto src = gen::points(rng, 30, 50.0);
      const TpsWarp w = tps_fit(src, src);
      for (int i = 0; i < 100; ++i) {
        const Vec3 x = gen::vec3(rng, 80.0);
        CHECK((w.apply(x) - x).norm() < 1e-8);
      }
      CHECK(std::abs(w.bending_energy()) < 1e-8);
    }
  }

  TEST_CASE("affine targets are reproduced with vanishing kernel weights") {
    gen::Rng rng(72);
    for (int trial = 0; trial < 10; ++trial) {
      const Mat3 a = Mat3::Identity() + 0.2 * Mat3::Random();
      const Vec3 b = gen::vec3(rng, 10.0);
      const auto src = gen::points(rng, 25, 50.0);
      std::vector<Vec3> dst;
      for (const auto& s : src) dst.push_back(a * s + b);
      const TpsWarp w = tps_fit(src, dst);
      for (const auto& wi : w.weights) CHECK(wi.cwiseAbs().maxCoeff() < 1e-8);
      for (int i = 0; i < 50; ++i) {
        const Vec3 x = gen::vec3(rng, 80.0);
        CHECK((w.apply(x) - (a * x + b)).norm() < 1e-8);
      }
    }
  }

  TEST_CASE("exact interpolation and side conditions at lambda zero") {
    gen::Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
      const auto src = gen::points(rng, gen::uniform_int(rng, 5, 60), 50.0);
      std::vector<Vec3> dst;
      for (const auto& s : src) dst.push_back(s + gen::vec3(rng, 5.0));
      const TpsWarp w = tps_fit(src, dst);
      Vec3 sum = Vec3::Zero();
      Mat3 moment = Mat3::Zero();
      for (std::size_t i = 0; i < src.size(); ++i) {
        CHECK((w.apply(src[i]) - dst[i]).norm() < 1e-8);
        sum += w.weights[i];
        moment += w.weights[i] * src[i].transpose();
      }
      CHECK(sum.norm() < 1e-8);
      CHECK(moment.cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  TEST_CASE("bending energy is non-negative and non-increasing in lambda") {
    gen::Rng rng(74);
    for (int trial = 0; trial < 10; ++trial) {
      const auto src = gen::points(rng, 30, 50.0);
      std::vector<Vec3> dst;
      for (const auto& s : src) dst.push_back(s + gen::vec3(rng, 5.0));
      double prev = std::numeric_limits<double>::infinity();
      for (const double lambda : {0.0, 0.1, 1.0, 10.0}) {
        const double e = tps_fit(src, dst, lambda).bending_energy();
        CHECK(e >= -1e-9);
        CHECK(e <= prev + 1e-9);
        prev = e;
      }
    }
  }

  TEST_CASE("degenerate configurations are rejected") {
    const std::vector<Vec3> three{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    CHECK_THROWS_AS(tps_fit(three, three), DegenerateConfiguration);
    const std::vector<Vec3> coplanar{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {2, 3, 0}};
    CHECK_THROWS_AS(tps_fit(coplanar, coplanar), DegenerateConfiguration);
    const std::vector<Vec3> duplicate{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}};
    try {
      tps_fit(duplicate, duplicate);
      FAIL("expected DegenerateConfiguration");
    } catch (const DegenerateConfiguration& e) {
      CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
    CHECK_THROWS_AS(tps_fit(cube_corners(1), std::vector<Vec3>(7)), Error);
  }

  TEST_CASE("batch evaluation matches pointwise and serial matches parallel") {
    gen::Rng rng(75);
    const auto src = gen::points(rng, 40, 50.0);
    std::vector<Vec3> dst;
    for (const auto& s : src) dst.push_back(s + gen::vec3(rng, 5.0));
    const TpsWarp w = tps_fit(src, dst);
    const auto pts = gen::points(rng, 500, 60.0);
    const auto a = tps_apply(w, pts, Exec::serial);
    const auto b = tps_apply(w, pts, Exec::parallel);
    CHECK(a == b);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((a[i] - w.apply(pts[i])).norm() < 1e-12);
  }

  TEST_CASE("identity warp resamples a volume bit-for-bit") {
    gen::Rng rng(76);
    const Volume v = gen::random_volume(rng, {12, 11, 10}, {1.0, 1.2, 0.8});
    const Volume out = tps_apply_volume(TpsWarp::identity(), v, v.geometry);
    CHECK(out.scalars == v.scalars);
    const Volume fitted = tps_apply_volume(tps_fit(cube_corners(20), cube_corners(20)), v, v.geometry);
    for (std::size_t i = 0; i < v.scalars.size(); ++i) CHECK(std::abs(fitted.scalars[i] - v.scalars[i]) < 1e-5);
  }

  TEST_CASE("translation warp shifts a ramp by the analytic amount") {
    VolumeGeometry g;
    g.dims = {31, 9, 9};
    g.origin = Vec3(-15, -4, -4);
    const Volume ramp = gen::field_volume(g, [](const Vec3& p) { return p.x(); });
    const auto src = cube_corners(30);
    std::vector<Vec3> dst;
    for (const auto& s : src) dst.push_back(s + Vec3(5, 0, 0));
    const Volume out = tps_apply_volume(tps_fit(src, dst), ramp, g);
    for (int k = 0; k < 9; ++k)
      for (int j = 0; j < 9; ++j)
        for (int i = 0; i < 31; ++i) {
          const double x = g.index_to_world(Vec3(i, j, k)).x();
          if (x + 5.0 <= 15.0) CHECK(std::abs(out.at(i, j, k) - (x + 5.0)) < 1e-5);
          else CHECK(out.at(i, j, k) == 0.0f);
        }
  }

  TEST_CASE("inverse warp field undoes a smooth warp") {
    gen::Rng rng(77);
    auto src = cube_corners(60);
    std::vector<Vec3> dst = src;
    for (int i = 0; i < 6; ++i) {
      src.push_back(gen::vec3(rng, 30.0));
      dst.push_back(src.back() + gen::vec3(rng, 4.0));
    }
    const TpsWarp w = tps_fit(src, dst);
    const InverseWarpField inv = build_inverse_field(w, Vec3::Constant(-50), Vec3::Constant(50), 2.0);
    CHECK_FALSE(inv.identity);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p = gen::vec3(rng, 35.0);
      CHECK((inv.apply(w.apply(p)) - p).norm() < 0.1);
    }
    CHECK(build_inverse_field(TpsWarp::identity(), Vec3::Zero(), Vec3::Ones(), 1.0).identity);
  }
}

TEST_SUITE("controlpoints") {
  TEST_CASE("workspace covering the whole mask yields no anchors") {
    const Volume m = sphere_mask(31, 12.0);
    const ControlPointSet s = generate_control_points(m, box(Vec3::Zero(), Vec3::Constant(20)), 5.0);
    CHECK(s.anchor_count() == 0);
    CHECK(s.movable_count() > 0);
    for (const auto& p : s.points) CHECK(*sample_trilinear(m, p.position) == 1.0);
    CHECK_NOTHROW(s.validate());
  }

  TEST_CASE("workspace disjoint from the mask is rejected") {
    const Volume m = sphere_mask(31, 12.0);
    CHECK_THROWS_AS(generate_control_points(m, box(Vec3(100, 0, 0), Vec3::Constant(5)), 5.0), Error);
    CHECK_THROWS_AS(generate_control_points(m, box(Vec3::Zero(), Vec3::Constant(20)), 0.0), Error);
  }

  TEST_CASE("half-space workspace puts anchors only on the excluded hemisphere") {
    const Volume m = sphere_mask(41, 15.0);
    const ControlPointSet s = generate_control_points(m, box(Vec3(0, 0, 20), Vec3(30, 30, 20)), 5.0);
    CHECK(s.anchor_count() > 0);
    CHECK(s.movable_count() > 0);
    for (const auto& p : s.points) {
      if (p.role == ControlRole::anchor) {
        CHECK(p.position.z() < 0.0);
        CHECK(std::abs(p.position.norm() - 15.0) <= std::sqrt(3.0));
      } else {
        CHECK(p.position.z() >= 0.0);
      }
    }
  }

  TEST_CASE("control point generation is deterministic") {
    const Volume m = sphere_mask(31, 12.0);
    const ControlPointSet a = generate_control_points(m, box(Vec3(0, 0, 5), Vec3(20, 20, 8)), 4.0);
    const ControlPointSet b = generate_control_points(m, box(Vec3(0, 0, 5), Vec3(20, 20, 8)), 4.0);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      CHECK(a.points[i].id == b.points[i].id);
      CHECK(a.points[i].position == b.points[i].position);
    }
  }

  TEST_CASE("drag examples") {
    const Volume m = sphere_mask(41, 15.0);
    const ControlPointSet cps = generate_control_points(m, box(Vec3(0, 0, 20), Vec3(30, 30, 20)), 5.0);
    const EditState s0 = fresh_state(cps);
    gen::Rng rng(78);
    const auto probes = gen::points(rng, 100, 20.0);

    int movable = -1, anchor = -1;
    for (const auto& p : cps.points) (p.role == ControlRole::movable ? movable : anchor) = p.id;
    REQUIRE(movable >= 0);
    REQUIRE(anchor >= 0);

    const EditState zero = drag_update(s0, movable, Vec3::Zero());
    for (const auto& p : probes) CHECK((zero.warp.apply(p) - s0.warp.apply(p)).norm() < 1e-10);

    const Vec3 d(1.5, -2.0, 0.5);
    const EditState moved = drag_update(s0, movable, d);
    const Vec3 pos = cps.find(movable)->position;
    CHECK((moved.warp.apply(pos) - (pos + d)).norm() < 1e-8);
    CHECK(s0.control_points.find(movable)->displacement == Vec3::Zero());

    const EditState back = drag_update(moved, movable, Vec3::Zero());
    for (const auto& p : probes) CHECK((back.warp.apply(p) - p).norm() < 1e-8);

    CHECK_THROWS_AS(drag_update(s0, anchor, d), ControlRoleError);
    CHECK_THROWS_AS(drag_update(s0, 1 << 30, d), UnknownControlPoint);
  }

  TEST_CASE("anchors never move under random drag sequences") {
    const Volume m = sphere_mask(41, 15.0);
    const ControlPointSet cps = generate_control_points(m, box(Vec3(0, 0, 20), Vec3(30, 30, 20)), 5.0);
    std::vector<int> movable;
    for (const auto& p : cps.points)
      if (p.role == ControlRole::movable) movable.push_back(p.id);
    gen::Rng rng(79);
    for (int seq = 0; seq < 5; ++seq) {
      EditState s = fresh_state(cps);
      for (int step = 0; step < 8; ++step) {
        const int id = movable[static_cast<std::size_t>(gen::uniform_int(rng, 0, static_cast<int>(movable.size()) - 1))];
        s = drag_update(s, id, gen::vec3(rng, 4.0));
      }
      for (const auto& p : s.control_points.points) {
        if (p.role == ControlRole::anchor) CHECK((s.warp.apply(p.position) - p.position).norm() < 1e-8);
      }
    }
  }

  TEST_CASE("drag refit stays interactive at 500 control points") {
    gen::Rng rng(80);
    ControlPointSet cps;
    for (int i = 0; i < 500; ++i) cps.points.push_back({i, gen::vec3(rng, 60.0), Vec3::Zero(), i % 5 ? ControlRole::movable : ControlRole::anchor});
    const EditState s = fresh_state(cps);
    const auto t0 = std::chrono::steady_clock::now();
    const EditState next = drag_update(s, 1, Vec3(2, 0, 0));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    CHECK(next.warp.size() == 500);
    CHECK(ms <= 100.0);
  }

  TEST_CASE("fit_control_points is the identity before any drag") {
    gen::Rng rng(81);
    ControlPointSet cps;
    for (int i = 0; i < 50; ++i) cps.points.push_back({i, gen::vec3(rng, 40.0), Vec3::Zero(), ControlRole::movable});
    const TpsWarp w = fit_control_points(cps);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p = gen::vec3(rng, 60.0);
      CHECK(w.apply(p) == p);
    }
  }

  TEST_CASE("control point set validation") {
    ControlPointSet s;
    s.points.push_back({1, Vec3::Zero(), Vec3::Zero(), ControlRole::movable});
    s.points.push_back({1, Vec3::Ones(), Vec3::Zero(), ControlRole::movable});
    CHECK_THROWS_AS(s.validate(), Error);
    s.points[1].id = 2;
    s.points[1].role = ControlRole::anchor;
    s.points[1].displacement = Vec3(1, 0, 0);
    CHECK_THROWS_AS(s.validate(), Error);
    CHECK(role_from_string(to_string(ControlRole::anchor)) == ControlRole::anchor);
  }
}
