#include <doctest.h>

#include <filesystem>

#include "ablreg/json_io.hpp"
#include "ablreg/synth.hpp"
#include "../support/generators.hpp"

using namespace ablreg;

namespace {

// Serializes to text and back so the number formatting is exercised too.
template <typename T>
T round_trip(const T& value) {
  const Json j = value;
  return Json::parse(j.dump()).get<T>();
}

}  // namespace

TEST_SUITE("json") {
  TEST_CASE("rigid transforms round-trip exactly") {
    gen::Rng rng(111);
    for (int i = 0; i < 50; ++i) {
      const RigidTransform3D t = gen::transform(rng, 100.0);
      CHECK(round_trip(t).matrix() == t.matrix());
    }
    Json bad = RigidTransform3D::identity();
    bad["matrix"][3][0] = 1.0;
    CHECK_THROWS_AS(bad.get<RigidTransform3D>(), Error);
    CHECK_THROWS_AS(vec3_from_json(Json::array({1, 2})), Error);
  }

  TEST_CASE("DH chains and calibration sessions round-trip") {
    gen::Rng rng(112);
    DhChain c = gen::chain(rng, 5);
    c.joints[2].kind = JointKind::prismatic;
    const DhChain back = round_trip(c);
    CHECK(back.parameters() == c.parameters());
    CHECK(back.joints[2].kind == JointKind::prismatic);

    const ZBarSession zs = synth_zbar_session(3, default_arm_chain(), 6);
    const CalibrationSession s = round_trip(zs.session);
    REQUIRE(s.readings.size() == zs.session.readings.size());
    for (std::size_t i = 0; i < s.readings.size(); ++i) {
      CHECK(s.readings[i].values == zs.session.readings[i].values);
      CHECK(s.measured_poses[i].matrix() == zs.session.measured_poses[i].matrix());
      REQUIRE(s.zbar_observations[i].size() == zs.session.zbar_observations[i].size());
      for (std::size_t k = 0; k < s.zbar_observations[i].size(); ++k) {
        CHECK(s.zbar_observations[i][k].fiducial_id == zs.session.zbar_observations[i][k].fiducial_id);
        CHECK(s.zbar_observations[i][k].p2 == zs.session.zbar_observations[i][k].p2);
      }
    }
    CHECK(s.zbar_fiducials.size() == zs.session.zbar_fiducials.size());
    CHECK(s.holdout_readings.size() == zs.session.holdout_readings.size());
    REQUIRE(s.truth.has_value());
    CHECK(s.truth->probe_calibration.matrix() == zs.session.truth->probe_calibration.matrix());
    REQUIRE(s.phantom_pose.has_value());
    CHECK(s.phantom_pose->matrix() == zs.session.phantom_pose->matrix());
  }

  TEST_CASE("TPS warp refits to the same mapping") {
    gen::Rng rng(113);
    const auto src = gen::points(rng, 20, 40.0);
    std::vector<Vec3> dst;
    for (const auto& s : src) dst.push_back(s + gen::vec3(rng, 4.0));
    const TpsWarp w = tps_fit(src, dst, 0.5);
    const TpsWarp back = round_trip(w);
    CHECK(back.lambda == w.lambda);
    for (int i = 0; i < 50; ++i) {
      const Vec3 p = gen::vec3(rng, 50.0);
      CHECK(back.apply(p) == w.apply(p));
    }
    CHECK(round_trip(TpsWarp::identity()).size() == 0);
  }

  TEST_CASE("control points, workspace, centrelines and landmarks round-trip") {
    ControlPointSet cps;
    cps.points.push_back({0, Vec3(1, 2, 3), Vec3(0.5, 0, 0), ControlRole::movable});
    cps.points.push_back({4, Vec3(-1, 0, 2), Vec3::Zero(), ControlRole::anchor});
    const ControlPointSet c2 = round_trip(cps);
    REQUIRE(c2.points.size() == 2);
    CHECK(c2.points[1].id == 4);
    CHECK(c2.points[1].role == ControlRole::anchor);
    CHECK(c2.points[0].displacement == cps.points[0].displacement);

    gen::Rng rng(114);
    const OrientedBox b{gen::transform(rng, 20.0), Vec3(5, 6, 7)};
    const OrientedBox b2 = round_trip(b);
    CHECK(b2.pose.matrix() == b.pose.matrix());
    CHECK(b2.half_extent == b.half_extent);
    Json bad = b;
    bad["half_extent"] = Json::array({1, -1, 1});
    CHECK_THROWS_AS(bad.get<OrientedBox>(), Error);

    const VesselTree t = synth_vessel_tree(2, 3, 50.0);
    const Centerline cl = round_trip(t.centerline);
    CHECK(cl.frame == t.centerline.frame);
    CHECK(cl.vertices() == t.centerline.vertices());
    const LandmarkSet lm = round_trip(t.bifurcations);
    CHECK(lm.frame == t.bifurcations.frame);
    CHECK(lm.points == t.bifurcations.points);
  }

  TEST_CASE("slice poses and point clouds round-trip") {
    gen::Rng rng(115);
    SlicePose p;
    p.transform = gen::transform(rng, 30.0);
    p.width_mm = 80.0;
    p.height_mm = 64.0;
    p.nu = 81;
    p.nv = 65;
    const SlicePose p2 = round_trip(p);
    CHECK(p2.transform.matrix() == p.transform.matrix());
    CHECK(p2.nu == 81);
    CHECK(p2.height_mm == 64.0);

    PointCloud pc;
    pc.frame = "US";
    pc.points = gen::points(rng, 30, 10.0);
    const PointCloud pc2 = round_trip(pc);
    CHECK(pc2.frame == "US");
    CHECK(pc2.points == pc.points);
  }

  TEST_CASE("files round-trip through disk") {
    const auto path = std::filesystem::temp_directory_path() / "ablreg_json_test.json";
    const Json j = {{"a", 1.25}, {"b", Json::array({1, 2, 3})}};
    write_json_file(path.string(), j);
    CHECK(read_json_file(path.string()) == j);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_json_file(path.string()), Error);
  }
}
