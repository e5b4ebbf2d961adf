#include <doctest.h>

#include "ablreg/metrics.hpp"
#include "ablreg/point_cloud.hpp"
#include "ablreg/synth.hpp"
#include "../support/generators.hpp"

using namespace ablreg;

namespace {

Volume mask_volume(std::array<int, 3> dims) {
  VolumeGeometry g;
  g.dims = dims;
  return Volume::zeros(g, Modality::MASK, ElementKind::uint8);
}

PointCloud transformed(const PointCloud& c, const RigidTransform3D& t) {
  PointCloud out;
  out.frame = "target";
  for (const auto& p : c.points) out.points.push_back(t.apply(p));
  return out;
}

// Small vessel tree surface, shared by the CPD cases.
const PointCloud& tree_cloud() {
  static const PointCloud cloud = [] {
    const VesselTree tree = synth_vessel_tree(5, 6, 100.0);
    return extract_surface_points(tree.mask, 600, 5);
  }();
  return cloud;
}

}  // namespace

TEST_SUITE("pointcloud") {
  TEST_CASE("single voxel yields its centre") {
    Volume m = mask_volume({5, 5, 5});
    m.geometry.origin = Vec3(1, 2, 3);
    m.at(2, 3, 4) = 1.0f;
    const PointCloud c = extract_surface_points(m, 100);
    REQUIRE(c.size() == 1);
    CHECK(c.points[0] == m.geometry.index_to_world(Vec3(2, 3, 4)));
  }

  TEST_CASE("solid cube keeps only its shell") {
    Volume m = mask_volume({12, 12, 12});
    for (int k = 1; k <= 10; ++k)
      for (int j = 1; j <= 10; ++j)
        for (int i = 1; i <= 10; ++i) m.at(i, j, k) = 1.0f;
    CHECK(extract_surface_points(m, 10000).size() == 1000 - 512);
    CHECK(extract_surface_points(m, 100).size() <= 100);
  }

  TEST_CASE("foreground touching the grid edge counts as boundary") {
    Volume m = mask_volume({3, 3, 3});
    std::fill(m.scalars.begin(), m.scalars.end(), 1.0f);
    CHECK(extract_surface_points(m, 100).size() == 26);
  }

  TEST_CASE("digitized sphere points lie near the analytic surface") {
    Volume m = mask_volume({51, 51, 51});
    const Vec3 c(25, 25, 25);
    for (int k = 0; k < 51; ++k)
      for (int j = 0; j < 51; ++j)
        for (int i = 0; i < 51; ++i)
          if ((Vec3(i, j, k) - c).norm() <= 20.0) m.at(i, j, k) = 1.0f;
    const PointCloud pc = extract_surface_points(m, 100000);
    CHECK(pc.size() > 1000);
    for (const auto& p : pc.points) CHECK(std::abs((p - c).norm() - 20.0) <= std::sqrt(3.0));
  }

  TEST_CASE("empty mask is rejected") { CHECK_THROWS_AS(extract_surface_points(mask_volume({4, 4, 4}), 10), Error); }

  TEST_CASE("surface extraction is deterministic") {
    const VesselTree tree = synth_vessel_tree(9, 4, 80.0);
    const PointCloud a = extract_surface_points(tree.mask, 500, 3);
    const PointCloud b = extract_surface_points(tree.mask, 500, 3);
    CHECK(a.points == b.points);
  }

  TEST_CASE("stride subsampling is deterministic and bounded") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto idx = stride_subsample(1000, 300, seed);
      CHECK(idx.size() <= 300);
      CHECK(idx == stride_subsample(1000, 300, seed));
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
    CHECK(stride_subsample(10, 300, 1).size() == 10);
  }

  TEST_CASE("CPD with source equal to target returns identity") {
    CpdConfig cfg;
    cfg.outlier_weight = 0.0;
    const CpdResult r = register_rigid_cpd(tree_cloud(), tree_cloud(), cfg);
    CHECK(pose_error(r.transform, RigidTransform3D::identity()).euclidean_distance < 1e-6);
    CHECK(pose_error(r.transform, RigidTransform3D::identity()).geodesic_angle < 1e-6);
  }

  TEST_CASE("CPD recovers an exact 15 degree / 20 mm offset") {
    gen::Rng rng(61);
    for (int trial = 0; trial < 3; ++trial) {
      const RigidTransform3D g = gen::offset(rng, 15.0, 20.0);
      CpdConfig cfg;
      cfg.outlier_weight = 0.0;
      cfg.tolerance = 1e-12;
      cfg.max_iterations = 500;
      const CpdResult r = register_rigid_cpd(tree_cloud(), transformed(tree_cloud(), g), cfg);
      CHECK(pose_error(r.transform, g).euclidean_distance < 1e-3);
      CHECK(pose_error(r.transform, g).geodesic_angle < 1e-3);
      CHECK(r.diagnostics.monotone);
    }
  }

  TEST_CASE("CPD tolerates noise and outliers") {
    gen::Rng rng(62);
    const RigidTransform3D g = gen::offset(rng, 15.0, 20.0);
    PointCloud target = transformed(tree_cloud(), g);
    for (auto& p : target.points) p += gen::gaussian3(rng, 1.0);
    const std::size_t n_out = target.size() / 10;
    for (std::size_t i = 0; i < n_out; ++i) target.points.push_back(g.apply(gen::vec3(rng, 50.0)));
    CpdConfig cfg;
    cfg.outlier_weight = 0.1;
    const CpdResult r = register_rigid_cpd(tree_cloud(), target, cfg);
    CHECK(mean_nearest_distance(tree_cloud().points, target.points, r.transform) < 2.0);
    CHECK(pose_error(r.transform, g).geodesic_angle < 1.0);
    CHECK(r.diagnostics.monotone);
    CHECK(r.diagnostics.log_likelihood.size() == static_cast<std::size_t>(r.diagnostics.iterations));
    for (std::size_t i = 1; i < r.diagnostics.log_likelihood.size(); ++i) {
      const double prev = r.diagnostics.log_likelihood[i - 1];
      CHECK(r.diagnostics.log_likelihood[i] >= prev - 1e-9 * std::abs(prev));
    }
  }

  TEST_CASE("CPD is equivariant under a common rigid motion") {
    gen::Rng rng(63);
    const RigidTransform3D t = gen::offset(rng, 10.0, 10.0);
    const PointCloud target = transformed(tree_cloud(), t);
    CpdConfig cfg;
    cfg.outlier_weight = 0.0;
    const CpdResult base = register_rigid_cpd(tree_cloud(), target, cfg);
    for (int trial = 0; trial < 3; ++trial) {
      const RigidTransform3D g = gen::transform(rng, 50.0);
      const CpdResult moved = register_rigid_cpd(transformed(tree_cloud(), g), transformed(target, g), cfg);
      const Mat4 expected = compose(g, compose(base.transform, inverse(g))).matrix();
      CHECK((moved.transform.matrix() - expected).cwiseAbs().maxCoeff() < 1e-4);
    }
  }

  TEST_CASE("CPD never returns a reflection on planar clouds") {
    gen::Rng rng(64);
    for (int trial = 0; trial < 5; ++trial) {
      PointCloud src, dst;
      for (int i = 0; i < 50; ++i) {
        const Vec3 p(gen::uniform(rng, -20, 20), gen::uniform(rng, -20, 20), 0.0);
        src.points.push_back(p);
        dst.points.push_back(Vec3(p.x(), -p.y(), 0.0));  // mirror image
      }
      const CpdResult r = register_rigid_cpd(src, dst);
      CHECK(r.transform.is_valid(1e-9));
      CHECK(r.transform.rotation.determinant() > 0.0);
    }
  }

  TEST_CASE("CPD serial and parallel execution agree") {
    gen::Rng rng(65);
    const PointCloud target = transformed(tree_cloud(), gen::offset(rng, 10.0, 10.0));
    CpdConfig serial;
    serial.exec = Exec::serial;
    CpdConfig parallel;
    const CpdResult a = register_rigid_cpd(tree_cloud(), target, serial);
    const CpdResult b = register_rigid_cpd(tree_cloud(), target, parallel);
    CHECK((a.transform.matrix() - b.transform.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(a.diagnostics.iterations == b.diagnostics.iterations);
  }

  TEST_CASE("CPD input validation") {
    PointCloud tiny;
    tiny.points = {Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY()};
    CHECK_THROWS_AS(register_rigid_cpd(tiny, tree_cloud()), Error);
    PointCloud bad = tree_cloud();
    bad.points[0].x() = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(register_rigid_cpd(bad, tree_cloud()), Error);
    CpdConfig cfg;
    cfg.outlier_weight = 1.0;
    CHECK_THROWS_AS(register_rigid_cpd(tree_cloud(), tree_cloud(), cfg), CpdError);
    cfg = {};
    cfg.sigma2_init = -1.0;
    CHECK_THROWS_AS(register_rigid_cpd(tree_cloud(), tree_cloud(), cfg), CpdError);
  }

  TEST_CASE("CPD closes the loop with landmark error") {
    const VesselTree tree = synth_vessel_tree(12, 5, 90.0);
    const PointCloud src = extract_surface_points(tree.mask, 500, 0);
    gen::Rng rng(66);
    const RigidTransform3D g = gen::offset(rng, 12.0, 15.0);
    CpdConfig cfg;
    cfg.outlier_weight = 0.0;
    cfg.tolerance = 1e-12;
    cfg.max_iterations = 500;
    const CpdResult r = register_rigid_cpd(src, transformed(src, g), cfg);
    LandmarkSet moved = tree.bifurcations;
    for (auto& [name, p] : moved.points) p = g.apply(p);
    const DistanceStats s = landmark_error(tree.bifurcations, moved, [&](const Vec3& p) { return r.transform.apply(p); });
    CHECK(s.mean < 1e-3);
  }
}
