#include "ablreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "ablreg/levenberg_marquardt.hpp"

namespace ablreg {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double gauss(std::mt19937_64& rng, double sigma) {
  return sigma > 0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
}

Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 ref = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return d.cross(ref).normalized();
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Smooth value noise in [-1, 1] with lattice pitch `cell` mm.
double value_noise(const Vec3& p, double cell, std::uint64_t seed) {
  const Vec3 q = p / cell;
  const Eigen::Vector3d fl(std::floor(q.x()), std::floor(q.y()), std::floor(q.z()));
  const Vec3 f = q - fl;
  const auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const Vec3 w(fade(f.x()), fade(f.y()), fade(f.z()));
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const auto i = static_cast<std::int64_t>(fl.x()) + (c & 1);
    const auto j = static_cast<std::int64_t>(fl.y()) + ((c >> 1) & 1);
    const auto k = static_cast<std::int64_t>(fl.z()) + ((c >> 2) & 1);
    const std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i) * 0x8da6b343ULL ^
                                                     static_cast<std::uint64_t>(j) * 0xd8163841ULL ^
                                                     static_cast<std::uint64_t>(k) * 0xcb1ab31fULL));
    const double v = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0;
    const double wt = ((c & 1) ? w.x() : 1 - w.x()) * (((c >> 1) & 1) ? w.y() : 1 - w.y()) *
                      (((c >> 2) & 1) ? w.z() : 1 - w.z());
    acc += wt * v;
  }
  return acc;
}

VolumeGeometry cube_geometry(const Vec3& centre, double extent, double spacing) {
  VolumeGeometry g;
  const int n = static_cast<int>(std::lround(extent / spacing)) + 1;
  g.dims = {n, n, n};
  g.spacing = Vec3::Constant(spacing);
  g.origin = centre - Vec3::Constant(0.5 * (n - 1) * spacing);
  return g;
}

}  // namespace

// --- vessel trees -----------------------------------------------------------

Volume rasterize_tubes(const std::vector<TubeSegment>& segments, const VolumeGeometry& geometry) {
  Volume mask = Volume::zeros(geometry, Modality::MASK, ElementKind::uint8);
  const auto& d = geometry.dims;
  for (const TubeSegment& s : segments) {
    Vec3 lo = s.a.cwiseMin(s.b) - Vec3::Constant(s.radius);
    Vec3 hi = s.a.cwiseMax(s.b) + Vec3::Constant(s.radius);
    // index-space bounding box (direction may rotate the grid)
    Vec3 ilo = Vec3::Constant(std::numeric_limits<double>::infinity()), ihi = -ilo;
    for (int c = 0; c < 8; ++c) {
      const Vec3 corner((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
      const Vec3 ijk = geometry.world_to_index(corner);
      ilo = ilo.cwiseMin(ijk);
      ihi = ihi.cwiseMax(ijk);
    }
    const int i0 = std::max(0, static_cast<int>(std::floor(ilo.x()))), i1 = std::min(d[0] - 1, static_cast<int>(std::ceil(ihi.x())));
    const int j0 = std::max(0, static_cast<int>(std::floor(ilo.y()))), j1 = std::min(d[1] - 1, static_cast<int>(std::ceil(ihi.y())));
    const int k0 = std::max(0, static_cast<int>(std::floor(ilo.z()))), k1 = std::min(d[2] - 1, static_cast<int>(std::ceil(ihi.z())));
    for (int k = k0; k <= k1; ++k) {
      for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
          if (mask.at(i, j, k) > 0.5f) continue;
          if (point_segment_distance(geometry.index_to_world(Vec3(i, j, k)), s.a, s.b) <= s.radius) {
            mask.at(i, j, k) = 1.0f;
          }
        }
      }
    }
  }
  return mask;
}

Centerline sample_centerline(const std::vector<TubeSegment>& segments, double step, const std::string& frame) {
  Centerline cl;
  cl.frame = frame;
  for (const TubeSegment& s : segments) {
    const double len = (s.b - s.a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
    std::vector<Vec3> line;
    for (int k = 0; k <= n; ++k) line.push_back(s.a + (s.b - s.a) * (static_cast<double>(k) / n));
    cl.polylines.push_back(std::move(line));
  }
  return cl;
}

VesselTree synth_vessel_tree(std::uint64_t seed, int branches, double extent, const VesselTreeOptions& options) {
  if (branches < 1) throw Error("synth_vessel_tree: branches must be >= 1");
  if (!(extent > 0.0)) throw Error("synth_vessel_tree: extent must be > 0");
  std::mt19937_64 rng(seed);
  const double bound = 0.5 * extent - options.root_radius - 2.0 * options.spacing;
  const auto inside = [&](const Vec3& p) { return (p.array().abs() <= bound).all(); };

  struct Tip {
    Vec3 pos;
    Vec3 dir;
    double radius;
    double length;
  };
  VesselTree tree;
  tree.bifurcations.frame = "US";

  const Vec3 start(-0.35 * extent, uniform(rng, -0.1, 0.1) * extent, uniform(rng, -0.1, 0.1) * extent);
  const Vec3 dir0 = Vec3(1.0, uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)).normalized();
  const double len0 = 0.35 * extent;
  tree.segments.push_back({start, start + len0 * dir0, options.root_radius});
  std::deque<Tip> tips{{start + len0 * dir0, dir0, options.root_radius, len0}};

  int bif = 0;
  while (static_cast<int>(tree.segments.size()) < branches && !tips.empty()) {
    const Tip tip = tips.front();
    tips.pop_front();
    const int want = std::min(2, branches - static_cast<int>(tree.segments.size()));
    int made = 0;
    const Vec3 axis = rotation_about(tip.dir, uniform(rng, 0.0, 360.0)) * any_perpendicular(tip.dir);
    for (int child = 0; child < want; ++child) {
      for (int attempt = 0; attempt < 12; ++attempt) {
        const double angle = (child == 0 ? 1.0 : -1.0) * uniform(rng, 25.0, 45.0);
        const Vec3 spin_axis = attempt == 0 ? axis : random_unit_vector(rng).cross(tip.dir).normalized();
        const Vec3 d = (rotation_about(spin_axis, angle) * tip.dir).normalized();
        double len = tip.length * uniform(rng, 0.6, 0.85);
        while (len > 5.0 && !inside(tip.pos + len * d)) len *= 0.8;
        if (len <= 5.0) continue;
        const double r = std::max(1.0, tip.radius * 0.8);
        tree.segments.push_back({tip.pos, tip.pos + len * d, r});
        tips.push_back({tip.pos + len * d, d, r, len});
        ++made;
        break;
      }
    }
    if (made == 2) {
      char name[16];
      std::snprintf(name, sizeof(name), "bif_%02d", bif++);
      tree.bifurcations.points[name] = tip.pos;
    }
  }
  if (static_cast<int>(tree.segments.size()) < branches) {
    throw Error("synth_vessel_tree: could not place " + std::to_string(branches) + " branches in the extent");
  }
  tree.mask = rasterize_tubes(tree.segments, cube_geometry(Vec3::Zero(), extent, options.spacing));
  tree.centerline = sample_centerline(tree.segments, options.centerline_step, "US");
  return tree;
}

// --- ground truth ------------------------------------------------------------

Vec3 GroundTruthMapping::apply(const Vec3& p) const {
  const Vec3 q = rigid.apply(p);
  return warp ? warp->apply(q) : q;
}

PointMap GroundTruthMapping::as_map() const {
  return [copy = *this](const Vec3& p) { return copy.apply(p); };
}

TpsWarp synth_deformation(std::uint64_t seed, const Vec3& centre, double support, double max_displacement,
                          int n_points, const std::vector<Vec3>& probe_points) {
  if (n_points < 1) throw Error("synth_deformation: n_points must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Vec3> src, disp;
  for (int c = 0; c < 8; ++c) {
    src.push_back(centre + support * Vec3((c & 1) ? 1 : -1, (c & 2) ? 1 : -1, (c & 4) ? 1 : -1));
    disp.push_back(Vec3::Zero());
  }
  for (int i = 0; i < n_points; ++i) {
    src.push_back(centre + Vec3(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6)) * support);
    disp.push_back(random_unit_vector(rng) * uniform(rng, 0.5, 1.0));
  }
  std::vector<Vec3> probes = probe_points;
  if (probes.empty()) {
    for (int k = 0; k <= 10; ++k)
      for (int j = 0; j <= 10; ++j)
        for (int i = 0; i <= 10; ++i) probes.push_back(centre + support * (Vec3(i, j, k) / 5.0 - Vec3::Ones()));
  }
  const auto fit = [&](double scale) {
    std::vector<Vec3> tgt(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) tgt[i] = src[i] + scale * disp[i];
    return tps_fit(src, tgt);
  };
  const TpsWarp unit = fit(1.0);
  double peak = 0.0;
  for (const Vec3& p : probes) peak = std::max(peak, (unit.apply(p) - p).norm());
  if (!(peak > 0.0)) return unit;
  return fit(max_displacement * (1.0 - 1e-9) / peak);
}

// --- multimodal pair ------------------------------------------------------------

MultimodalPair synth_multimodal_pair(std::uint64_t seed, const GroundTruthMapping& deformation,
                                     const MultimodalPairOptions& options) {
  MultimodalPair pair;
  pair.truth = deformation;
  VesselTreeOptions tree_opts;
  tree_opts.spacing = options.spacing;
  pair.moving_tree = synth_vessel_tree(seed, options.branches, options.extent, tree_opts);
  const VesselTree& tree = pair.moving_tree;
  pair.moving_mask = tree.mask;
  pair.moving_centerline = tree.centerline;
  pair.moving_landmarks = tree.bifurcations;

  const PointMap g = deformation.as_map();
  pair.fixed_centerline = tree.centerline.mapped(g, "CTMRI");
  pair.fixed_landmarks.frame = "CTMRI";
  for (const auto& [name, p] : tree.bifurcations.points) pair.fixed_landmarks.points[name] = g(p);

  // US-like moving volume: bright tubes over a textured background with speckle
  {
    Volume us = Volume::zeros(tree.mask.geometry, Modality::US3D);
    std::mt19937_64 rng(splitmix(seed ^ 0x5553ULL));
    std::normal_distribution<double> n01(0.0, 1.0);
    const auto& dg = us.geometry.dims;
    for (int k = 0; k < dg[2]; ++k) {
      for (int j = 0; j < dg[1]; ++j) {
        for (int i = 0; i < dg[0]; ++i) {
          const Vec3 p = us.geometry.index_to_world(Vec3(i, j, k));
          double v = 0.3 + options.noise.texture * (value_noise(p, 9.0, seed) + 0.5 * value_noise(p, 4.0, seed + 7));
          if (tree.mask.at(i, j, k) > 0.5f) v = 0.9;
          v *= std::max(0.0, 1.0 + options.noise.speckle * n01(rng));
          us.at(i, j, k) = static_cast<float>(v);
        }
      }
    }
    pair.moving_volume = std::move(us);
  }

  // CT/MRI grid: axis-aligned box around the mapped tree
  const Vec3 centre = g(Vec3::Zero());
  VolumeGeometry fg = cube_geometry(centre, options.extent + 2.0 * options.margin, options.spacing);

  std::vector<TubeSegment> fixed_segments;
  for (std::size_t s = 0; s < tree.segments.size(); ++s) {
    const auto& line = pair.fixed_centerline.polylines[s];
    for (std::size_t k = 0; k + 1 < line.size(); ++k) fixed_segments.push_back({line[k], line[k + 1], tree.segments[s].radius});
  }
  pair.fixed_mask = rasterize_tubes(fixed_segments, fg);

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Vec3& p : pair.fixed_centerline.vertices()) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 liver_c = 0.5 * (lo + hi);
  const Vec3 liver_r = 0.5 * (hi - lo) + Vec3::Constant(10.0);
  pair.liver_mask = Volume::zeros(fg, Modality::MASK, ElementKind::uint8);
  Volume mri = Volume::zeros(fg, Modality::MRI);
  std::mt19937_64 rng(splitmix(seed ^ 0x4d5249ULL));
  std::normal_distribution<double> n01(0.0, 1.0);
  const auto& dg = fg.dims;
  for (int k = 0; k < dg[2]; ++k) {
    for (int j = 0; j < dg[1]; ++j) {
      for (int i = 0; i < dg[0]; ++i) {
        const Vec3 p = fg.index_to_world(Vec3(i, j, k));
        const bool liver = (p - liver_c).cwiseQuotient(liver_r).squaredNorm() <= 1.0;
        if (liver) pair.liver_mask.at(i, j, k) = 1.0f;
        double v = liver ? 0.6 : 0.35;
        v += 0.5 * options.noise.texture * value_noise(p, 12.0, seed + 11);
        if (pair.fixed_mask.at(i, j, k) > 0.5f) v = 0.12;
        v += options.noise.mri_noise * n01(rng);
        mri.at(i, j, k) = static_cast<float>(v);
      }
    }
  }
  pair.fixed_volume = std::move(mri);
  return pair;
}

// --- Z-bar calibration ----------------------------------------------------------

std::vector<ZBarFiducial> synth_zbar_phantom(const ZBarPhantomOptions& o) {
  std::vector<ZBarFiducial> out;
  for (int l = 0; l < o.layers; ++l) {
    const double z = o.first_depth + l * o.layer_spacing;
    for (int k = 0; k < o.per_layer; ++k) {
      const double x = (k - 0.5 * (o.per_layer - 1)) * o.lateral_pitch - 0.5 * o.wire_gap;
      ZBarFiducial f;
      f.id = l * o.per_layer + k;
      f.a = Vec3(x, -0.5 * o.wire_length, z);
      f.b = Vec3(x, 0.5 * o.wire_length, z);
      f.c = Vec3(x + o.wire_gap, -0.5 * o.wire_length, z);
      f.d = Vec3(x + o.wire_gap, 0.5 * o.wire_length, z);
      out.push_back(f);
    }
  }
  return out;
}

ZBarIntersection zbar_intersect(const ZBarFiducial& f, const RigidTransform3D& image_pose) {
  ZBarIntersection out;
  const Vec3 n = image_pose.rotation.col(2);
  const Vec3 o = image_pose.translation;
  const Vec3 layer_normal = (f.b - f.a).cross(f.c - f.b).normalized();
  if (std::abs(n.dot(layer_normal)) > 1.0 - 1e-9) {
    out.degenerate = true;
    return out;
  }
  const auto cut = [&](const Vec3& p, const Vec3& q, double& s) {
    const double den = n.dot(q - p);
    if (std::abs(den) < 1e-12) return false;
    s = n.dot(o - p) / den;
    return s >= 0.0 && s <= 1.0;
  };
  double s1 = 0, s2 = 0, s3 = 0;
  if (!cut(f.a, f.b, s1) || !cut(f.b, f.c, s2) || !cut(f.c, f.d, s3)) return out;
  out.diagonal_point = f.b + s2 * (f.c - f.b);
  const RigidTransform3D inv = inverse(image_pose);
  ZBarObservation obs;
  obs.fiducial_id = f.id;
  obs.p1 = inv.apply(f.a + s1 * (f.b - f.a)).head<2>();
  obs.p2 = inv.apply(out.diagonal_point).head<2>();
  obs.p3 = inv.apply(f.c + s3 * (f.d - f.c)).head<2>();
  if ((obs.p3 - obs.p1).norm() < 0.5) {
    out.degenerate = true;
    return out;
  }
  out.observation = obs;
  return out;
}

DhChain default_arm_chain() {
  DhChain c;
  c.joints = {
      {0.0, 300.0, 20.0, 90.0, JointKind::revolute},  {10.0, 15.0, 250.0, -90.0, JointKind::revolute},
      {0.0, 10.0, 220.0, 90.0, JointKind::revolute},  {0.0, 200.0, 5.0, -90.0, JointKind::revolute},
      {0.0, 8.0, 10.0, 90.0, JointKind::revolute},    {0.0, 80.0, 0.0, 0.0, JointKind::revolute},
  };
  return c;
}

RigidTransform3D default_probe_calibration() {
  RigidTransform3D x;
  x.rotation = from_euler_xyz_deg(Vec3(5.0, -8.0, 90.0));
  x.translation = Vec3(12.0, -25.0, 140.0);
  return x;
}

JointReading inverse_kinematics(const DhChain& chain, const RigidTransform3D& target, const JointReading& start) {
  const auto residual = [&](const VecX& q) {
    JointReading r;
    r.values.assign(q.data(), q.data() + q.size());
    const RigidTransform3D e = dh_forward(chain, r);
    VecX out(6);
    out.head<3>() = e.translation - target.translation;
    out.tail<3>() = log_so3(e.rotation * target.rotation.transpose()) * kRadToDeg;
    return out;
  };
  VecX init = Eigen::Map<const VecX>(start.values.data(), static_cast<Eigen::Index>(start.values.size()));
  LmOptions opt;
  opt.max_iterations = 200;
  const LmResult res = lm_minimize(residual, {}, init, opt);
  JointReading out;
  out.values.assign(res.parameters.data(), res.parameters.data() + res.parameters.size());
  return out;
}

ZBarSession synth_zbar_session(std::uint64_t seed, const DhChain& nominal, int n_poses, const ZBarSessionOptions& o) {
  nominal.validate();
  if (n_poses < 2) throw Error("synth_zbar_session: need at least 2 poses");
  std::mt19937_64 rng(seed);
  ZBarSession out;
  CalibrationSession& s = out.session;
  s.chain = nominal;

  CalibrationTruth truth;
  truth.chain = nominal;
  for (DhJoint& j : truth.chain.joints) {
    j.theta_offset_deg += uniform(rng, -o.chain_perturb_deg, o.chain_perturb_deg);
    j.d += uniform(rng, -o.chain_perturb_mm, o.chain_perturb_mm);
    j.a += uniform(rng, -o.chain_perturb_mm, o.chain_perturb_mm);
    j.alpha_deg += uniform(rng, -o.chain_perturb_deg, o.chain_perturb_deg);
  }
  truth.probe_calibration = default_probe_calibration();
  s.truth = truth;
  s.zbar_fiducials = synth_zbar_phantom(o.phantom);

  // nominal image pose in F_vol: image x along +x, image y (depth) along +z
  RigidTransform3D v0;
  v0.rotation.col(0) = Vec3::UnitX();
  v0.rotation.col(1) = Vec3::UnitZ();
  v0.rotation.col(2) = -Vec3::UnitY();
  v0.translation = Vec3(-45.0, 0.0, 5.0);
  const Vec3 image_centre(50.0, 40.0, 0.0);

  JointReading j0;
  const std::size_t n = nominal.size();
  const double start_angles[] = {10.0, 35.0, -30.0, 20.0, 45.0, -15.0};
  for (std::size_t i = 0; i < n; ++i) j0.values.push_back(start_angles[i % 6]);
  const RigidTransform3D e0 = dh_forward(truth.chain, j0);
  const RigidTransform3D x = truth.probe_calibration;
  s.phantom_pose = compose(compose(e0, x), inverse(v0));
  const RigidTransform3D phantom = *s.phantom_pose;
  const RigidTransform3D x_inv = inverse(x);

  const int total = n_poses + o.holdout;
  for (int p = 0; p < total; ++p) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 50) throw Error("synth_zbar_session: could not generate a usable probe pose");
      RigidTransform3D delta;
      delta.rotation = random_rotation_of_angle(rng, uniform(rng, 0.0, o.max_tilt_deg));
      const Vec3 c = v0.apply(image_centre);
      delta.translation = c - delta.rotation * c +
                          Vec3(uniform(rng, -o.max_shift_mm, o.max_shift_mm), uniform(rng, -o.max_shift_mm, o.max_shift_mm),
                               uniform(rng, -o.max_shift_mm, o.max_shift_mm));
      const RigidTransform3D v = compose(delta, v0);
      const RigidTransform3D e = compose(compose(phantom, v), x_inv);
      const JointReading q = inverse_kinematics(truth.chain, e, j0);
      const PoseError ik = pose_error(dh_forward(truth.chain, q), e);
      if (ik.euclidean_distance > 1e-9 || ik.geodesic_angle > 1e-9) continue;

      std::vector<ZBarObservation> obs;
      std::vector<int> degenerate;
      std::vector<Vec3> located;
      for (const ZBarFiducial& f : s.zbar_fiducials) {
        const ZBarIntersection hit = zbar_intersect(f, v);
        if (hit.degenerate) degenerate.push_back(f.id);
        if (!hit.observation) continue;
        ZBarObservation ob = *hit.observation;
        for (Vec2* pt : {&ob.p1, &ob.p2, &ob.p3}) {
          *pt += Vec2(gauss(rng, o.image_noise_mm), gauss(rng, o.image_noise_mm));
        }
        obs.push_back(ob);
        located.push_back(hit.diagonal_point);
      }
      // need points from at least two layers so the plane fit is well posed
      bool two_layers = false;
      for (const Vec3& a : located) two_layers = two_layers || std::abs(a.z() - located.front().z()) > 1.0;
      if (located.size() < 3 || !two_layers) continue;

      RigidTransform3D measured = e;
      const Vec3 rv(gauss(rng, o.pose_noise_deg), gauss(rng, o.pose_noise_deg), gauss(rng, o.pose_noise_deg));
      measured.rotation = exp_so3(rv * kDegToRad) * e.rotation;
      measured.translation += Vec3(gauss(rng, o.pose_noise_mm), gauss(rng, o.pose_noise_mm), gauss(rng, o.pose_noise_mm));

      if (p < n_poses) {
        s.readings.push_back(q);
        s.measured_poses.push_back(measured);
        s.zbar_observations.push_back(std::move(obs));
        out.degenerate.push_back(std::move(degenerate));
        out.true_image_poses.push_back(v);
      } else {
        s.holdout_readings.push_back(q);
        s.holdout_observations.push_back(std::move(obs));
        out.true_holdout_image_poses.push_back(v);
      }
      break;
    }
  }
  return out;
}

// --- frames ---------------------------------------------------------------------

SlicePose centred_slice_pose(const Vec3& centre, const Mat3& rotation, const FrameSpec& spec) {
  SlicePose p;
  p.width_mm = spec.width_mm;
  p.height_mm = spec.height_mm;
  p.nu = static_cast<int>(std::lround(spec.width_mm / spec.spacing)) + 1;
  p.nv = static_cast<int>(std::lround(spec.height_mm / spec.spacing)) + 1;
  p.transform.rotation = rotation;
  p.transform.translation = centre - rotation * Vec3(0.5 * spec.width_mm, 0.5 * spec.height_mm, 0.0);
  return p;
}

TrackedFrame synth_frame(const Volume& volume, const SlicePose& true_pose, const SlicePose& tracked_pose,
                         double speckle, std::uint64_t seed, double timestamp) {
  const MaskedImage img = mpr_slice(volume, true_pose, Exec::serial);
  Image2D frame = img.image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) {
    const double noise = speckle > 0 ? n01(rng) : 0.0;
    frame.pixels[i] = img.valid[i] ? frame.pixels[i] * std::max(0.0, 1.0 + speckle * noise) : 0.0;
  }
  return frame_from_pose(frame, tracked_pose, timestamp);
}

SlicePose perturb_pose_random(const SlicePose& pose, double mm, double deg, std::mt19937_64& rng) {
  const Vec3 c = pose.pixel_to_world(0.5 * (pose.nu - 1), 0.5 * (pose.nv - 1));
  RigidTransform3D delta;
  delta.rotation = random_rotation_of_angle(rng, deg);
  delta.translation = c - delta.rotation * c + random_unit_vector(rng) * mm;
  SlicePose out = pose;
  out.transform = compose(delta, pose.transform);
  return out;
}

TrackedSequence synth_breathing_sequence(const Volume& volume, const SlicePose& base_pose, int n_frames,
                                         double amplitude_mm, const Vec3& direction, double speckle,
                                         std::uint64_t seed) {
  TrackedSequence seq;
  const Vec3 dir = direction.normalized();
  for (int i = 0; i < n_frames; ++i) {
    const double phase = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n_frames);
    SlicePose truth = base_pose;
    truth.transform = compose(RigidTransform3D::from_translation(amplitude_mm * std::sin(phase) * dir), base_pose.transform);
    seq.true_poses.push_back(truth);
    seq.frames.push_back(synth_frame(volume, truth, base_pose, speckle, splitmix(seed + static_cast<std::uint64_t>(i)),
                                     0.1 * i));
  }
  return seq;
}

// --- scene ----------------------------------------------------------------------

SyntheticScene synth_scene(std::uint64_t seed, const SceneOptions& o) {
  std::mt19937_64 rng(seed);
  GroundTruthMapping truth;
  truth.rigid.rotation = random_rotation_of_angle(rng, o.rigid_angle_deg);
  truth.rigid.translation = random_unit_vector(rng) * o.rigid_shift_mm;

  // tree first (same seed as the pair) so the deformation can be scaled on it
  VesselTreeOptions tree_opts;
  tree_opts.spacing = o.pair.spacing;
  const VesselTree tree = synth_vessel_tree(seed, o.pair.branches, o.pair.extent, tree_opts);
  std::vector<Vec3> probes;
  for (const Vec3& p : tree.centerline.vertices()) probes.push_back(truth.rigid.apply(p));
  if (o.deformation_mm > 0) {
    truth.warp = synth_deformation(splitmix(seed ^ 0x747073ULL), truth.rigid.apply(Vec3::Zero()),
                                   0.6 * o.pair.extent, o.deformation_mm, 8, probes);
  }

  SyntheticScene scene;
  scene.pair = synth_multimodal_pair(seed, truth, o.pair);

  // systematic tracking error shared by all frames plus small per-frame jitter
  RigidTransform3D systematic;
  systematic.rotation = random_rotation_of_angle(rng, o.tracking_error_deg);
  systematic.translation = random_unit_vector(rng) * o.tracking_error_mm;

  int idx = 0;
  for (const auto& [name, landmark] : scene.pair.moving_landmarks.points) {
    const Mat3 r = random_rotation_of_angle(rng, uniform(rng, 0.0, 30.0));
    const Vec3 offset = r * Vec3(uniform(rng, -10, 10), uniform(rng, -10, 10), 0.0);
    const SlicePose truth_pose = centred_slice_pose(landmark + offset, r, o.frame);
    SlicePose tracked = truth_pose;
    tracked.transform = compose(systematic, truth_pose.transform);
    tracked = perturb_pose_random(tracked, uniform(rng, 0.0, 0.5), uniform(rng, 0.0, 0.5), rng);
    scene.frames.push_back(synth_frame(scene.pair.moving_volume, truth_pose, tracked, o.frame_speckle,
                                       splitmix(seed + 1000 + static_cast<std::uint64_t>(idx)), 0.1 * idx));
    scene.true_poses.push_back(truth_pose);
    const Vec3 q = inverse(truth_pose.transform).apply(landmark);
    scene.frame_landmarks.push_back({{name, q.head<2>()}});
    ++idx;
  }
  return scene;
}

}  // namespace ablreg
