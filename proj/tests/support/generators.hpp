// Hand-rolled random generators for property tests. Every generator takes
// an explicit engine so failures reproduce from the printed seed.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ablreg/calibration.hpp"
#include "ablreg/geometry.hpp"
#include "ablreg/volume.hpp"

namespace ablreg::gen {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Vec3 vec3(Rng& rng, double half_width) {
  return {uniform(rng, -half_width, half_width), uniform(rng, -half_width, half_width),
          uniform(rng, -half_width, half_width)};
}

inline Vec2 vec2(Rng& rng, double half_width) {
  return {uniform(rng, -half_width, half_width), uniform(rng, -half_width, half_width)};
}

inline Vec3 gaussian3(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return {n(rng), n(rng), n(rng)};
}

inline RigidTransform3D transform(Rng& rng, double max_translation = 100.0) {
  return random_transform(rng, max_translation);
}

/// Rotation of `deg` about a random axis plus a translation of length `mm`.
inline RigidTransform3D offset(Rng& rng, double deg, double mm) {
  return {random_rotation_of_angle(rng, deg), mm * random_unit_vector(rng)};
}

inline std::vector<Vec3> points(Rng& rng, std::size_t n, double half_width) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = vec3(rng, half_width);
  return out;
}

/// Revolute chain with link lengths and offsets in plausible arm ranges.
inline DhChain chain(Rng& rng, int joints) {
  DhChain c;
  for (int i = 0; i < joints; ++i) {
    DhJoint j;
    j.theta_offset_deg = uniform(rng, -30.0, 30.0);
    j.d = uniform(rng, -100.0, 100.0);
    j.a = uniform(rng, 0.0, 200.0);
    j.alpha_deg = uniform_int(rng, 0, 1) ? 90.0 : -90.0;
    j.alpha_deg += uniform(rng, -10.0, 10.0);
    c.joints.push_back(j);
  }
  return c;
}

inline JointReading reading(Rng& rng, std::size_t joints, double max_deg = 90.0) {
  JointReading r;
  for (std::size_t i = 0; i < joints; ++i) r.values.push_back(uniform(rng, -max_deg, max_deg));
  return r;
}

/// Float volume with values drawn from [lo, hi).
inline Volume random_volume(Rng& rng, std::array<int, 3> dims, Vec3 spacing, double lo = 0.0, double hi = 1.0) {
  VolumeGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = vec3(rng, 20.0);
  Volume v = Volume::zeros(g, Modality::CT);
  for (auto& s : v.scalars) s = static_cast<float>(uniform(rng, lo, hi));
  return v;
}

/// Smooth field sampled on a grid, so resampling tests stay well conditioned.
template <class F>
Volume field_volume(const VolumeGeometry& g, F&& f, Modality m = Modality::CT) {
  Volume v = Volume::zeros(g, m);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) v.at(i, j, k) = static_cast<float>(f(g.index_to_world(Vec3(i, j, k))));
  return v;
}

}  // namespace ablreg::gen
