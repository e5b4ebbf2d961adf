#include "ablreg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "ablreg/kernels.hpp"

namespace ablreg {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MRI: return "MRI";
    case Modality::US3D: return "US3D";
    case Modality::MASK: return "MASK";
  }
  return "CT";
}

Modality modality_from_string(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MRI") return Modality::MRI;
  if (s == "US3D") return Modality::US3D;
  if (s == "MASK") return Modality::MASK;
  throw Error("unknown modality '" + s + "'");
}

std::string to_string(BlendMode b) { return b == BlendMode::alpha ? "alpha" : "checkerboard"; }

BlendMode blend_from_string(const std::string& s) {
  if (s == "alpha") return BlendMode::alpha;
  if (s == "checkerboard") return BlendMode::checkerboard;
  throw Error("unknown blend mode '" + s + "'");
}

OrthogonalPlane plane_from_string(const std::string& s) {
  if (s == "axial") return OrthogonalPlane::axial;
  if (s == "sagittal") return OrthogonalPlane::sagittal;
  if (s == "coronal") return OrthogonalPlane::coronal;
  throw Error("unknown plane '" + s + "'");
}

std::pair<Vec3, Vec3> VolumeGeometry::world_bounds() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int c = 0; c < 8; ++c) {
    const Vec3 ijk((c & 1) ? dims[0] - 1 : 0, (c & 2) ? dims[1] - 1 : 0, (c & 4) ? dims[2] - 1 : 0);
    const Vec3 w = index_to_world(ijk);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  return {lo, hi};
}

void VolumeGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw Error("volume dims must be >= 1");
    if (!(spacing[a] > 0.0)) throw Error("volume spacing must be > 0");
  }
  if ((direction.transpose() * direction - Mat3::Identity()).norm() > 1e-6) {
    throw Error("volume direction matrix is not orthonormal");
  }
}

Volume Volume::zeros(const VolumeGeometry& g, Modality m, ElementKind k) {
  Volume v;
  v.geometry = g;
  v.modality = m;
  v.kind = k;
  v.scalars.assign(g.voxel_count(), 0.0f);
  return v;
}

void Volume::validate() const {
  geometry.validate();
  if (scalars.size() != geometry.voxel_count()) throw Error("volume scalar count does not match dims");
  if (modality == Modality::MASK) {
    for (float s : scalars) {
      if (s != 0.0f && s != 1.0f) throw Error("MASK volume contains values other than 0 and 1");
    }
  }
}

std::optional<double> sample_trilinear(const Volume& volume, const Vec3& world_point) {
  double v = 0.0;
  if (!kernels::sample_index_space(volume, volume.geometry.world_to_index(world_point), v)) return std::nullopt;
  return v;
}

std::size_t MaskedImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void SlicePose::validate() const {
  if (!(width_mm > 0.0) || !(height_mm > 0.0)) throw Error("slice extent must be positive");
  if (nu < 2 || nv < 2) throw Error("slice resolution must be at least 2x2");
  if (!transform.is_valid(1e-6)) throw Error("slice transform is not rigid");
}

SlicePose SlicePose::with_resolution(int nu_new, int nv_new) const {
  SlicePose p = *this;
  p.nu = nu_new;
  p.nv = nv_new;
  return p;
}

SlicePose axial_voxel_plane(const VolumeGeometry& g, int k) {
  SlicePose p;
  p.transform.rotation = g.direction;
  p.transform.translation = g.index_to_world(Vec3(0, 0, k));
  p.nu = g.dims[0];
  p.nv = g.dims[1];
  p.width_mm = (g.dims[0] - 1) * g.spacing.x();
  p.height_mm = (g.dims[1] - 1) * g.spacing.y();
  return p;
}

namespace {

MaskedImage blank_image(const SlicePose& pose) {
  MaskedImage out;
  out.image.width = pose.nu;
  out.image.height = pose.nv;
  out.image.spacing_x = pose.pixel_spacing_x();
  out.image.spacing_y = pose.pixel_spacing_y();
  const std::size_t n = static_cast<std::size_t>(pose.nu) * pose.nv;
  out.image.pixels.assign(n, 0.0);
  out.valid.assign(n, 0);
  return out;
}

}  // namespace

MaskedImage mpr_slice(const Volume& volume, const SlicePose& pose, Exec exec) {
  pose.validate();
  MaskedImage out = blank_image(pose);
  if (exec == Exec::serial) {
    kernels::serial::resample_plane(volume, pose, out.image.pixels, out.valid);
  } else {
    kernels::parallel::resample_plane(volume, pose, out.image.pixels, out.valid);
  }
  return out;
}

float overlay_opacity(double value, const FusedViewOptions& o) {
  if (value < o.opacity_threshold) return 0.0f;
  const double span = o.overlay_hi - o.opacity_threshold;
  const double t = span > 0 ? std::clamp((value - o.opacity_threshold) / span, 0.0, 1.0) : 1.0;
  return static_cast<float>(o.max_opacity * t);
}

FusedView fused_mvr_view(const Volume& base_vol, const Volume& overlay_vol, const SlicePose& pose,
                         const FusedViewOptions& options, const PointMap& overlay_map, Exec exec) {
  if (options.clip_depth < 0.0) throw Error("clip depth must be >= 0");
  FusedView view;
  view.base = mpr_slice(base_vol, pose, exec);
  view.blend = options.blend;
  view.clip_depth = options.clip_depth;
  view.window_lo = options.window_lo;
  view.window_hi = options.window_hi;
  view.checker_size = options.checker_size;

  const double step = options.step_mm > 0 ? options.step_mm : 0.5 * overlay_vol.geometry.spacing.minCoeff();
  // samples at k * step for every k * step <= clip depth; never the front half-space
  const int steps = static_cast<int>(std::floor(options.clip_depth / step + 1e-9)) + 1;
  view.overlay = blank_image(pose);
  if (exec == Exec::serial) {
    kernels::serial::mip_behind_plane(overlay_vol, pose, step, steps, overlay_map, view.overlay.image.pixels,
                                      view.overlay.valid);
  } else {
    kernels::parallel::mip_behind_plane(overlay_vol, pose, step, steps, overlay_map, view.overlay.image.pixels,
                                        view.overlay.valid);
  }
  view.opacity.resize(view.overlay.valid.size());
  for (std::size_t i = 0; i < view.opacity.size(); ++i) {
    view.opacity[i] = view.overlay.valid[i] ? overlay_opacity(view.overlay.image.pixels[i], options) : 0.0f;
  }
  return view;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double windowed(double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }

}  // namespace

std::vector<std::uint8_t> FusedView::base_gray8() const {
  std::vector<std::uint8_t> out(base.image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = base.valid[i] ? to_byte(windowed(base.image.pixels[i], window_lo, window_hi)) : 0;
  }
  return out;
}

std::vector<std::uint8_t> FusedView::composite_rgba8() const {
  const int w = base.image.width;
  const int h = base.image.height;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 4);
  // warm tint for the US overlay
  const Vec3 tint(1.0, 0.62, 0.35);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      const double g = base.valid[i] ? std::clamp(windowed(base.image.pixels[i], window_lo, window_hi), 0.0, 1.0) : 0.0;
      Vec3 rgb(g, g, g);
      const double a = opacity.empty() ? 0.0 : opacity[i];
      if (blend == BlendMode::alpha) {
        rgb = (1.0 - a) * rgb + a * tint;
      } else {
        const bool overlay_tile = ((u / std::max(checker_size, 1)) + (v / std::max(checker_size, 1))) % 2 == 1;
        if (overlay_tile && overlay.valid[i]) {
          const double o = a > 0 ? 1.0 : 0.0;
          rgb = o * tint + (1.0 - o) * Vec3::Zero();
        }
      }
      out[4 * i + 0] = to_byte(rgb.x());
      out[4 * i + 1] = to_byte(rgb.y());
      out[4 * i + 2] = to_byte(rgb.z());
      out[4 * i + 3] = 255;
    }
  }
  return out;
}

SlicePose orthogonal_slice(const VolumeGeometry& geometry, OrthogonalPlane plane, double position_mm) {
  const auto [lo, hi] = geometry.world_bounds();
  const Vec3 spacing_world = geometry.spacing;  // used for resolution only
  SlicePose p;
  Mat3 r;
  int ax_u = 0, ax_v = 1, ax_n = 2;
  switch (plane) {
    case OrthogonalPlane::axial:
      ax_u = 0, ax_v = 1, ax_n = 2;
      break;
    case OrthogonalPlane::sagittal:
      ax_u = 1, ax_v = 2, ax_n = 0;
      break;
    case OrthogonalPlane::coronal:
      ax_u = 0, ax_v = 2, ax_n = 1;
      break;
  }
  r.col(0) = Vec3::Unit(ax_u);
  r.col(1) = Vec3::Unit(ax_v);
  r.col(2) = r.col(0).cross(r.col(1));
  p.transform.rotation = r;
  Vec3 origin = lo;
  origin[ax_n] = position_mm;
  p.transform.translation = origin;
  p.width_mm = std::max(hi[ax_u] - lo[ax_u], 1e-3);
  p.height_mm = std::max(hi[ax_v] - lo[ax_v], 1e-3);
  p.nu = std::max(2, static_cast<int>(std::lround(p.width_mm / spacing_world.minCoeff())) + 1);
  p.nv = std::max(2, static_cast<int>(std::lround(p.height_mm / spacing_world.minCoeff())) + 1);
  return p;
}

}  // namespace ablreg
