// Volume data model, trilinear sampling, multi-planar reformatting (MPR)
// and the front-clipped fused MVR view.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ablreg/geometry.hpp"

namespace ablreg {

enum class ElementKind { float32, uint8 };
enum class Modality { CT, MRI, US3D, MASK };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

enum class Exec { serial, parallel };

/// Regular grid: world = origin + direction * diag(spacing) * index.
struct VolumeGeometry {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  Mat3 direction = Mat3::Identity();

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  Vec3 index_to_world(const Vec3& ijk) const { return origin + direction * spacing.cwiseProduct(ijk); }
  Vec3 world_to_index(const Vec3& p) const {
    return (direction.transpose() * (p - origin)).cwiseQuotient(spacing);
  }
  /// Axis-aligned world bounding box of the voxel centres.
  std::pair<Vec3, Vec3> world_bounds() const;
  void validate() const;
};

struct Volume {
  VolumeGeometry geometry;
  ElementKind kind = ElementKind::float32;
  Modality modality = Modality::CT;
  std::vector<float> scalars;  // x fastest

  static Volume zeros(const VolumeGeometry& g, Modality m, ElementKind k = ElementKind::float32);

  const std::array<int, 3>& dims() const { return geometry.dims; }
  std::size_t linear_index(int i, int j, int k) const {
    const auto& d = geometry.dims;
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k);
  }
  float at(int i, int j, int k) const { return scalars[linear_index(i, j, k)]; }
  float& at(int i, int j, int k) { return scalars[linear_index(i, j, k)]; }

  /// Checks spacing, direction orthonormality, scalar count, and the
  /// {0,1} content of MASK volumes.
  void validate() const;
};

/// Trilinear interpolation in index space. Returns nullopt (OUTSIDE) when any
/// index coordinate leaves [0, n-1]. Index coordinates within 1e-9 of an
/// integer snap to it so voxel-centre queries return the stored value.
std::optional<double> sample_trilinear(const Volume& volume, const Vec3& world_point);

/// 2D scalar image with pixel spacing in mm.
struct Image2D {
  int width = 0;
  int height = 0;
  double spacing_x = 1.0;
  double spacing_y = 1.0;
  std::vector<double> pixels;  // row-major, x fastest

  double at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return pixels[static_cast<std::size_t>(v) * width + u]; }
};

struct MaskedImage {
  Image2D image;
  std::vector<std::uint8_t> valid;  // 1 where the sample was inside the volume

  std::size_t valid_count() const;
};

/// Placement of a 2D image plane: `transform` maps image coordinates
/// (x, y, 0) in mm into the volume's world frame. Pixel (u, v) sits at
/// x = u * width / (nu - 1), y = v * height / (nv - 1).
struct SlicePose {
  RigidTransform3D transform;
  double width_mm = 1.0;
  double height_mm = 1.0;
  int nu = 2;
  int nv = 2;

  void validate() const;
  double pixel_spacing_x() const { return width_mm / (nu - 1); }
  double pixel_spacing_y() const { return height_mm / (nv - 1); }
  Vec3 pixel_to_image(double u, double v) const { return {u * pixel_spacing_x(), v * pixel_spacing_y(), 0.0}; }
  Vec3 pixel_to_world(double u, double v) const { return transform.apply(pixel_to_image(u, v)); }
  Vec3 normal() const { return transform.rotation.col(2); }
  /// Same plane sampled at a different resolution.
  SlicePose with_resolution(int nu_new, int nv_new) const;
};

/// Pose that reproduces voxel plane k of `geometry` exactly (resolution =
/// in-plane dims, extent = (n-1) * spacing).
SlicePose axial_voxel_plane(const VolumeGeometry& geometry, int k);

MaskedImage mpr_slice(const Volume& volume, const SlicePose& pose, Exec exec = Exec::parallel);

/// Maps base-volume world points into overlay-volume world points.
using PointMap = std::function<Vec3(const Vec3&)>;

enum class BlendMode { alpha, checkerboard };
std::string to_string(BlendMode b);
BlendMode blend_from_string(const std::string& s);

struct FusedViewOptions {
  double clip_depth = 30.0;  // mm behind the plane
  double window_lo = 0.0;    // base grayscale window
  double window_hi = 1.0;
  double opacity_threshold = 0.5;  // overlay transparent below this
  double overlay_hi = 1.0;         // overlay fully opaque at or above this
  double max_opacity = 0.7;
  /// MIP step along the normal; <= 0 selects half the finest overlay spacing.
  double step_mm = 0.0;
  BlendMode blend = BlendMode::alpha;
  int checker_size = 16;  // pixels
};

/// Base CT/MRI slice plus a US-derived overlay. The viewer looks along the
/// plane normal: "behind" is the +normal half-space.
struct FusedView {
  MaskedImage base;
  MaskedImage overlay;
  std::vector<float> opacity;
  BlendMode blend = BlendMode::alpha;
  double clip_depth = 0.0;
  double window_lo = 0.0;
  double window_hi = 1.0;
  int checker_size = 16;

  /// 8-bit windowed grayscale of the base slice (invalid pixels black).
  std::vector<std::uint8_t> base_gray8() const;
  /// RGBA composite of base and overlay according to the blend mode.
  std::vector<std::uint8_t> composite_rgba8() const;
};

/// Overlay is the maximum-intensity projection of `overlay_vol` along the
/// plane normal from depth 0 to clip_depth behind the plane; the front
/// half-space never contributes. `overlay_map`, when set, maps base-world
/// points into the overlay volume's world frame.
FusedView fused_mvr_view(const Volume& base_vol, const Volume& overlay_vol, const SlicePose& pose,
                         const FusedViewOptions& options, const PointMap& overlay_map = {},
                         Exec exec = Exec::parallel);

/// Scalar ramp transfer function: 0 below the threshold, linear up to
/// max_opacity at overlay_hi.
float overlay_opacity(double value, const FusedViewOptions& options);

enum class OrthogonalPlane { axial, sagittal, coronal };
OrthogonalPlane plane_from_string(const std::string& s);

/// Orthogonal plane through world coordinate `position_mm` spanning the
/// world bounding box of `geometry`. Image axes (u, v) and normal:
/// axial (x, y, +z), sagittal (y, z, +x), coronal (x, z, -y).
SlicePose orthogonal_slice(const VolumeGeometry& geometry, OrthogonalPlane plane, double position_mm);

}  // namespace ablreg
