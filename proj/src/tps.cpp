#include "ablreg/tps.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "ablreg/kernels.hpp"

namespace ablreg {

Affine34 TpsWarp::identity_affine() {
  Affine34 a = Affine34::Zero();
  a.rightCols<3>() = Mat3::Identity();
  return a;
}

Vec3 TpsWarp::apply(const Vec3& p) const {
  Vec3 out = affine.col(0) + affine.rightCols<3>() * p;
  for (std::size_t i = 0; i < sources.size(); ++i) out += weights[i] * (p - sources[i]).norm();
  return out;
}

std::vector<Vec3> TpsWarp::apply(std::span<const Vec3> points, Exec exec) const {
  std::vector<Vec3> out(points.size());
  const kernels::TpsCoefficients c{sources, weights, &affine};
  if (exec == Exec::serial) {
    kernels::serial::tps_evaluate(c, points, out);
  } else {
    kernels::parallel::tps_evaluate(c, points, out);
  }
  return out;
}

double TpsWarp::bending_energy() const {
  double e = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = 0; j < sources.size(); ++j) {
      e -= weights[i].dot(weights[j]) * (sources[i] - sources[j]).norm();
    }
  }
  return e;
}

namespace {

std::string point_list(const std::vector<std::size_t>& idx) {
  std::ostringstream ss;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k) ss << ", ";
    if (k == 8) {
      ss << "... (" << idx.size() << " total)";
      break;
    }
    ss << idx[k];
  }
  return ss.str();
}

void check_configuration(const std::vector<Vec3>& s) {
  if (s.size() < 4) throw DegenerateConfiguration("TPS needs at least 4 control points, got " + std::to_string(s.size()));
  Vec3 lo = s[0], hi = s[0];
  for (const Vec3& p : s) {
    if (!p.allFinite()) throw DegenerateConfiguration("TPS control point has a non-finite coordinate");
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double scale = std::max((hi - lo).norm(), 1e-12);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      if ((s[i] - s[j]).norm() <= 1e-9 * scale) {
        throw DegenerateConfiguration("TPS control points " + std::to_string(i) + " and " + std::to_string(j) +
                                      " coincide");
      }
    }
  }
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : s) c += p;
  c /= static_cast<double>(s.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : s) cov += (p - c) * (p - c).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU);
  const Vec3 normal = svd.matrixU().col(2);
  double spread = 0.0;
  for (const Vec3& p : s) spread = std::max(spread, std::abs((p - c).dot(normal)));
  if (spread <= 1e-9 * scale) {
    std::vector<std::size_t> all(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) all[i] = i;
    throw DegenerateConfiguration("TPS control points are coplanar: points " + point_list(all));
  }
}

}  // namespace

TpsWarp tps_fit(const std::vector<Vec3>& sources, const std::vector<Vec3>& targets, double lambda) {
  if (sources.size() != targets.size()) throw Error("tps_fit: sources and targets differ in length");
  if (!(lambda >= 0.0)) throw Error("tps_fit: lambda must be >= 0");
  check_configuration(sources);
  const std::size_t m = sources.size();

  TpsWarp warp;
  warp.sources = sources;
  warp.targets = targets;
  warp.lambda = lambda;
  warp.weights.assign(m, Vec3::Zero());
  if (sources == targets) return warp;

  const Eigen::Index n = static_cast<Eigen::Index>(m) + 4;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double r = (sources[i] - sources[j]).norm();
      l(ii, jj) = r;
      l(jj, ii) = r;
    }
    l(ii, ii) = -lambda;
    const Eigen::Index pc = static_cast<Eigen::Index>(m);
    l(ii, pc) = 1.0;
    l(pc, ii) = 1.0;
    for (int a = 0; a < 3; ++a) {
      l(ii, pc + 1 + a) = sources[i][a];
      l(pc + 1 + a, ii) = sources[i][a];
    }
    rhs.row(ii) = targets[i].transpose();
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(l);
  if (!(lu.rcond() > 1e-15)) throw DegenerateConfiguration("TPS system is singular for the given control points");
  const Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw DegenerateConfiguration("TPS solve produced non-finite coefficients");
  for (std::size_t i = 0; i < m; ++i) warp.weights[i] = sol.row(static_cast<Eigen::Index>(i)).transpose();
  warp.affine = sol.bottomRows(4).transpose();
  return warp;
}

std::vector<Vec3> tps_apply(const TpsWarp& warp, std::span<const Vec3> points, Exec exec) {
  return warp.apply(points, exec);
}

Volume tps_apply_volume(const TpsWarp& warp, const Volume& input, const VolumeGeometry& reference, Exec exec) {
  reference.validate();
  Volume out = Volume::zeros(reference, input.modality, input.kind);
  const auto& d = reference.dims;
  const std::size_t plane = static_cast<std::size_t>(d[0]) * d[1];
  std::vector<Vec3> pts(plane);
  std::vector<double> values(plane);
  std::vector<std::uint8_t> valid(plane);
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        pts[static_cast<std::size_t>(j) * d[0] + i] = reference.index_to_world(Vec3(i, j, k));
      }
    }
    const std::vector<Vec3> mapped = warp.apply(pts, exec);
    if (exec == Exec::serial) {
      kernels::serial::sample_points(input, mapped, values, valid);
    } else {
      kernels::parallel::sample_points(input, mapped, values, valid);
    }
    float* dst = out.scalars.data() + plane * static_cast<std::size_t>(k);
    for (std::size_t p = 0; p < plane; ++p) dst[p] = valid[p] ? static_cast<float>(values[p]) : 0.0f;
  }
  if (out.modality == Modality::MASK) {
    for (float& v : out.scalars) v = v >= 0.5f ? 1.0f : 0.0f;
  }
  return out;
}

Vec3 InverseWarpField::apply(const Vec3& p) const {
  if (identity) return p;
  const Vec3 ijk = grid.world_to_index(p);
  const auto& d = grid.dims;
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::clamp(ijk[a], 0.0, static_cast<double>(d[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(c)), std::max(d[a] - 2, 0));
    f[a] = d[a] > 1 ? c - i0[a] : 0.0;
  }
  Vec3 acc = Vec3::Zero();
  for (int c = 0; c < 8; ++c) {
    const int i = std::min(i0[0] + (c & 1), d[0] - 1);
    const int j = std::min(i0[1] + ((c >> 1) & 1), d[1] - 1);
    const int k = std::min(i0[2] + ((c >> 2) & 1), d[2] - 1);
    const double w = ((c & 1) ? f[0] : 1 - f[0]) * (((c >> 1) & 1) ? f[1] : 1 - f[1]) *
                     (((c >> 2) & 1) ? f[2] : 1 - f[2]);
    acc += w * displacement[static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) *
                                                            (static_cast<std::size_t>(j) +
                                                             static_cast<std::size_t>(d[1]) * k)];
  }
  return p + acc;
}

InverseWarpField build_inverse_field(const TpsWarp& warp, const Vec3& lo, const Vec3& hi, double spacing,
                                     int iterations) {
  if (!(spacing > 0.0)) throw Error("inverse field spacing must be > 0");
  InverseWarpField field;
  const bool is_identity = warp.sources.empty() ? warp.affine == TpsWarp::identity_affine()
                                                : std::all_of(warp.weights.begin(), warp.weights.end(),
                                                              [](const Vec3& w) { return w.isZero(0.0); }) &&
                                                      warp.affine == TpsWarp::identity_affine();
  field.identity = is_identity;
  field.grid.origin = lo;
  field.grid.spacing = Vec3::Constant(spacing);
  for (int a = 0; a < 3; ++a) {
    field.grid.dims[a] = std::max(2, static_cast<int>(std::ceil((hi[a] - lo[a]) / spacing)) + 1);
  }
  if (is_identity) return field;
  std::vector<Vec3> nodes(field.grid.voxel_count());
  const auto& d = field.grid.dims;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        nodes[static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (j + static_cast<std::size_t>(d[1]) * k)] =
            field.grid.index_to_world(Vec3(i, j, k));
  // fixed-point iteration x <- x - (f(x) - p), contractive while the warp
  // stays close to the identity
  std::vector<Vec3> x = nodes;
  for (int it = 0; it < iterations; ++it) {
    const std::vector<Vec3> fx = warp.apply(x);
    double worst = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const Vec3 r = fx[n] - nodes[n];
      worst = std::max(worst, r.norm());
      x[n] -= r;
    }
    if (worst < 1e-6) break;
  }
  field.displacement.resize(nodes.size());
  for (std::size_t n = 0; n < nodes.size(); ++n) field.displacement[n] = x[n] - nodes[n];
  return field;
}

// --- control points ----------------------------------------------------------

std::string to_string(ControlRole r) { return r == ControlRole::anchor ? "anchor" : "movable"; }

ControlRole role_from_string(const std::string& s) {
  if (s == "anchor") return ControlRole::anchor;
  if (s == "movable") return ControlRole::movable;
  throw Error("unknown control point role '" + s + "'");
}

const ControlPoint* ControlPointSet::find(int id) const {
  for (const auto& p : points) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

std::size_t ControlPointSet::movable_count() const {
  return static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [](const ControlPoint& p) { return p.role == ControlRole::movable; }));
}

std::size_t ControlPointSet::anchor_count() const { return points.size() - movable_count(); }

std::vector<Vec3> ControlPointSet::positions() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position);
  return out;
}

std::vector<Vec3> ControlPointSet::targets() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position + p.displacement);
  return out;
}

void ControlPointSet::validate() const {
  std::vector<int> ids;
  for (const auto& p : points) {
    ids.push_back(p.id);
    if (p.role == ControlRole::anchor && !p.displacement.isZero(0.0)) {
      throw ControlRoleError("anchor " + std::to_string(p.id) + " has a non-zero displacement");
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error("control point ids are not unique");
}

bool OrientedBox::contains(const Vec3& p) const {
  const Vec3 local = pose.rotation.transpose() * (p - pose.translation);
  return (local.array().abs() <= half_extent.array() + 1e-9).all();
}

ControlPointSet generate_control_points(const Volume& mask, const OrientedBox& workspace, double spacing) {
  if (!(spacing > 0.0)) throw Error("control point spacing must be > 0");
  if (mask.modality != Modality::MASK) throw Error("generate_control_points needs a MASK volume");
  const auto& d = mask.geometry.dims;
  const auto fg = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= d[0] || j >= d[1] || k >= d[2]) return false;
    return mask.at(i, j, k) > 0.5f;
  };
  bool any = false;
  for (float v : mask.scalars) any = any || v > 0.5f;
  if (!any) throw Error("generate_control_points: liver mask is empty");

  ControlPointSet set;
  int next_id = 0;
  const auto inside_mask = [&](const Vec3& p) {
    const Vec3 ijk = mask.geometry.world_to_index(p);
    const int i = static_cast<int>(std::lround(ijk.x()));
    const int j = static_cast<int>(std::lround(ijk.y()));
    const int k = static_cast<int>(std::lround(ijk.z()));
    return fg(i, j, k);
  };
  Eigen::Vector3i half;
  for (int a = 0; a < 3; ++a) half[a] = static_cast<int>(std::floor(workspace.half_extent[a] / spacing + 1e-9));
  for (int c = -half.z(); c <= half.z(); ++c) {
    for (int b = -half.y(); b <= half.y(); ++b) {
      for (int a = -half.x(); a <= half.x(); ++a) {
        const Vec3 p = workspace.pose.apply(Vec3(a, b, c) * spacing);
        if (inside_mask(p)) set.points.push_back({next_id++, p, Vec3::Zero(), ControlRole::movable});
      }
    }
  }
  if (set.points.empty()) throw Error("generate_control_points: workspace does not intersect the liver mask");

  std::map<std::tuple<long, long, long>, bool> used;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        if (!fg(i, j, k)) continue;
        if (fg(i - 1, j, k) && fg(i + 1, j, k) && fg(i, j - 1, k) && fg(i, j + 1, k) && fg(i, j, k - 1) &&
            fg(i, j, k + 1)) {
          continue;
        }
        const Vec3 p = mask.geometry.index_to_world(Vec3(i, j, k));
        if (workspace.contains(p)) continue;
        const auto cell = std::make_tuple(static_cast<long>(std::floor(p.x() / spacing)),
                                          static_cast<long>(std::floor(p.y() / spacing)),
                                          static_cast<long>(std::floor(p.z() / spacing)));
        if (used.count(cell)) continue;
        used[cell] = true;
        set.points.push_back({next_id++, p, Vec3::Zero(), ControlRole::anchor});
      }
    }
  }
  return set;
}

TpsWarp fit_control_points(const ControlPointSet& set, double lambda) {
  set.validate();
  return tps_fit(set.positions(), set.targets(), lambda);
}

EditState drag_update(const EditState& state, int point_id, const Vec3& new_displacement) {
  if (!new_displacement.allFinite()) throw Error("drag displacement must be finite");
  EditState next = state;
  auto it = std::find_if(next.control_points.points.begin(), next.control_points.points.end(),
                         [&](const ControlPoint& p) { return p.id == point_id; });
  if (it == next.control_points.points.end()) {
    throw UnknownControlPoint("control point " + std::to_string(point_id) + " does not exist");
  }
  if (it->role == ControlRole::anchor) {
    throw ControlRoleError("control point " + std::to_string(point_id) + " is an anchor and cannot be dragged");
  }
  it->displacement = new_displacement;
  next.warp = fit_control_points(next.control_points, next.lambda);
  return next;
}

}  // namespace ablreg
