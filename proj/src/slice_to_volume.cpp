#include "ablreg/slice_to_volume.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ablreg/kernels.hpp"

namespace ablreg {

using Vec6 = Eigen::Matrix<double, 6, 1>;

void TrackedFrame::validate() const {
  if (!(image.spacing_x > 0.0) || !(image.spacing_y > 0.0)) throw Error("frame pixel spacing must be > 0");
  if (image.width < 2 || image.height < 2) throw Error("frame must be at least 2x2 pixels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw Error("frame pixel count does not match its size");
  }
  tracked_pose.validate();
  if (tracked_pose.nu != image.width || tracked_pose.nv != image.height) {
    throw Error("tracked pose resolution does not match the frame size");
  }
}

TrackedFrame frame_from_pose(const Image2D& image, const SlicePose& pose, double timestamp) {
  TrackedFrame f;
  f.image = image;
  f.timestamp = timestamp;
  f.tracked_pose = pose;
  f.tracked_pose.nu = image.width;
  f.tracked_pose.nv = image.height;
  f.tracked_pose.width_mm = (image.width - 1) * image.spacing_x;
  f.tracked_pose.height_mm = (image.height - 1) * image.spacing_y;
  return f;
}

double similarity_ncc(const Image2D& slice, const Volume& volume, const SlicePose& pose, double min_overlap,
                      Exec exec) {
  if (slice.width != pose.nu || slice.height != pose.nv) throw Error("similarity_ncc: slice and pose sizes differ");
  const MaskedImage mpr = mpr_slice(volume, pose, exec);
  const std::size_t total = slice.pixels.size();
  std::size_t n = 0;
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    if (!mpr.valid[i]) continue;
    ++n;
    sa += slice.pixels[i];
    sb += mpr.image.pixels[i];
  }
  if (n < 2 || static_cast<double>(n) < min_overlap * static_cast<double>(total)) return kNccInvalid;
  const double ma = sa / static_cast<double>(n);
  const double mb = sb / static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    if (!mpr.valid[i]) continue;
    const double a = slice.pixels[i] - ma;
    const double b = mpr.image.pixels[i] - mb;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  if (!(saa > 1e-20) || !(sbb > 1e-20)) return kNccInvalid;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

SlicePose perturb_pose(const SlicePose& base, const Vec6& params) {
  const Vec3 centre = base.pixel_to_world(0.5 * (base.nu - 1), 0.5 * (base.nv - 1));
  RigidTransform3D delta;
  delta.rotation = from_euler_xyz_deg(params.tail<3>());
  delta.translation = centre - delta.rotation * centre + params.head<3>();
  SlicePose out = base;
  out.transform = compose(delta, base.transform);
  return out;
}

namespace {

double bilinear(const Image2D& img, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(img.width - 1));
  v = std::clamp(v, 0.0, static_cast<double>(img.height - 1));
  const int u0 = std::min(static_cast<int>(u), img.width - 2);
  const int v0 = std::min(static_cast<int>(v), img.height - 2);
  const double fu = u - u0;
  const double fv = v - v0;
  return (1 - fu) * (1 - fv) * img.at(u0, v0) + fu * (1 - fv) * img.at(u0 + 1, v0) +
         (1 - fu) * fv * img.at(u0, v0 + 1) + fu * fv * img.at(u0 + 1, v0 + 1);
}

Image2D smooth121(const Image2D& in) {
  Image2D tmp = in, out = in;
  const int w = in.width, h = in.height;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double l = in.at(std::max(u - 1, 0), v), r = in.at(std::min(u + 1, w - 1), v);
      tmp.at(u, v) = 0.25 * l + 0.5 * in.at(u, v) + 0.25 * r;
    }
  }
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double t = tmp.at(u, std::max(v - 1, 0)), b = tmp.at(u, std::min(v + 1, h - 1));
      out.at(u, v) = 0.25 * t + 0.5 * tmp.at(u, v) + 0.25 * b;
    }
  }
  return out;
}

struct Level {
  Image2D image;
  SlicePose pose;  // init pose at this level's resolution
};

Level make_level(const Image2D& image, const SlicePose& pose, int level) {
  if (level == 0) return {image, pose};
  Image2D s = image;
  for (int i = 0; i < level; ++i) s = smooth121(s);
  const int f = 1 << level;
  const int nu = std::max(8, (image.width - 1) / f + 1);
  const int nv = std::max(8, (image.height - 1) / f + 1);
  Level out;
  out.pose = pose.with_resolution(nu, nv);
  out.image.width = nu;
  out.image.height = nv;
  out.image.spacing_x = out.pose.pixel_spacing_x();
  out.image.spacing_y = out.pose.pixel_spacing_y();
  out.image.pixels.resize(static_cast<std::size_t>(nu) * nv);
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      out.image.at(u, v) = bilinear(s, u * static_cast<double>(image.width - 1) / (nu - 1),
                                    v * static_cast<double>(image.height - 1) / (nv - 1));
    }
  }
  return out;
}

}  // namespace

S2VResult register_slice_from(const TrackedFrame& frame, const Volume& volume, const SlicePose& init,
                              const S2VOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  frame.validate();
  if (options.levels < 1) throw S2VError("s2v: levels must be >= 1");
  SlicePose init_pose = init;
  init_pose.nu = frame.image.width;
  init_pose.nv = frame.image.height;
  init_pose.width_mm = frame.tracked_pose.width_mm;
  init_pose.height_mm = frame.tracked_pose.height_mm;

  S2VResult result;
  result.initial_score = similarity_ncc(frame.image, volume, init_pose, options.min_overlap, options.exec);
  if (result.initial_score == kNccInvalid) {
    throw S2VError("s2v: insufficient overlap between frame and volume at the initial pose");
  }

  Vec6 x = Vec6::Zero();
  int evaluations = 0;
  bool converged = false;
  for (int level = options.levels - 1; level >= 0; --level) {
    const Level lv = make_level(frame.image, init_pose, level);
    const auto f = [&](const Vec6& p) {
      ++evaluations;
      return similarity_ncc(lv.image, volume, perturb_pose(lv.pose, p), options.min_overlap, options.exec);
    };
    const double scale = static_cast<double>(1 << level);
    double step_t = options.initial_step_mm * scale / static_cast<double>(1 << (options.levels - 1));
    double step_r = options.initial_step_deg * scale / static_cast<double>(1 << (options.levels - 1));
    const double stop = options.final_step_mm * scale;
    // golden-section maximisation of f(x + t * dir) over t in [lo, hi]
    const auto line_max = [&](const Vec6& dir, double lo, double hi) {
      const double g = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = lo, b = hi;
      double t1 = b - g * (b - a), t2 = a + g * (b - a);
      double f1 = f(x + t1 * dir), f2 = f(x + t2 * dir);
      for (int it = 0; it < options.golden_iterations; ++it) {
        if (f1 >= f2) {
          b = t2;
          t2 = t1;
          f2 = f1;
          t1 = b - g * (b - a);
          f1 = f(x + t1 * dir);
        } else {
          a = t1;
          t1 = t2;
          f1 = f2;
          t2 = a + g * (b - a);
          f2 = f(x + t2 * dir);
        }
      }
      return f1 >= f2 ? std::pair{t1, f1} : std::pair{t2, f2};
    };
    // coordinate sweeps with a pattern move, halving the steps on stalls
    const auto descend = [&](Vec6& xs, double st, double sr) {
      std::swap(x, xs);
      double best = f(x);
      for (int sweep = 0; sweep < options.max_sweeps_per_level && st >= stop; ++sweep) {
        const double before = best;
        const Vec6 x_start = x;
        for (int c = 0; c < 6; ++c) {
          const Vec6 dir = Vec6::Unit(c);
          const double s = c < 3 ? st : sr;
          const auto [t, val] = line_max(dir, -s, s);
          if (val > best) {
            best = val;
            x += t * dir;
          }
        }
        const Vec6 d = x - x_start;
        if (best > before && d.norm() > 0.0) {
          const auto [t, val] = line_max(d, 0.0, 2.0);
          if (val > best) {
            best = val;
            x += t * d;
          }
        }
        if (best - before < 1e-7) {
          st *= 0.5;
          sr *= 0.5;
        }
      }
      std::swap(x, xs);
      return std::pair{best, st};
    };

    if (level == options.levels - 1 && options.coarse_restarts) {
      // starts at the initial pose and one search width along each parameter
      Vec6 best_x = x;
      double best_val = kNccInvalid, best_step = step_t;
      for (int k = -1; k < 12; ++k) {
        Vec6 xs = x;
        if (k >= 0) xs[k / 2] += (k % 2 ? -1.0 : 1.0) * (k / 2 < 3 ? step_t : step_r);
        const auto [val, st] = descend(xs, step_t, step_r);
        if (val > best_val) {
          best_val = val;
          best_x = xs;
          best_step = st;
        }
      }
      x = best_x;
      step_t = best_step;
    } else {
      step_t = descend(x, step_t, step_r).second;
    }
    if (level == 0) converged = step_t < stop;
  }

  SlicePose refined = perturb_pose(init_pose, x);
  double score = similarity_ncc(frame.image, volume, refined, options.min_overlap, options.exec);
  if (!(score >= result.initial_score)) {
    refined = init_pose;
    score = result.initial_score;
  }
  result.refined_pose = refined;
  result.score = score;
  result.iterations = evaluations;
  result.converged = converged;
  result.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

S2VResult register_slice(const TrackedFrame& frame, const Volume& volume, const S2VOptions& options) {
  return register_slice_from(frame, volume, frame.tracked_pose, options);
}

std::vector<S2VResult> register_sequence(const std::vector<TrackedFrame>& frames, const Volume& volume,
                                         const S2VOptions& options, bool warm_start) {
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].timestamp < frames[i - 1].timestamp) throw S2VError("s2v: frames are not time-ordered");
  }
  std::vector<S2VResult> out;
  out.reserve(frames.size());
  RigidTransform3D correction;
  for (const TrackedFrame& frame : frames) {
    SlicePose init = frame.tracked_pose;
    if (warm_start) init.transform = compose(correction, frame.tracked_pose.transform);
    try {
      S2VResult r = register_slice_from(frame, volume, init, options);
      correction = compose(r.refined_pose.transform, inverse(frame.tracked_pose.transform));
      out.push_back(std::move(r));
    } catch (const Error& e) {
      S2VResult r;
      r.failed = true;
      r.error = e.what();
      r.refined_pose = init;
      r.score = kNccInvalid;
      r.initial_score = kNccInvalid;
      out.push_back(std::move(r));
    }
  }
  return out;
}

Vec3 us_to_ctmri(const Vec3& p_us, const RigidTransform3D& t_rigid, const std::optional<TpsWarp>& warp) {
  const Vec3 q = t_rigid.apply(p_us);
  return warp ? warp->apply(q) : q;
}

FusedView mpr_chain(const S2VResult& result, const TrackedFrame& frame, const RigidTransform3D& t_rigid,
                    const std::optional<TpsWarp>& warp, const Volume& ctmri, const FusedViewOptions& options,
                    Exec exec) {
  const SlicePose& pose = result.refined_pose;
  pose.validate();
  if (pose.nu != frame.image.width || pose.nv != frame.image.height) {
    throw Error("mpr_chain: refined pose and frame sizes differ");
  }
  const std::size_t n = static_cast<std::size_t>(pose.nu) * pose.nv;
  std::vector<Vec3> pts(n);
  for (int v = 0; v < pose.nv; ++v) {
    for (int u = 0; u < pose.nu; ++u) pts[static_cast<std::size_t>(v) * pose.nu + u] = t_rigid.apply(pose.pixel_to_world(u, v));
  }
  if (warp) pts = warp->apply(pts, exec);

  FusedView view;
  view.blend = options.blend;
  view.clip_depth = 0.0;
  view.window_lo = options.window_lo;
  view.window_hi = options.window_hi;
  view.checker_size = options.checker_size;
  view.base.image.width = pose.nu;
  view.base.image.height = pose.nv;
  view.base.image.spacing_x = pose.pixel_spacing_x();
  view.base.image.spacing_y = pose.pixel_spacing_y();
  view.base.image.pixels.resize(n);
  view.base.valid.resize(n);
  if (exec == Exec::serial) {
    kernels::serial::sample_points(ctmri, pts, view.base.image.pixels, view.base.valid);
  } else {
    kernels::parallel::sample_points(ctmri, pts, view.base.image.pixels, view.base.valid);
  }
  view.overlay.image = frame.image;
  view.overlay.valid.assign(n, 1);
  view.opacity.resize(n);
  for (std::size_t i = 0; i < n; ++i) view.opacity[i] = overlay_opacity(frame.image.pixels[i], options);
  return view;
}

}  // namespace ablreg
