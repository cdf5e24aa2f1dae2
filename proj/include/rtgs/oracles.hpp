#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/splat.hpp"
#include "rtgs/splat_geometry.hpp"

namespace rtgs {

// Reference implementations used to validate the optimized kernels. They are
// deliberately naive: O(N) per ray, no tiles, no BVH, no early termination.

struct OracleFragment {
  int id = -1;
  double t = 0.0;
  double alpha = 0.0;
  std::vector<double> x;
};

struct OracleBlend {
  std::vector<double> value;
  double alpha = 0.0;
};

/// Direct evaluation of sum_i x_i a_i prod_{j<i} (1 - a_j) over every fragment.
inline OracleBlend brute_compose_oracle(std::span<const OracleFragment> frags, int channels) {
  OracleBlend out;
  out.value.assign(channels, 0.0);
  for (size_t i = 0; i < frags.size(); ++i) {
    double w = frags[i].alpha;
    for (size_t j = 0; j < i; ++j) w *= 1.0 - frags[j].alpha;
    for (int k = 0; k < channels; ++k) out.value[k] += frags[i].x[k] * w;
  }
  double prod = 1.0;
  for (const auto& f : frags) prod *= 1.0 - f.alpha;
  out.alpha = 1.0 - prod;
  return out;
}

/// Every primitive hit by the ray, ordered by hit distance (ties by id). The
/// single attribute carried is the hit distance.
inline std::vector<OracleFragment> brute_ray_fragments(const GaussianSet& set, const Vec3& origin,
                                                       const Vec3& dir, double t_min,
                                                       double t_max) {
  std::vector<OracleFragment> out;
  for (int i = 0; i < static_cast<int>(set.size()); ++i) {
    const auto& p = set.primitives[i];
    const auto f = splat_basis(p);
    if (!f) continue;
    if (auto h = intersect_splat(*f, p.mean, origin, dir, t_min, t_max))
      out.push_back({i, h->t, std::min(sigmoid(p.opacity_logit) * h->g, kMaxFragmentAlpha), {h->t}});
  }
  std::stable_sort(out.begin(), out.end(), [](const OracleFragment& a, const OracleFragment& b) {
    return a.t < b.t || (a.t == b.t && a.id < b.id);
  });
  return out;
}

/// Fragments of one camera pixel, ordered by camera-space depth of the
/// primitive centers (ties by id), with centers at z <= near culled.
inline std::vector<OracleFragment> brute_pixel_fragments(const GaussianSet& set, const Camera& cam,
                                                         int px, int py, double near) {
  const Vec3 eye = cam.center(), dir = cam.pixel_ray(px, py);
  std::vector<std::pair<double, OracleFragment>> keyed;
  for (int i = 0; i < static_cast<int>(set.size()); ++i) {
    const auto& p = set.primitives[i];
    const auto f = splat_basis(p);
    if (!f) continue;
    const double z = cam.to_camera(p.mean).z;
    if (z <= near) continue;
    if (auto h = intersect_splat(*f, p.mean, eye, dir, near, std::numeric_limits<double>::infinity()))
      keyed.push_back(
          {z, {i, h->t, std::min(sigmoid(p.opacity_logit) * h->g, kMaxFragmentAlpha), {h->t}}});
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second.id < b.second.id);
  });
  std::vector<OracleFragment> out;
  for (auto& k : keyed) out.push_back(std::move(k.second));
  return out;
}

/// Result of a finite-difference sweep.
struct FdReport {
  std::vector<double> numeric;    // central differences
  std::vector<bool> smooth;       // one-sided differences agree
  std::vector<int> non_finite;    // parameters whose perturbation produced NaN/inf
};

/// Central differences of f at x for every coordinate. A coordinate is marked
/// non-smooth when its forward and backward one-sided slopes disagree, which
/// flags kinks (clamps, cutoffs, fragment reordering) inside the stencil.
inline FdReport fd_gradient_oracle(const std::function<double(std::span<const double>)>& f,
                                   std::vector<double> x, double step, double kink_tol = 0.05) {
  FdReport r;
  const size_t n = x.size();
  r.numeric.assign(n, 0.0);
  r.smooth.assign(n, true);
  const double f0 = f(x);
  for (size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    x[i] = xi + step;
    const double fp = f(x);
    x[i] = xi - step;
    const double fm = f(x);
    x[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(f0)) {
      r.non_finite.push_back(static_cast<int>(i));
      r.numeric[i] = std::numeric_limits<double>::quiet_NaN();
      r.smooth[i] = false;
      continue;
    }
    r.numeric[i] = (fp - fm) / (2.0 * step);
    const double fwd = (fp - f0) / step, bwd = (f0 - fm) / step;
    const double scale = std::max({std::abs(fwd), std::abs(bwd), 1e-6});
    r.smooth[i] = std::abs(fwd - bwd) <= kink_tol * scale + 1e-9 / step;
  }
  return r;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  int worst = -1;
  int compared = 0;
  int skipped = 0;  // non-smooth coordinates
  bool passed(double tol) const { return max_rel_error <= tol; }
};

/// Relative error (|a - n| - floor)+ / max(|a|, |n|) over the smooth
/// coordinates, i.e. an allclose test with an absolute floor.
inline GradientCheck compare_gradients(std::span<const double> analytic, const FdReport& fd,
                                       double abs_floor) {
  GradientCheck c;
  for (size_t i = 0; i < analytic.size(); ++i) {
    if (!fd.smooth[i]) {
      ++c.skipped;
      continue;
    }
    ++c.compared;
    const double a = analytic[i], n = fd.numeric[i];
    const double excess = std::abs(a - n) - abs_floor;
    const double e = excess <= 0.0 ? 0.0 : excess / std::max(std::abs(a), std::abs(n));
    if (e > c.max_rel_error || !std::isfinite(a)) {
      c.max_rel_error = std::isfinite(a) ? e : std::numeric_limits<double>::infinity();
      c.worst = static_cast<int>(i);
    }
  }
  return c;
}

/// Flattens every scalar of every primitive in visit order.
inline std::vector<double> flatten_params(std::span<const SplatParams> ps) {
  std::vector<double> out;
  out.reserve(ps.size() * kParamsPerSplat);
  for (const auto& p : ps)
    visit_params(p, [&](ParamGroup, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

inline void unflatten_params(std::span<const double> flat, std::span<SplatParams> ps) {
  size_t k = 0;
  for (auto& p : ps)
    visit_params(p, [&](ParamGroup, std::span<double> s) {
      for (double& v : s) v = flat[k++];
    });
}

}  // namespace rtgs
