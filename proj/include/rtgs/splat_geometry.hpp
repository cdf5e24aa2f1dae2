#pragma once

#include <cmath>
#include <optional>

#include "rtgs/math.hpp"
#include "rtgs/splat.hpp"

namespace rtgs {

inline constexpr double kParallelTol = 1e-9;
/// Squared Mahalanobis radius of the evaluated footprint (3 sigma).
inline constexpr double kCutoffSq = 9.0;
inline constexpr double kMaxFragmentAlpha = 0.99;

/// Ray/surfel intersection in the splat's tangent plane.
struct SplatHit {
  double t;     // ray parameter of the plane hit
  double a, b;  // local offset in units of (s_u, s_v)
  double g;     // Gaussian weight exp(-(a^2 + b^2) / 2)
};

/// Exact response of a splat along a ray. Misses when the ray is parallel to
/// the plane, the hit is outside (t_min, t_max) or beyond the 3-sigma cutoff.
inline std::optional<SplatHit> intersect_splat(const SplatFrame& f, const Vec3& mean,
                                               const Vec3& origin, const Vec3& dir, double t_min,
                                               double t_max) {
  const double denom = dot(f.n, dir);
  if (std::abs(denom) < kParallelTol) return std::nullopt;
  const double t = dot(f.n, mean - origin) / denom;
  if (!(t > t_min && t < t_max)) return std::nullopt;
  const Vec3 r = origin + dir * t - mean;
  const double a = dot(f.u, r) / f.scale_u;
  const double b = dot(f.v, r) / f.scale_v;
  const double q = a * a + b * b;
  if (q > kCutoffSq) return std::nullopt;
  return SplatHit{t, a, b, std::exp(-0.5 * q)};
}

/// Adjoints of the intersection with respect to geometry and the ray.
struct HitGrad {
  Vec3 d_mean, d_u, d_v, d_n;
  double d_log_su = 0.0, d_log_sv = 0.0;
  Vec3 d_origin, d_dir;
};

/// Accumulates dL/d(inputs) given dL/dg and dL/dt of a hit.
inline void intersect_splat_backward(const SplatFrame& f, const Vec3& mean, const Vec3& origin,
                                     const Vec3& dir, const SplatHit& h, double dg, double dt,
                                     HitGrad& out) {
  const double denom = dot(f.n, dir);
  const Vec3 r = origin + dir * h.t - mean;
  const double dq = -0.5 * h.g * dg;
  const double da = 2.0 * h.a * dq;
  const double db = 2.0 * h.b * dq;
  Vec3 dr = f.u * (da / f.scale_u) + f.v * (db / f.scale_v);
  out.d_u += r * (da / f.scale_u);
  out.d_v += r * (db / f.scale_v);
  out.d_log_su -= h.a * da;
  out.d_log_sv -= h.b * db;
  const double dt_total = dt + dot(dir, dr);
  out.d_origin += dr;
  out.d_dir += dr * h.t;
  out.d_mean -= dr;
  const double k = dt_total / denom;
  out.d_mean += f.n * k;
  out.d_origin -= f.n * k;
  out.d_n -= r * k;
  out.d_dir -= f.n * (h.t * k);
}

/// Per-pass geometry of one primitive.
struct PreparedSplat {
  SplatFrame frame;
  Activated act;
};

inline std::optional<PreparedSplat> prepare_splat(const SplatParams& p) {
  auto f = splat_basis(p);
  if (!f) return std::nullopt;
  return PreparedSplat{*f, activate(p)};
}

/// World-space bound of the 3-sigma ellipse.
inline Aabb splat_bounds(const SplatFrame& f, const Vec3& mean) {
  const double k = std::sqrt(kCutoffSq);
  Vec3 half;
  for (int a = 0; a < 3; ++a) {
    const double eu = f.u[a] * f.scale_u, ev = f.v[a] * f.scale_v;
    half[a] = k * std::sqrt(eu * eu + ev * ev);
  }
  return {mean - half, mean + half};
}

/// Front-facing normal: the splat normal flipped towards the ray origin.
inline double facing_sign(const SplatFrame& f, const Vec3& dir) {
  return dot(f.n, dir) < 0.0 ? 1.0 : -1.0;
}

}  // namespace rtgs
