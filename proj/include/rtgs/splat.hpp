#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <type_traits>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtgs/math.hpp"
#include "rtgs/sh.hpp"

namespace rtgs {

/// Raw (pre-activation) parameters of one 2D Gaussian surfel. The same layout
/// doubles as the adjoint container.
struct SplatParams {
  Vec3 mean;
  Vec3 tangent_u{1.0, 0.0, 0.0};
  Vec3 tangent_v{0.0, 1.0, 0.0};
  std::array<double, 2> log_scale{};
  double opacity_logit = 0.0;
  std::array<Vec3, kShCoeffs> sh{};
  double roughness_logit = 0.0;
  Vec3 f0_logit;
  double ks_logit = 0.0;

  friend bool operator==(const SplatParams&, const SplatParams&) = default;
};
using SplatGrad = SplatParams;

inline SplatGrad zero_grad() {
  SplatGrad g;
  g.tangent_u = {};
  g.tangent_v = {};
  return g;
}

/// Optimizer parameter groups; each has its own learning rate.
enum class ParamGroup : uint8_t { Position, Tangent, Scale, Opacity, Sh, Material };
inline constexpr int kParamGroupCount = 6;

/// Calls f(group, span) for every scalar block of p, in a fixed order.
template <typename P, typename F>
  requires std::same_as<std::remove_const_t<P>, SplatParams>
void visit_params(P& p, F&& f) {
  using D = std::conditional_t<std::is_const_v<P>, const double, double>;
  f(ParamGroup::Position, std::span<D>(p.mean.data(), 3));
  f(ParamGroup::Tangent, std::span<D>(p.tangent_u.data(), 3));
  f(ParamGroup::Tangent, std::span<D>(p.tangent_v.data(), 3));
  f(ParamGroup::Scale, std::span<D>(p.log_scale.data(), 2));
  f(ParamGroup::Opacity, std::span<D>(&p.opacity_logit, 1));
  f(ParamGroup::Sh, std::span<D>(p.sh[0].data(), 3 * kShCoeffs));
  f(ParamGroup::Material, std::span<D>(&p.roughness_logit, 1));
  f(ParamGroup::Material, std::span<D>(p.f0_logit.data(), 3));
  f(ParamGroup::Material, std::span<D>(&p.ks_logit, 1));
}
inline constexpr int kParamsPerSplat = 3 + 3 + 3 + 2 + 1 + 3 * kShCoeffs + 1 + 3 + 1;

inline constexpr double kMinRoughness = 0.02;

/// Activated attributes of a primitive.
struct Activated {
  double opacity;
  double roughness;
  double ks;
  Vec3 f0;
  double scale_u, scale_v;
};

inline Activated activate(const SplatParams& p) {
  return {sigmoid(p.opacity_logit),
          std::clamp(sigmoid(p.roughness_logit), kMinRoughness, 1.0),
          sigmoid(p.ks_logit),
          {sigmoid(p.f0_logit.x), sigmoid(p.f0_logit.y), sigmoid(p.f0_logit.z)},
          std::exp(p.log_scale[0]),
          std::exp(p.log_scale[1])};
}

/// Orthonormal tangent frame of a splat.
struct SplatFrame {
  Vec3 u, v, n;
  double scale_u, scale_v;
};

inline constexpr double kDegenerateTangentTol = 1e-8;

/// Gram-Schmidt frame from the stored tangents; nullopt for near-parallel
/// tangents (the primitive is then skipped by every pass).
inline std::optional<SplatFrame> splat_basis(const SplatParams& p) {
  const double lu = norm(p.tangent_u), lv = norm(p.tangent_v);
  if (!(lu > 0.0) || !(lv > 0.0) || !is_finite(p.tangent_u) || !is_finite(p.tangent_v))
    return std::nullopt;
  const Vec3 u = p.tangent_u / lu;
  if (norm(cross(u, p.tangent_v / lv)) < kDegenerateTangentTol) return std::nullopt;
  const Vec3 w = p.tangent_v - u * dot(p.tangent_v, u);
  const Vec3 v = w / norm(w);
  return SplatFrame{u, v, cross(u, v), std::exp(p.log_scale[0]), std::exp(p.log_scale[1])};
}

/// Adjoint of splat_basis: dL/du, dL/dv, dL/dn of the orthonormal frame to
/// dL/d(stored tangents), accumulated into g.
inline void splat_basis_backward(const SplatParams& p, Vec3 du, Vec3 dv, const Vec3& dn,
                                 SplatGrad& g) {
  const double lu = norm(p.tangent_u);
  const Vec3 u = p.tangent_u / lu;
  const Vec3 w = p.tangent_v - u * dot(p.tangent_v, u);
  const double lw = norm(w);
  const Vec3 v = w / lw;
  // n = u x v
  du += cross(v, dn);
  dv += cross(dn, u);
  // v = w / |w|
  const Vec3 dw = (dv - v * dot(v, dv)) / lw;
  // w = tv - (tv . u) u
  g.tangent_v += dw - u * dot(u, dw);
  du -= dw * dot(p.tangent_v, u) + p.tangent_v * dot(u, dw);
  // u = tu / |tu|
  g.tangent_u += (du - u * dot(u, du)) / lu;
}

enum class Role : uint8_t { Diffuse, Reflection, Transmittance };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::Diffuse: return "diffuse";
    case Role::Reflection: return "reflection";
    case Role::Transmittance: return "transmittance";
  }
  return "?";
}

/// A tagged primitive collection. Only the diffuse set is rasterized.
class GaussianSet {
 public:
  explicit GaussianSet(Role role, int sh_degree = -1)
      : role_(role), sh_degree_(sh_degree >= 0 ? sh_degree : (role == Role::Diffuse ? 3 : 0)) {}

  Role role() const { return role_; }
  int sh_degree() const { return sh_degree_; }
  size_t size() const { return primitives.size(); }
  bool empty() const { return primitives.empty(); }

  std::vector<SplatParams> primitives;

  friend bool operator==(const GaussianSet&, const GaussianSet&) = default;

 private:
  Role role_;
  int sh_degree_;
};

/// Seed point with color, as produced by structure-from-motion.
struct ColoredPoint {
  Vec3 position;
  Vec3 color;
  friend bool operator==(const ColoredPoint&, const ColoredPoint&) = default;
};

namespace init_defaults {
inline constexpr double kOpacity = 0.1;
inline constexpr double kRoughness = 0.5;
inline constexpr double kSpecular = 0.1;
inline constexpr double kF0 = 0.04;
inline constexpr double kMinScale = 1e-4;
inline constexpr int kNeighbors = 3;
}  // namespace init_defaults

/// Uniformly distributed random orthonormal tangent pair.
template <typename Rng>
void random_tangents(Rng& rng, Vec3& tu, Vec3& tv) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (;;) {
    const Vec3 a{nd(rng), nd(rng), nd(rng)};
    const Vec3 b{nd(rng), nd(rng), nd(rng)};
    const Vec3 u = normalize(a);
    const Vec3 w = b - u * dot(b, u);
    if (norm(a) < 1e-6 || norm(w) < 1e-6) continue;
    tu = u;
    tv = normalize(w);
    return;
  }
}

inline void set_default_material(SplatParams& p) {
  p.opacity_logit = logit(init_defaults::kOpacity);
  p.roughness_logit = logit(init_defaults::kRoughness);
  p.ks_logit = logit(init_defaults::kSpecular);
  p.f0_logit = Vec3::splat(logit(init_defaults::kF0));
}

/// Mean distance to the k nearest other points (brute force), clamped below.
inline std::vector<double> knn_mean_distance(std::span<const ColoredPoint> pts, int k,
                                             double floor) {
  std::vector<double> out(pts.size(), floor);
  std::vector<double> d2;
  for (size_t i = 0; i < pts.size(); ++i) {
    d2.clear();
    for (size_t j = 0; j < pts.size(); ++j)
      if (j != i) {
        const Vec3 d = pts[j].position - pts[i].position;
        d2.push_back(dot(d, d));
      }
    const size_t kk = std::min<size_t>(k, d2.size());
    if (kk == 0) continue;
    std::partial_sort(d2.begin(), d2.begin() + static_cast<long>(kk), d2.end());
    double s = 0.0;
    for (size_t q = 0; q < kk; ++q) s += std::sqrt(d2[q]);
    out[i] = std::max(s / static_cast<double>(kk), floor);
  }
  return out;
}

/// One diffuse splat per seed point, isotropic scale from the 3-NN distance.
inline GaussianSet init_diffuse_from_points(std::span<const ColoredPoint> points,
                                            uint64_t seed = 0) {
  if (points.empty()) throw Error("init_diffuse_from_points: empty point list");
  GaussianSet set(Role::Diffuse);
  const auto scales =
      knn_mean_distance(points, init_defaults::kNeighbors, init_defaults::kMinScale);
  std::mt19937_64 rng(seed);
  set.primitives.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    SplatParams p;
    p.mean = points[i].position;
    random_tangents(rng, p.tangent_u, p.tangent_v);
    p.log_scale = {std::log(scales[i]), std::log(scales[i])};
    set_default_material(p);
    p.sh[0] = (points[i].color - Vec3::splat(0.5)) / kShC0;
    set.primitives.push_back(p);
  }
  return set;
}

/// Uniform random primitives inside bbox, deterministic in `seed`.
inline GaussianSet init_random_in_bbox(const Aabb& bbox, int count, Role role, uint64_t seed) {
  if (count < 1) throw Error("init_random_in_bbox: count must be >= 1");
  if (role == Role::Diffuse) throw Error("init_random_in_bbox: role must be reflection or transmittance");
  const Vec3 e = bbox.extent();
  if (!(e.x > 0.0) || !(e.y > 0.0) || !(e.z > 0.0))
    throw Error("init_random_in_bbox: bounding box has zero volume");
  GaussianSet set(role);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double scale = bbox.diagonal() / 100.0;
  set.primitives.reserve(count);
  for (int i = 0; i < count; ++i) {
    SplatParams p;
    const double a = ud(rng), b = ud(rng), c = ud(rng);
    p.mean = bbox.lo + Vec3{a * e.x, b * e.y, c * e.z};
    random_tangents(rng, p.tangent_u, p.tangent_v);
    p.log_scale = {std::log(scale), std::log(scale)};
    set_default_material(p);
    set.primitives.push_back(p);
  }
  return set;
}

}  // namespace rtgs
