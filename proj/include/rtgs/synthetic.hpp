#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/image.hpp"
#include "rtgs/microfacet.hpp"
#include "rtgs/parallel.hpp"
#include "rtgs/scene_io.hpp"

namespace rtgs {

// ---------------------------------------------------------------------------
// Analytic scenes. Lambertian surfaces show their albedo (unit ambient light,
// no occlusion); rays that leave the scene return the black background.

enum class ShapeKind { Rect, Box, Sphere };
enum class SurfaceKind { Lambert, Mirror, Glass };

struct Shape {
  ShapeKind kind = ShapeKind::Rect;
  Vec3 center;
  Vec3 axis_u{1, 0, 0}, axis_v{0, 1, 0};  // rect: orthonormal in-plane axes
  Vec3 half{0.5, 0.5, 0.5};               // rect: (u, v) half sizes; box: half extents
  double radius = 1.0;                    // sphere
  bool inward = false;                    // sphere seen from inside
};

struct Texture {
  Vec3 a{0.5, 0.5, 0.5}, b{0.5, 0.5, 0.5};
  double cell = 0.0;               // rect checker size; sphere: cells per quarter turn; 0 = uniform
  std::vector<Vec3> face_colors;   // box: -x, +x, -y, +y, -z, +z
};

struct Surface {
  SurfaceKind kind = SurfaceKind::Lambert;
  Texture albedo;        // C_d
  double roughness = 0.5;  // raw, clamped and remapped by the BSDF
  Vec3 f0 = Vec3::splat(0.04);
  double ks = 0.0;
};

struct AnalyticObject {
  std::string name;
  Shape shape;
  Surface surface;
  bool backdrop = false;  // excluded from the scene bounding box
};

struct OrbitRig {
  Vec3 target;
  double radius = 3.0;
  double elevation = 0.4;     // radians
  double azimuth_span = 0.0;  // radians; >= 2 pi means a full circle
  double fov_y = 0.7;
};

struct AnalyticScene {
  std::string name;
  std::vector<AnalyticObject> objects;
  Vec3 background;
  OrbitRig rig;
};

inline constexpr double kSlabThickness = 0.2;

namespace synth_detail {

inline AnalyticObject checker_floor(double half, double y, double cell) {
  AnalyticObject o{"checker floor", {}, {}, false};
  o.shape.kind = ShapeKind::Rect;
  o.shape.center = {0, y, 0};
  o.shape.axis_u = {1, 0, 0};
  o.shape.axis_v = {0, 0, 1};
  o.shape.half = {half, half, 0};
  o.surface.albedo = {{0.85, 0.82, 0.75}, {0.12, 0.16, 0.22}, cell, {}};
  return o;
}

inline AnalyticObject mirror_plane(const Vec3& center) {
  AnalyticObject o{"mirror", {}, {}, false};
  o.shape.kind = ShapeKind::Rect;
  o.shape.center = center;
  o.shape.half = {0.75, 0.5, 0};
  o.surface.kind = SurfaceKind::Mirror;
  o.surface.albedo.a = o.surface.albedo.b = {0.08, 0.08, 0.09};
  o.surface.roughness = 0.05;
  o.surface.f0 = {0.95, 0.93, 0.88};
  o.surface.ks = 0.85;
  return o;
}

inline AnalyticObject probe_box(const Vec3& center) {
  AnalyticObject o{"probe box", {}, {}, false};
  o.shape.kind = ShapeKind::Box;
  o.shape.center = center;
  o.shape.half = Vec3::splat(0.18);
  o.surface.albedo.face_colors = {{0.85, 0.15, 0.1}, {0.1, 0.7, 0.2},  {0.9, 0.8, 0.15},
                                  {0.2, 0.3, 0.9},   {0.8, 0.2, 0.75}, {0.15, 0.75, 0.8}};
  return o;
}

inline AnalyticObject glass_slab(const Vec3& center) {
  AnalyticObject o{"glass slab", {}, {}, false};
  o.shape.kind = ShapeKind::Box;
  o.shape.center = center;
  o.shape.half = {0.45, 0.32, 0.5 * kSlabThickness};
  o.surface.kind = SurfaceKind::Glass;
  o.surface.albedo.a = o.surface.albedo.b = {0.45, 0.5, 0.55};
  o.surface.roughness = 0.05;
  o.surface.f0 = Vec3::splat(0.04);
  o.surface.ks = 0.9;
  return o;
}

inline AnalyticObject interior_sphere(const Vec3& center) {
  AnalyticObject o{"interior sphere", {}, {}, false};
  o.shape.kind = ShapeKind::Sphere;
  o.shape.center = center;
  o.shape.radius = 0.085;
  o.surface.albedo.a = o.surface.albedo.b = {0.9, 0.3, 0.1};
  return o;
}

inline AnalyticObject backdrop_dome(double radius) {
  AnalyticObject o{"textured backdrop", {}, {}, true};
  o.shape.kind = ShapeKind::Sphere;
  o.shape.radius = radius;
  o.shape.inward = true;
  o.surface.albedo = {{0.3, 0.55, 0.8}, {0.75, 0.6, 0.35}, 2.0, {}};
  return o;
}

}  // namespace synth_detail

/// mirror: checker floor, vertical mirror and a colored probe box seen from a
/// frontal arc. slab: a thin glass box with a sphere inside, in front of a
/// textured backdrop, seen from a full orbit. combo: both.
inline AnalyticScene build_preset(const std::string& name) {
  using namespace synth_detail;
  AnalyticScene s;
  s.name = name;
  if (name == "mirror") {
    s.objects = {checker_floor(1.2, 0.0, 0.3), mirror_plane({0, 0.55, -0.9}), probe_box({0.2, 0.18, 0.05})};
    s.rig = {{0, 0.35, -0.2}, 3.2, 0.5, 80.0 * kPi / 180.0, 0.75};
  } else if (name == "slab") {
    s.objects = {glass_slab({0, 0, 0}), interior_sphere({0, 0, 0}), backdrop_dome(5.0)};
    s.rig = {{0, 0, 0}, 2.0, 0.3, 2.0 * kPi, 0.7};
  } else if (name == "combo") {
    s.objects = {checker_floor(1.5, 0.0, 0.3), mirror_plane({-0.7, 0.55, -1.0}), probe_box({-0.6, 0.18, 0.1}),
                 glass_slab({0.75, 0.45, 0.0}), interior_sphere({0.75, 0.45, 0.0}), backdrop_dome(6.0)};
    s.rig = {{0, 0.35, 0}, 3.2, 0.45, 2.0 * kPi, 0.8};
  } else {
    throw Error("build_preset: unknown preset '" + name + "' (expected mirror, slab or combo)");
  }
  return s;
}

/// Orbit cameras looking at the rig target.
inline std::vector<Camera> orbit_cameras(const OrbitRig& rig, int count, int width, int height) {
  if (count < 1) throw Error("orbit_cameras: count must be >= 1");
  std::vector<Camera> cams;
  const bool full = rig.azimuth_span >= 2.0 * kPi - 1e-9;
  for (int i = 0; i < count; ++i) {
    const double t = full ? static_cast<double>(i) / count
                          : (count > 1 ? static_cast<double>(i) / (count - 1) - 0.5 : 0.0);
    const double az = t * rig.azimuth_span;
    const Vec3 dir{std::sin(az) * std::cos(rig.elevation), std::sin(rig.elevation),
                   std::cos(az) * std::cos(rig.elevation)};
    cams.push_back(look_at(rig.target + dir * rig.radius, rig.target, {0, 1, 0}, width, height, rig.fov_y));
  }
  return cams;
}

// ---------------------------------------------------------------------------
// Ray queries.

struct SurfaceHit {
  double t = 0.0;
  Vec3 normal;  // geometric, outward (inward spheres point to their center)
  int object = -1;
};

namespace synth_detail {

inline std::optional<SurfaceHit> intersect(const Shape& s, const Vec3& o, const Vec3& d, double tmin) {
  switch (s.kind) {
    case ShapeKind::Rect: {
      const Vec3 n = cross(s.axis_u, s.axis_v);
      const double dn = dot(d, n);
      if (std::abs(dn) < 1e-14) return std::nullopt;
      const double t = dot(s.center - o, n) / dn;
      if (!(t > tmin)) return std::nullopt;
      const Vec3 p = o + d * t - s.center;
      if (std::abs(dot(p, s.axis_u)) > s.half.x || std::abs(dot(p, s.axis_v)) > s.half.y) return std::nullopt;
      return SurfaceHit{t, n, -1};
    }
    case ShapeKind::Box: {
      double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
      int a0 = -1, a1 = -1;
      for (int a = 0; a < 3; ++a) {
        const double lo = s.center[a] - s.half[a], hi = s.center[a] + s.half[a];
        if (d[a] == 0.0) {
          if (o[a] < lo || o[a] > hi) return std::nullopt;
          continue;
        }
        double ta = (lo - o[a]) / d[a], tb = (hi - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) t0 = ta, a0 = a;
        if (tb < t1) t1 = tb, a1 = a;
      }
      if (t0 > t1) return std::nullopt;
      const bool entering = t0 > tmin;
      const double t = entering ? t0 : t1;
      const int axis = entering ? a0 : a1;
      if (!(t > tmin) || axis < 0) return std::nullopt;
      Vec3 n;
      n[axis] = (o[axis] + d[axis] * t) > s.center[axis] ? 1.0 : -1.0;
      return SurfaceHit{t, n, -1};
    }
    case ShapeKind::Sphere: {
      const Vec3 oc = o - s.center;
      const double b = dot(oc, d), c = dot(oc, oc) - s.radius * s.radius;
      const double disc = b * b - c;
      if (disc < 0.0) return std::nullopt;
      const double sq = std::sqrt(disc);
      double t = -b - sq;
      if (!(t > tmin)) t = -b + sq;
      if (!(t > tmin)) return std::nullopt;
      Vec3 n = (o + d * t - s.center) / s.radius;
      if (s.inward) n = -n;
      return SurfaceHit{t, n, -1};
    }
  }
  return std::nullopt;
}

inline int floor_div(double x, double cell) { return static_cast<int>(std::floor(x / cell)); }

}  // namespace synth_detail

/// Diffuse albedo of object `k` at world point p.
inline Vec3 albedo_at(const AnalyticScene& scene, int k, const Vec3& p) {
  using namespace synth_detail;
  const auto& obj = scene.objects[k];
  const auto& tex = obj.surface.albedo;
  const auto& s = obj.shape;
  if (s.kind == ShapeKind::Box && !tex.face_colors.empty()) {
    int best = 0;
    double best_v = -1.0;
    for (int a = 0; a < 3; ++a) {
      const double v = std::abs(p[a] - s.center[a]) / s.half[a];
      if (v > best_v) best_v = v, best = 2 * a + (p[a] > s.center[a] ? 1 : 0);
    }
    return tex.face_colors[best];
  }
  if (tex.cell <= 0.0) return tex.a;
  int parity = 0;
  if (s.kind == ShapeKind::Rect) {
    const Vec3 q = p - s.center;
    parity = floor_div(dot(q, s.axis_u), tex.cell) + floor_div(dot(q, s.axis_v), tex.cell);
  } else {
    const Vec3 q = normalize(p - s.center);
    const double lon = std::atan2(q.x, q.z), lat = std::asin(std::clamp(q.y, -1.0, 1.0));
    const double step = 0.5 * kPi / tex.cell;
    parity = floor_div(lon, step) + floor_div(lat, step);
    // a smooth vertical ramp keeps large cells from being flat
    const double ramp = 0.75 + 0.25 * q.y;
    return ((parity & 1) ? tex.b : tex.a) * ramp;
  }
  return (parity & 1) ? tex.b : tex.a;
}

/// Nearest hit beyond tmin, skipping object `skip`.
inline std::optional<SurfaceHit> nearest_hit(const AnalyticScene& scene, const Vec3& o, const Vec3& d,
                                             double tmin = 0.0, int skip = -1) {
  std::optional<SurfaceHit> best;
  for (int k = 0; k < static_cast<int>(scene.objects.size()); ++k) {
    if (k == skip) continue;
    auto h = synth_detail::intersect(scene.objects[k].shape, o, d, tmin);
    if (h && (!best || h->t < best->t)) {
      h->object = k;
      best = h;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Shading. The specular part calls the same microfacet weights the renderer
// uses; only geometry and compositing are independent.

/// (1 - ks) C_d + ks (w_r C_r + w_t C_t) at a shading point facing w_o.
inline Vec3 shade_specular_surface(const Surface& s, const Vec3& cd, const Vec3& n, const Vec3& wo, const Vec3& cr,
                                   const Vec3& ct) {
  const bool masked = s.kind == SurfaceKind::Glass;
  const auto w = specular_weights(n, wo, s.roughness, s.f0, masked);
  return compose_final(cd, cr, ct, s.ks, w.w_r, w.w_t);
}

inline constexpr double kSynthRayEps = 1e-7;

/// Radiance of a secondary ray: the albedo of whatever it meets first.
inline Vec3 secondary_radiance(const AnalyticScene& scene, const Vec3& o, const Vec3& d, int skip = -1) {
  const auto h = nearest_hit(scene, o, d, kSynthRayEps, skip);
  if (!h) return scene.background;
  return albedo_at(scene, h->object, o + d * h->t);
}

struct PrimarySample {
  Vec3 color;
  std::optional<SurfaceHit> hit;
};

inline PrimarySample primary_radiance(const AnalyticScene& scene, const Vec3& o, const Vec3& d) {
  PrimarySample out;
  out.hit = nearest_hit(scene, o, d, 0.0);
  if (!out.hit) {
    out.color = scene.background;
    return out;
  }
  const auto& h = *out.hit;
  const auto& obj = scene.objects[h.object];
  const Vec3 p = o + d * h.t;
  const Vec3 cd = albedo_at(scene, h.object, p);
  if (obj.surface.kind == SurfaceKind::Lambert) {
    out.color = cd;
    return out;
  }
  const Vec3 wo = -d;
  const Vec3 n = dot(h.normal, wo) >= 0.0 ? h.normal : -h.normal;
  const Vec3 wr = n * (2.0 * dot(n, wo)) - wo;
  const Vec3 cr = secondary_radiance(scene, p, wr);
  Vec3 ct;
  if (obj.surface.kind == SurfaceKind::Glass) ct = secondary_radiance(scene, p, d, h.object);
  out.color = shade_specular_surface(obj.surface, cd, n, wo, cr, ct);
  return out;
}

struct ReferenceImage {
  ImageD rgb;
  std::vector<uint8_t> mask;   // first hit is glass
  std::vector<double> depth;   // along the unit pixel ray; 0 on misses
  std::vector<Vec3> normal;    // facing the camera; 0 on misses
};

namespace synth_detail {

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace synth_detail

/// Box-filtered pixel colors from `spp` stratified jittered samples over the
/// unit pixel footprint centered on (u, v); maps come from the center ray.
inline ReferenceImage reference_render(const AnalyticScene& scene, const Camera& cam, int spp, uint64_t seed = 0) {
  if (spp < 1) throw Error("reference_render: spp must be >= 1");
  cam.validate("reference_render");
  const int w = cam.width, h = cam.height;
  const size_t n = static_cast<size_t>(w) * h;
  ReferenceImage out{ImageD(w, h, 3), std::vector<uint8_t>(n, 0), std::vector<double>(n, 0.0),
                     std::vector<Vec3>(n)};
  const int strata = static_cast<int>(std::floor(std::sqrt(static_cast<double>(spp))));
  const Vec3 eye = cam.center();
  parallel_for(h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      std::mt19937_64 rng(synth_detail::mix_seed(seed, i));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      Vec3 sum;
      for (int s = 0; s < spp; ++s) {
        double jx, jy;
        if (s < strata * strata) {
          jx = ((s % strata) + u01(rng)) / strata;
          jy = ((s / strata) + u01(rng)) / strata;
        } else {
          jx = u01(rng);
          jy = u01(rng);
        }
        sum += primary_radiance(scene, eye, cam.pixel_ray(x - 0.5 + jx, y - 0.5 + jy)).color;
      }
      const Vec3 c = sum / spp;
      for (int k = 0; k < 3; ++k) out.rgb.data[i * 3 + k] = c[k];
      const Vec3 d = cam.pixel_ray(x, y);
      const auto hit = nearest_hit(scene, eye, d, 0.0);
      if (hit) {
        out.depth[i] = hit->t;
        out.normal[i] = dot(hit->normal, d) <= 0.0 ? hit->normal : -hit->normal;
        out.mask[i] = scene.objects[hit->object].surface.kind == SurfaceKind::Glass;
      }
    }
  });
  return out;
}

/// Bounding box of the non-backdrop objects, padded by `pad` of its extent.
inline Aabb scene_bbox(const AnalyticScene& scene, double pad = 0.1) {
  Aabb b;
  for (const auto& o : scene.objects) {
    if (o.backdrop) continue;
    const auto& s = o.shape;
    if (s.kind == ShapeKind::Sphere) {
      b.expand(s.center - Vec3::splat(s.radius));
      b.expand(s.center + Vec3::splat(s.radius));
    } else if (s.kind == ShapeKind::Box) {
      b.expand(s.center - s.half);
      b.expand(s.center + s.half);
    } else {
      for (int su = -1; su <= 1; su += 2)
        for (int sv = -1; sv <= 1; sv += 2) b.expand(s.center + s.axis_u * (su * s.half.x) + s.axis_v * (sv * s.half.y));
    }
  }
  if (b.empty()) throw Error("scene_bbox: scene has no bounded objects");
  const Vec3 e = b.extent();
  const double m = std::max({e.x, e.y, e.z});
  const Vec3 grow = vmax(e * pad, Vec3::splat(m * pad));
  b.lo = b.lo - grow;
  b.hi = b.hi + grow;
  return b;
}

struct DatasetConfig {
  int views = 8;
  int width = 128;
  int height = 128;
  int spp = 64;
  int points = 4000;
  uint64_t seed = 0;
};

/// Seed points at first hits of random pixel rays, as a structure-from-motion
/// stand-in: every point is visible in some view and carries its albedo.
inline std::vector<ColoredPoint> sample_seed_points(const AnalyticScene& scene, const std::vector<Camera>& cams,
                                                    int count, uint64_t seed) {
  std::mt19937_64 rng(synth_detail::mix_seed(seed, 0x5eed));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cams.size()) - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<ColoredPoint> pts;
  for (long attempt = 0; static_cast<int>(pts.size()) < count && attempt < 50L * count; ++attempt) {
    const Camera& c = cams[pick(rng)];
    const double px = u01(rng) * c.width - 0.5, py = u01(rng) * c.height - 0.5;
    const Vec3 eye = c.center(), d = c.pixel_ray(px, py);
    const auto h = nearest_hit(scene, eye, d, 0.0);
    if (!h) continue;
    const Vec3 p = eye + d * h->t;
    pts.push_back({p, albedo_at(scene, h->object, p)});
  }
  if (pts.empty()) throw Error("sample_seed_points: no view sees any surface");
  return pts;
}

/// Renders an orbit of views and writes the scene format to `out_dir` (when
/// non-empty). Images, masks and exact normals come from reference_render.
inline SceneBundle generate_dataset(const AnalyticScene& scene, const DatasetConfig& cfg,
                                    const std::filesystem::path& out_dir = {}) {
  if (cfg.views < 2) throw Error("generate_dataset: need at least 2 views");
  SceneBundle b;
  const auto cams = orbit_cameras(scene.rig, cfg.views, cfg.width, cfg.height);
  for (size_t i = 0; i < cams.size(); ++i) {
    const auto ref = reference_render(scene, cams[i], cfg.spp, synth_detail::mix_seed(cfg.seed, i));
    SceneView v;
    v.camera = cams[i];
    v.image = image_cast<float>(ref.rgb);
    v.mask = ref.mask;
    v.mono_normals = ref.normal;
    for (auto& nrm : *v.mono_normals)  // stored at single precision
      nrm = {static_cast<float>(nrm.x), static_cast<float>(nrm.y), static_cast<float>(nrm.z)};
    b.views.push_back(std::move(v));
  }
  b.points = sample_seed_points(scene, cams, cfg.points, cfg.seed);
  b.bbox = scene_bbox(scene);
  if (!out_dir.empty()) save_scene(out_dir, b);
  return b;
}

}  // namespace rtgs
