#pragma once

#include <optional>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/depth_normals.hpp"
#include "rtgs/image.hpp"
#include "rtgs/losses.hpp"
#include "rtgs/microfacet.hpp"
#include "rtgs/rasterizer.hpp"
#include "rtgs/raytracer.hpp"
#include "rtgs/triangle_mesh.hpp"

namespace rtgs {

/// The three primitive sets of a scene.
struct SceneSets {
  GaussianSet diffuse{Role::Diffuse};
  GaussianSet reflection{Role::Reflection};
  GaussianSet transmittance{Role::Transmittance};

  friend bool operator==(const SceneSets&, const SceneSets&) = default;
};

/// Which light paths a render evaluates.
struct RenderFeatures {
  bool reflection = false;
  bool transmission = false;
  bool transmittance_set = true;  // false: the first bounce is skipped (C_in = 0, A_in = 0)
  bool mesh_guide = true;         // false: second bounce starts at the first-bounce depth
  double ray_eps = 1e-3;          // secondary ray origin offset (world units)
  RasterSettings raster;
};

/// Everything the backward pass needs from one forward render.
struct ForwardState {
  Camera camera;
  RenderFeatures features;
  RasterResult raster;
  std::vector<Vec3> rays;            // unit pixel rays
  std::vector<double> surface_depth; // d / A on covered pixels, else 0
  std::vector<uint8_t> mask;         // transparency mask used (all zero without transmission)

  // Reflection path.
  SplatBVH refl_bvh;
  TraceCache refl;
  std::vector<int> refl_pixel;
  std::vector<Vec3> c_r;

  // Transmission: first bounce through the transmittance set, second bounce
  // from the back surface through the diffuse set.
  SplatBVH trans_bvh;
  TraceCache first;
  std::vector<int> first_pixel;
  std::vector<Vec3> c_in;
  std::vector<double> a_in;
  std::vector<std::optional<double>> d_first;
  SplatBVH diffuse_bvh;
  TraceCache second;
  std::vector<int> second_pixel;
  std::vector<Vec3> c_out;
  std::vector<Vec3> c_t;

  std::vector<SpecularWeights> weights;
  ImageD image;
};

/// C_t = C_in + (1 - A_in) C_out.
inline Vec3 combine_transmittance(const Vec3& c_in, double a_in, const Vec3& c_out) {
  return c_in + c_out * (1.0 - a_in);
}

namespace pipeline_detail {
inline double surface_depth(double d, double a) { return a > kCoverageThreshold ? d / a : 0.0; }
}  // namespace pipeline_detail

/// Reflection rays from every covered pixel, traced on the reflection set.
inline void render_reflection_buffer(ForwardState& s, const GaussianSet& refl) {
  const auto& mb = s.raster.maps;
  const Vec3 eye = s.camera.center();
  const size_t n = s.rays.size();
  s.c_r.assign(n, Vec3{});
  s.refl_bvh = build_bvh(refl);
  std::vector<Ray> rays;
  s.refl_pixel.clear();
  for (size_t i = 0; i < n; ++i) {
    if (!(mb.alpha[i] > kCoverageThreshold)) continue;
    const Vec3& nn = mb.normal[i];
    const auto dir = reflect_direction(-s.rays[i], nn);
    if (!dir) continue;
    const Vec3 x = eye + s.rays[i] * s.surface_depth[i];
    rays.push_back({x + nn * s.features.ray_eps, *dir, 0.0, std::numeric_limits<double>::infinity(),
                    static_cast<int>(i)});
    s.refl_pixel.push_back(static_cast<int>(i));
  }
  s.refl = trace_batch(std::move(rays), s.refl_bvh, refl);
  for (size_t r = 0; r < s.refl_pixel.size(); ++r) s.c_r[s.refl_pixel[r]] = s.refl.results[r].color;
}

/// First transmittance bounce: from just behind the surface along the camera
/// ray, through the transmittance set. Fills C_in, A_in and the first-bounce
/// depth (distance from the camera along the pixel ray).
inline void render_transmittance_first(ForwardState& s, const GaussianSet& trans) {
  const auto& mb = s.raster.maps;
  const Vec3 eye = s.camera.center();
  const size_t n = s.rays.size();
  s.c_in.assign(n, Vec3{});
  s.a_in.assign(n, 0.0);
  s.d_first.assign(n, std::nullopt);
  s.trans_bvh = build_bvh(trans);
  std::vector<Ray> rays;
  s.first_pixel.clear();
  for (size_t i = 0; i < n; ++i) {
    if (!s.mask[i] || !(mb.alpha[i] > kCoverageThreshold)) continue;
    const Vec3 x = eye + s.rays[i] * s.surface_depth[i];
    rays.push_back({x - mb.normal[i] * s.features.ray_eps, transmit_direction(s.rays[i]), 0.0,
                    std::numeric_limits<double>::infinity(), static_cast<int>(i)});
    s.first_pixel.push_back(static_cast<int>(i));
  }
  s.first = trace_batch(std::move(rays), s.trans_bvh, trans);
  for (size_t r = 0; r < s.first_pixel.size(); ++r) {
    const int i = s.first_pixel[r];
    const auto& res = s.first.results[r];
    s.c_in[i] = res.color;
    s.a_in[i] = res.alpha;
    if (res.alpha > kMinDepthAlpha)
      s.d_first[i] = dot(s.first.rays[r].origin - eye, s.rays[i]) + res.depth;
  }
}

/// Second bounce: from the back surface (D2 + eps along the camera ray) through
/// the diffuse set. Without mesh guidance the start is the first-bounce depth.
inline void second_bounce_render(ForwardState& s, const GaussianSet& diffuse,
                                 const std::vector<std::optional<double>>& d2) {
  const Vec3 eye = s.camera.center();
  const size_t n = s.rays.size();
  s.c_out.assign(n, Vec3{});
  s.diffuse_bvh = build_bvh(diffuse);
  std::vector<Ray> rays;
  s.second_pixel.clear();
  for (size_t i = 0; i < n; ++i) {
    if (!s.mask[i]) continue;
    std::optional<double> start;
    if (s.features.mesh_guide) {
      if (!d2.empty()) start = d2[i];
    } else if (!s.d_first.empty()) {
      start = s.d_first[i];
    }
    if (!start) continue;
    rays.push_back({eye + s.rays[i] * (*start + s.features.ray_eps), s.rays[i], 0.0,
                    std::numeric_limits<double>::infinity(), static_cast<int>(i)});
    s.second_pixel.push_back(static_cast<int>(i));
  }
  s.second = trace_batch(std::move(rays), s.diffuse_bvh, diffuse);
  for (size_t r = 0; r < s.second_pixel.size(); ++r) s.c_out[s.second_pixel[r]] = s.second.results[r].color;
}

/// Full forward render of one view. `mask` is required when transmission is
/// enabled; `d2` holds second-nearest mesh depths (may be empty without mesh
/// guidance).
inline ForwardState render_forward(const SceneSets& sets, const Camera& cam, const RenderFeatures& f,
                                   const std::vector<uint8_t>* mask,
                                   const std::vector<std::optional<double>>& d2 = {}) {
  ForwardState s;
  s.camera = cam;
  s.features = f;
  s.raster = rasterize_maps(sets.diffuse, cam, f.raster);
  const auto& mb = s.raster.maps;
  const size_t n = static_cast<size_t>(cam.width) * cam.height;
  s.rays.resize(n);
  s.surface_depth.resize(n);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const size_t i = static_cast<size_t>(y) * cam.width + x;
      s.rays[i] = cam.pixel_ray(x, y);
      s.surface_depth[i] = pipeline_detail::surface_depth(mb.depth[i], mb.alpha[i]);
    }
  s.mask.assign(n, 0);
  if (f.transmission) {
    if (!mask) throw Error("render_forward: the transmission path requires a transparency mask");
    if (mask->size() != n) throw Error("render_forward: mask size does not match the camera");
    s.mask = *mask;
  }
  s.c_r.assign(n, Vec3{});
  s.c_in.assign(n, Vec3{});
  s.a_in.assign(n, 0.0);
  s.c_out.assign(n, Vec3{});
  s.c_t.assign(n, Vec3{});
  if (f.reflection) render_reflection_buffer(s, sets.reflection);
  if (f.transmission) {
    if (f.transmittance_set) render_transmittance_first(s, sets.transmittance);
    else s.d_first.assign(n, std::nullopt);
    second_bounce_render(s, sets.diffuse, d2);
    for (size_t i = 0; i < n; ++i) s.c_t[i] = combine_transmittance(s.c_in[i], s.a_in[i], s.c_out[i]);
  }
  s.weights.assign(n, SpecularWeights{});
  s.image = ImageD(cam.width, cam.height, 3);
  for (size_t i = 0; i < n; ++i) {
    if (mb.alpha[i] > 0.0)
      s.weights[i] = specular_weights(mb.normal[i], -s.rays[i], mb.roughness[i], mb.f0[i], s.mask[i] != 0);
    const Vec3 c = compose_final(mb.color[i], s.c_r[i], s.c_t[i], mb.ks[i], s.weights[i].w_r, s.weights[i].w_t);
    for (int k = 0; k < 3; ++k) s.image.data[i * 3 + k] = c[k];
  }
  return s;
}

/// Adjoints entering the backward pass. Empty vectors mean zero.
struct PipelineAdjoints {
  ImageD d_image;
  std::vector<double> d_ks;             // from the specular-weight prior
  std::vector<double> d_first;          // w.r.t. first-bounce depth
  std::vector<Vec3> d_normal;           // w.r.t. the normalized normal map
  std::vector<double> d_surface_depth;  // w.r.t. d / A
};

/// dst += src, parameter by parameter.
inline void accumulate_grad(SplatGrad& dst, const SplatGrad& src) {
  std::vector<std::span<const double>> blocks;
  visit_params(src, [&](ParamGroup, std::span<const double> b) { blocks.push_back(b); });
  size_t q = 0;
  visit_params(dst, [&](ParamGroup, std::span<double> b) {
    for (size_t k = 0; k < b.size(); ++k) b[k] += blocks[q][k];
    ++q;
  });
}

struct SceneGrads {
  std::vector<SplatGrad> diffuse, reflection, transmittance;
};

inline SceneGrads render_backward(const SceneSets& sets, const ForwardState& s,
                                  const PipelineAdjoints& adj) {
  const auto& mb = s.raster.maps;
  const size_t n = s.rays.size();
  const Vec3 eye = s.camera.center();
  const double eps = s.features.ray_eps;
  if (adj.d_image.width != s.camera.width || adj.d_image.height != s.camera.height)
    throw Error("render_backward: image adjoint size mismatch");
  MaterialAdjoints ma(s.camera.width, s.camera.height);
  std::vector<double> d_surf(n, 0.0);
  std::vector<Vec3> d_ct(n);

  for (size_t i = 0; i < n; ++i) {
    const Vec3 dc{adj.d_image.data[i * 3], adj.d_image.data[i * 3 + 1], adj.d_image.data[i * 3 + 2]};
    const auto& w = s.weights[i];
    const auto g = compose_final_backward(mb.color[i], s.c_r[i], s.c_t[i], mb.ks[i], w.w_r, w.w_t, dc);
    ma.color[i] = g.d_cd;
    ma.ks[i] = g.d_ks;
    d_ct[i] = g.d_ct;
    if (mb.alpha[i] > 0.0) {
      const auto wg = specular_weights_backward(mb.normal[i], -s.rays[i], mb.roughness[i], mb.f0[i],
                                                s.mask[i] != 0, g.d_wr, g.d_wt);
      ma.roughness[i] = wg.d_roughness;
      ma.f0[i] = wg.d_f0;
      ma.normal[i] = wg.d_n;
    }
    // The reflection adjoint d_cr is consumed below through its ray.
    if (!adj.d_ks.empty()) ma.ks[i] += adj.d_ks[i];
    if (!adj.d_normal.empty()) ma.normal[i] += adj.d_normal[i];
    if (!adj.d_surface_depth.empty()) d_surf[i] += adj.d_surface_depth[i];
  }

  SceneGrads out;
  out.reflection.assign(sets.reflection.size(), zero_grad());
  out.transmittance.assign(sets.transmittance.size(), zero_grad());

  if (s.features.reflection && s.refl.valid) {
    std::vector<TraceAdjoint> ta(s.refl_pixel.size());
    for (size_t r = 0; r < ta.size(); ++r) {
      const int i = s.refl_pixel[r];
      const Vec3 dc{adj.d_image.data[i * 3], adj.d_image.data[i * 3 + 1], adj.d_image.data[i * 3 + 2]};
      const auto g = compose_final_backward(mb.color[i], s.c_r[i], s.c_t[i], mb.ks[i], s.weights[i].w_r,
                                            s.weights[i].w_t, dc);
      ta[r].d_color = g.d_cr;
    }
    auto tg = trace_backward(sets.reflection, s.refl_bvh, s.refl, ta);
    out.reflection = std::move(tg.params);
    for (size_t r = 0; r < ta.size(); ++r) {
      const int i = s.refl_pixel[r];
      const Vec3& d_o = tg.d_origin[r];
      d_surf[i] += dot(d_o, s.rays[i]);
      ma.normal[i] += d_o * eps + reflect_direction_backward_n(-s.rays[i], mb.normal[i], tg.d_dir[r]);
    }
  }

  std::vector<SplatGrad> second_grads;
  if (s.features.transmission) {
    if (s.first.valid) {
      std::vector<TraceAdjoint> ta(s.first_pixel.size());
      for (size_t r = 0; r < ta.size(); ++r) {
        const int i = s.first_pixel[r];
        ta[r].d_color = d_ct[i];
        ta[r].d_alpha = -dot(d_ct[i], s.c_out[i]);
        if (!adj.d_first.empty() && s.d_first[i]) ta[r].d_depth = adj.d_first[i];
      }
      auto tg = trace_backward(sets.transmittance, s.trans_bvh, s.first, ta);
      out.transmittance = std::move(tg.params);
      for (size_t r = 0; r < ta.size(); ++r) {
        const int i = s.first_pixel[r];
        Vec3 d_o = tg.d_origin[r];
        if (!adj.d_first.empty() && s.d_first[i]) d_o += s.rays[i] * adj.d_first[i];
        d_surf[i] += dot(d_o, s.rays[i]);
        ma.normal[i] -= d_o * eps;
      }
    }
    if (s.second.valid) {
      std::vector<TraceAdjoint> ta(s.second_pixel.size());
      for (size_t r = 0; r < ta.size(); ++r) {
        const int i = s.second_pixel[r];
        ta[r].d_color = d_ct[i] * (1.0 - s.a_in[i]);
      }
      second_grads = trace_backward(sets.diffuse, s.diffuse_bvh, s.second, ta).params;
    }
  }

  for (size_t i = 0; i < n; ++i) {
    if (d_surf[i] == 0.0 || !(mb.alpha[i] > kCoverageThreshold)) continue;
    ma.depth[i] += d_surf[i] / mb.alpha[i];
    ma.alpha[i] -= d_surf[i] * mb.depth[i] / (mb.alpha[i] * mb.alpha[i]);
  }
  out.diffuse = rasterize_backward(sets.diffuse, s.raster.cache, ma);
  for (size_t p = 0; p < second_grads.size(); ++p) accumulate_grad(out.diffuse[p], second_grads[p]);
  return out;
}

}  // namespace rtgs
