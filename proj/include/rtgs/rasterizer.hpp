#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/composite.hpp"
#include "rtgs/material_buffers.hpp"
#include "rtgs/parallel.hpp"
#include "rtgs/sh.hpp"
#include "rtgs/splat.hpp"
#include "rtgs/splat_geometry.hpp"

namespace rtgs {

inline constexpr double kNearPlane = 0.01;
inline constexpr int kTileSize = 16;

/// Fragment ordering within a pixel.
enum class SortMode { CenterDepth, HitDepth };

struct RasterSettings {
  SortMode sort = SortMode::CenterDepth;
};

/// Screen-space bound of a projected splat.
struct Footprint {
  double depth_key;       // camera-space z of the center
  double center_u, center_v;
  int x0, y0, x1, y1;     // inclusive pixel range, clipped to the image
};

/// Projects the 3-sigma rectangle of a splat; nullopt when culled.
inline std::optional<Footprint> project_splat(const SplatFrame& f, const Vec3& mean,
                                              const Camera& cam) {
  const Vec3 pc = cam.to_camera(mean);
  if (pc.z <= kNearPlane) return std::nullopt;
  Footprint fp{pc.z, cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy, 0, 0, 0, 0};
  const double k = std::sqrt(kCutoffSq);
  const Vec3 eu = f.u * (k * f.scale_u), ev = f.v * (k * f.scale_v);
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  bool straddles = false;
  for (int c = 0; c < 4; ++c) {
    const Vec3 corner = cam.to_camera(mean + eu * ((c & 1) ? 1.0 : -1.0) + ev * ((c & 2) ? 1.0 : -1.0));
    if (corner.z <= kNearPlane) {
      straddles = true;
      break;
    }
    const double u = cam.fx * corner.x / corner.z + cam.cx;
    const double v = cam.fy * corner.y / corner.z + cam.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (straddles) {
    fp.x0 = 0;
    fp.y0 = 0;
    fp.x1 = cam.width - 1;
    fp.y1 = cam.height - 1;
    return fp;
  }
  if (umax < 0.0 || vmax < 0.0 || umin > cam.width - 1 || vmin > cam.height - 1) return std::nullopt;
  fp.x0 = std::max(0, static_cast<int>(std::floor(umin)));
  fp.y0 = std::max(0, static_cast<int>(std::floor(vmin)));
  fp.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(umax)));
  fp.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(vmax)));
  if (fp.x0 > fp.x1 || fp.y0 > fp.y1) return std::nullopt;
  return fp;
}

/// Per-view state shared by the forward and backward passes.
struct RasterCache {
  bool valid = false;
  Camera camera;
  RasterSettings settings;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::optional<PreparedSplat>> prepared;
  std::vector<Vec3> colors;     // SH color per primitive for this view
  std::vector<Vec3> view_dirs;  // normalized (mean - camera center)
  std::vector<double> keys;
  std::vector<std::array<int, 4>> rects;  // footprint x0, y0, x1, y1
  // Tile lists: primitive ids sorted by (depth key, id).
  std::vector<std::vector<int>> tiles;
};

struct RasterResult {
  MaterialBuffers maps;
  RasterCache cache;
};

namespace raster_detail {

inline constexpr int kAttrs = 12;  // d, n(3), roughness, f0(3), ks, color(3)
using Frag = Fragment<kAttrs>;

struct PixelFrag {
  int slot;  // index into the tile list
  int id;
  SplatHit hit;
  double sign;
};

// Gathers the ordered fragments of pixel (x, y). Footprints are conservative,
// so the rectangle test only skips misses. In center-depth order the list is
// cut where compositing terminates.
inline void gather(const RasterCache& c, const std::vector<int>& list, const SplatParams* prims,
                   const Vec3& origin, const Vec3& dir, int x, int y, std::vector<PixelFrag>& out) {
  out.clear();
  const bool cut = c.settings.sort == SortMode::CenterDepth;
  double T = 1.0;
  for (int s = 0; s < static_cast<int>(list.size()); ++s) {
    const int id = list[s];
    const auto& r = c.rects[id];
    if (x < r[0] || y < r[1] || x > r[2] || y > r[3]) continue;
    const auto& ps = *c.prepared[id];
    if (auto h = intersect_splat(ps.frame, prims[id].mean, origin, dir, kNearPlane,
                                 std::numeric_limits<double>::infinity())) {
      out.push_back({s, id, *h, facing_sign(ps.frame, dir)});
      if (cut) {
        T *= 1.0 - std::min(ps.act.opacity * h->g, kMaxFragmentAlpha);
        if (T < kTransmittanceEps) return;
      }
    }
  }
  if (c.settings.sort == SortMode::HitDepth)
    std::stable_sort(out.begin(), out.end(),
                     [](const PixelFrag& a, const PixelFrag& b) { return a.hit.t < b.hit.t; });
}

inline Frag make_frag(const RasterCache& c, const PixelFrag& pf) {
  const auto& ps = *c.prepared[pf.id];
  const Vec3 n = ps.frame.n * pf.sign;
  const Vec3& col = c.colors[pf.id];
  return {std::min(ps.act.opacity * pf.hit.g, kMaxFragmentAlpha),
          {pf.hit.t, n.x, n.y, n.z, ps.act.roughness, ps.act.f0.x, ps.act.f0.y, ps.act.f0.z,
           ps.act.ks, col.x, col.y, col.z}};
}

// Adjoint accumulator of one primitive within a tile.
struct Accum {
  Vec3 d_mean, d_u, d_v, d_n, d_f0, d_color;
  double d_lsu = 0, d_lsv = 0, d_opacity = 0, d_rough = 0, d_ks = 0;

  void add(const Accum& o) {
    d_mean += o.d_mean; d_u += o.d_u; d_v += o.d_v; d_n += o.d_n; d_f0 += o.d_f0;
    d_color += o.d_color;
    d_lsu += o.d_lsu; d_lsv += o.d_lsv; d_opacity += o.d_opacity; d_rough += o.d_rough;
    d_ks += o.d_ks;
  }
};

}  // namespace raster_detail

/// Builds per-view primitive state and tile lists.
inline RasterCache prepare_raster(const GaussianSet& set, const Camera& cam,
                                  const RasterSettings& settings = {}) {
  if (set.role() != Role::Diffuse)
    throw Error("rasterize_maps: only the diffuse set is rasterized (got " +
                std::string(role_name(set.role())) + ")");
  cam.validate();
  RasterCache c;
  c.valid = true;
  c.camera = cam;
  c.settings = settings;
  c.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  c.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  const int n = static_cast<int>(set.size());
  c.prepared.resize(n);
  c.colors.resize(n);
  c.view_dirs.resize(n);
  c.keys.resize(n);
  c.rects.resize(n);
  std::vector<std::optional<Footprint>> fps(n);
  const Vec3 eye = cam.center();
  parallel_for(n, [&](int i) {
    const auto& p = set.primitives[i];
    c.prepared[i] = prepare_splat(p);
    if (!c.prepared[i]) return;
    fps[i] = project_splat(c.prepared[i]->frame, p.mean, cam);
    if (!fps[i]) return;
    c.keys[i] = fps[i]->depth_key;
    c.rects[i] = {fps[i]->x0, fps[i]->y0, fps[i]->x1, fps[i]->y1};
    c.view_dirs[i] = normalize(p.mean - eye);
    c.colors[i] = sh_color(p.sh, set.sh_degree(), c.view_dirs[i]);
  });
  c.tiles.assign(static_cast<size_t>(c.tiles_x) * c.tiles_y, {});
  for (int i = 0; i < n; ++i) {
    if (!fps[i]) continue;
    const auto& f = *fps[i];
    for (int ty = f.y0 / kTileSize; ty <= f.y1 / kTileSize; ++ty)
      for (int tx = f.x0 / kTileSize; tx <= f.x1 / kTileSize; ++tx)
        c.tiles[static_cast<size_t>(ty) * c.tiles_x + tx].push_back(i);
  }
  parallel_for(static_cast<int>(c.tiles.size()), [&](int t) {
    std::stable_sort(c.tiles[t].begin(), c.tiles[t].end(),
                     [&](int a, int b) { return c.keys[a] < c.keys[b]; });
  });
  return c;
}

/// Composites every material attribute of the diffuse set for one view.
inline RasterResult rasterize_maps(const GaussianSet& set, const Camera& cam,
                                   const RasterSettings& settings = {}) {
  using namespace raster_detail;
  RasterResult r{MaterialBuffers(cam.width, cam.height), prepare_raster(set, cam, settings)};
  const RasterCache& c = r.cache;
  MaterialBuffers& mb = r.maps;
  const Vec3 eye = cam.center();
  const SplatParams* prims = set.primitives.data();
  parallel_for(static_cast<int>(c.tiles.size()), [&](int t) {
    const int tx = t % c.tiles_x, ty = t / c.tiles_x;
    const auto& list = c.tiles[t];
    if (list.empty()) return;
    std::vector<PixelFrag> pfs;
    std::vector<Frag> frags;
    for (int y = ty * kTileSize; y < std::min(cam.height, (ty + 1) * kTileSize); ++y)
      for (int x = tx * kTileSize; x < std::min(cam.width, (tx + 1) * kTileSize); ++x) {
        const Vec3 dir = cam.pixel_ray(x, y);
        gather(c, list, prims, eye, dir, x, y, pfs);
        frags.clear();
        for (const auto& pf : pfs) frags.push_back(make_frag(c, pf));
        const auto b = composite_forward<kAttrs>(frags);
        const size_t i = static_cast<size_t>(y) * cam.width + x;
        mb.depth[i] = b.value[0];
        mb.normal[i] = normalize(Vec3{b.value[1], b.value[2], b.value[3]});
        mb.roughness[i] = b.value[4];
        mb.f0[i] = {b.value[5], b.value[6], b.value[7]};
        mb.ks[i] = b.value[8];
        mb.color[i] = {b.value[9], b.value[10], b.value[11]};
        mb.alpha[i] = b.alpha;
      }
  });
  return r;
}

/// Upstream adjoints of every map; empty vectors mean zero.
struct MaterialAdjoints {
  int width = 0, height = 0;
  std::vector<double> depth;
  std::vector<Vec3> normal;
  std::vector<double> roughness;
  std::vector<Vec3> f0;
  std::vector<double> ks;
  std::vector<Vec3> color;
  std::vector<double> alpha;

  MaterialAdjoints() = default;
  MaterialAdjoints(int w, int h) : width(w), height(h) {
    const size_t n = static_cast<size_t>(w) * h;
    depth.assign(n, 0.0);
    normal.assign(n, Vec3{});
    roughness.assign(n, 0.0);
    f0.assign(n, Vec3{});
    ks.assign(n, 0.0);
    color.assign(n, Vec3{});
    alpha.assign(n, 0.0);
  }
};

/// Adjoint of rasterize_maps; returns one gradient per primitive. Accumulation
/// runs per tile and merges tiles in index order, so results are bit-identical
/// for any worker count.
inline std::vector<SplatGrad> rasterize_backward(const GaussianSet& set, const RasterCache& c,
                                                 const MaterialAdjoints& adj) {
  using namespace raster_detail;
  if (!c.valid) throw Error("rasterize_backward: missing forward cache");
  if (c.prepared.size() != set.size())
    throw Error("rasterize_backward: cache does not match the primitive set");
  const Camera& cam = c.camera;
  if (adj.width != cam.width || adj.height != cam.height)
    throw Error("rasterize_backward: adjoint size mismatch");
  const Vec3 eye = cam.center();
  const SplatParams* prims = set.primitives.data();
  std::vector<std::vector<Accum>> tile_acc(c.tiles.size());

  parallel_for(static_cast<int>(c.tiles.size()), [&](int t) {
    const int tx = t % c.tiles_x, ty = t / c.tiles_x;
    const auto& list = c.tiles[t];
    if (list.empty()) return;
    auto& acc = tile_acc[t];
    acc.assign(list.size(), Accum{});
    std::vector<PixelFrag> pfs;
    std::vector<Frag> frags;
    std::vector<double> d_alpha;
    std::vector<std::array<double, kAttrs>> d_x;
    for (int y = ty * kTileSize; y < std::min(cam.height, (ty + 1) * kTileSize); ++y)
      for (int x = tx * kTileSize; x < std::min(cam.width, (tx + 1) * kTileSize); ++x) {
        const size_t i = static_cast<size_t>(y) * cam.width + x;
        const Vec3 dir = cam.pixel_ray(x, y);
        gather(c, list, prims, eye, dir, x, y, pfs);
        if (pfs.empty()) continue;
        frags.clear();
        for (const auto& pf : pfs) frags.push_back(make_frag(c, pf));
        const auto b = composite_forward<kAttrs>(frags);
        const Vec3 n_sum{b.value[1], b.value[2], b.value[3]};
        const Vec3 dn = normalize_backward(n_sum, adj.normal[i]);
        const std::array<double, kAttrs> dv{adj.depth[i], dn.x, dn.y, dn.z, adj.roughness[i],
                                            adj.f0[i].x, adj.f0[i].y, adj.f0[i].z, adj.ks[i],
                                            adj.color[i].x, adj.color[i].y, adj.color[i].z};
        d_alpha.assign(b.used, 0.0);
        d_x.assign(b.used, {});
        composite_backward<kAttrs>(frags, b.used, dv, adj.alpha[i], d_alpha, d_x);
        for (int k = 0; k < b.used; ++k) {
          const auto& pf = pfs[k];
          const auto& ps = *c.prepared[pf.id];
          Accum& a = acc[pf.slot];
          double d_g = 0.0;
          if (ps.act.opacity * pf.hit.g < kMaxFragmentAlpha) {
            a.d_opacity += d_alpha[k] * pf.hit.g;
            d_g = d_alpha[k] * ps.act.opacity;
          }
          const auto& g = d_x[k];
          HitGrad hg;
          intersect_splat_backward(ps.frame, prims[pf.id].mean, eye, dir, pf.hit, d_g, g[0], hg);
          a.d_mean += hg.d_mean;
          a.d_u += hg.d_u;
          a.d_v += hg.d_v;
          a.d_n += hg.d_n + Vec3{g[1], g[2], g[3]} * pf.sign;
          a.d_lsu += hg.d_log_su;
          a.d_lsv += hg.d_log_sv;
          a.d_rough += g[4];
          a.d_f0 += Vec3{g[5], g[6], g[7]};
          a.d_ks += g[8];
          a.d_color += Vec3{g[9], g[10], g[11]};
        }
      }
  });

  const int n = static_cast<int>(set.size());
  std::vector<Accum> total(n);
  for (size_t t = 0; t < c.tiles.size(); ++t)
    for (size_t s = 0; s < tile_acc[t].size(); ++s) total[c.tiles[t][s]].add(tile_acc[t][s]);

  std::vector<SplatGrad> grads(n, zero_grad());
  parallel_for(n, [&](int i) {
    if (!c.prepared[i]) return;
    const auto& p = set.primitives[i];
    const auto& ps = *c.prepared[i];
    const Accum& a = total[i];
    SplatGrad& g = grads[i];
    g.mean += a.d_mean;
    g.log_scale[0] += a.d_lsu;
    g.log_scale[1] += a.d_lsv;
    g.opacity_logit += a.d_opacity * sigmoid_grad_from_value(ps.act.opacity);
    const double s_rough = sigmoid(p.roughness_logit);
    if (s_rough > kMinRoughness) g.roughness_logit += a.d_rough * sigmoid_grad_from_value(s_rough);
    g.ks_logit += a.d_ks * sigmoid_grad_from_value(ps.act.ks);
    for (int k = 0; k < 3; ++k) g.f0_logit[k] += a.d_f0[k] * sigmoid_grad_from_value(ps.act.f0[k]);
    const Vec3 d_dir = sh_color_backward(p.sh, set.sh_degree(), c.view_dirs[i], a.d_color, g.sh);
    g.mean += normalize_backward(p.mean - cam.center(), d_dir);
    splat_basis_backward(p, a.d_u, a.d_v, a.d_n, g);
  });
  return grads;
}

}  // namespace rtgs
