#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "rtgs/composite.hpp"
#include "rtgs/parallel.hpp"
#include "rtgs/sh.hpp"
#include "rtgs/splat.hpp"
#include "rtgs/splat_geometry.hpp"

namespace rtgs {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
  double t_min = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
  int pixel = -1;
};

inline constexpr int kBvhLeafSize = 4;

/// Median-split BVH over the 3-sigma world bounds of a primitive set. Holds the
/// per-primitive frames of the parameter snapshot it was built from.
struct SplatBVH {
  struct Node {
    Aabb box;
    int left = -1, right = -1;  // children, -1 for leaves
    int first = 0, count = 0;   // leaf range in `indices`
    bool leaf() const { return left < 0; }
  };
  std::vector<Node> nodes;
  std::vector<int> indices;
  std::vector<std::optional<PreparedSplat>> prepared;
  std::vector<Vec3> means;

  bool empty() const { return nodes.empty(); }
};

namespace bvh_detail {
inline int build(SplatBVH& b, std::vector<int>& ids, std::vector<Aabb>& boxes, int first,
                 int count) {
  const int idx = static_cast<int>(b.nodes.size());
  b.nodes.emplace_back();
  Aabb box, centroids;
  for (int i = first; i < first + count; ++i) {
    box.expand(boxes[ids[i]]);
    centroids.expand(b.means[ids[i]]);
  }
  b.nodes[idx].box = box;
  if (count <= kBvhLeafSize) {
    b.nodes[idx].first = first;
    b.nodes[idx].count = count;
    return idx;
  }
  const Vec3 e = centroids.extent();
  const int axis = (e.x >= e.y && e.x >= e.z) ? 0 : (e.y >= e.z ? 1 : 2);
  const int mid = first + count / 2;
  std::nth_element(ids.begin() + first, ids.begin() + mid, ids.begin() + first + count,
                   [&](int a, int c) {
                     const double ka = b.means[a][axis], kc = b.means[c][axis];
                     return ka < kc || (ka == kc && a < c);
                   });
  const int l = build(b, ids, boxes, first, mid - first);
  const int r = build(b, ids, boxes, mid, first + count - mid);
  b.nodes[idx].left = l;
  b.nodes[idx].right = r;
  return idx;
}
}  // namespace bvh_detail

/// Builds the hierarchy; degenerate primitives are left out. An empty set
/// yields an empty BVH whose traces return A = 0.
inline SplatBVH build_bvh(const GaussianSet& set) {
  SplatBVH b;
  const int n = static_cast<int>(set.size());
  b.prepared.resize(n);
  b.means.resize(n);
  std::vector<Aabb> boxes(n);
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    b.means[i] = set.primitives[i].mean;
    b.prepared[i] = prepare_splat(set.primitives[i]);
    if (!b.prepared[i]) continue;
    boxes[i] = splat_bounds(b.prepared[i]->frame, b.means[i]);
    ids.push_back(i);
  }
  if (ids.empty()) return b;
  b.nodes.reserve(2 * ids.size() / kBvhLeafSize + 2);
  bvh_detail::build(b, ids, boxes, 0, static_cast<int>(ids.size()));
  b.indices = std::move(ids);
  return b;
}

struct RayHit {
  int id;
  SplatHit hit;
};

inline bool hit_order(const RayHit& a, const RayHit& b) {
  return a.hit.t < b.hit.t || (a.hit.t == b.hit.t && a.id < b.id);
}

/// Every splat hit along the ray within (t_min, t_max), sorted by (t, id).
inline void collect_hits(const Ray& ray, const SplatBVH& bvh, std::vector<RayHit>& out) {
  out.clear();
  if (bvh.empty()) return;
  const Vec3 inv{1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z};
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const auto& node = bvh.nodes[stack[--sp]];
    if (!node.box.intersect(ray.origin, ray.dir, inv, ray.t_min, ray.t_max)) continue;
    if (node.leaf()) {
      for (int k = node.first; k < node.first + node.count; ++k) {
        const int id = bvh.indices[k];
        if (auto h = intersect_splat(bvh.prepared[id]->frame, bvh.means[id], ray.origin, ray.dir,
                                     ray.t_min, ray.t_max))
          out.push_back({id, *h});
      }
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
  std::sort(out.begin(), out.end(), hit_order);
}

struct TraceResult {
  Vec3 color;
  double depth = 0.0;  // alpha-weighted mean hit distance; 0 when A <= 1e-4
  double alpha = 0.0;
};

inline constexpr double kMinDepthAlpha = 1e-4;

namespace trace_detail {
inline constexpr int kAttrs = 4;  // color(3), t
using Frag = Fragment<kAttrs>;

inline Vec3 hit_color(const GaussianSet& set, int id, const Vec3& dir) {
  return sh_color(set.primitives[id].sh, set.sh_degree(), dir);
}

inline void make_frags(const GaussianSet& set, const SplatBVH& bvh, const Ray& ray,
                       std::span<const RayHit> hits, std::vector<Frag>& frags) {
  frags.clear();
  for (const auto& h : hits) {
    const Vec3 c = hit_color(set, h.id, ray.dir);
    frags.push_back({std::min(bvh.prepared[h.id]->act.opacity * h.hit.g, kMaxFragmentAlpha),
                     {c.x, c.y, c.z, h.hit.t}});
  }
}

inline TraceResult finish(const Blend<kAttrs>& b) {
  TraceResult r;
  r.color = {b.value[0], b.value[1], b.value[2]};
  r.alpha = b.alpha;
  r.depth = b.alpha > kMinDepthAlpha ? b.value[3] / b.alpha : 0.0;
  return r;
}
}  // namespace trace_detail

/// Front-to-back compositing of every splat hit along the ray.
inline TraceResult trace_composite(const Ray& ray, const SplatBVH& bvh, const GaussianSet& set) {
  thread_local std::vector<RayHit> hits;
  thread_local std::vector<trace_detail::Frag> frags;
  collect_hits(ray, bvh, hits);
  trace_detail::make_frags(set, bvh, ray, hits, frags);
  return trace_detail::finish(composite_forward<trace_detail::kAttrs>(frags));
}

/// Forward state of a batch of rays, consumed by trace_backward.
struct TraceCache {
  bool valid = false;
  std::vector<Ray> rays;
  std::vector<int> offsets;  // hits of ray r: [offsets[r], offsets[r + 1])
  std::vector<RayHit> hits;  // only the fragments used before early termination
  std::vector<TraceResult> results;
};

/// Traces a batch of rays (parallel over rays).
inline TraceCache trace_batch(std::vector<Ray> rays, const SplatBVH& bvh, const GaussianSet& set) {
  TraceCache c;
  c.valid = true;
  const int n = static_cast<int>(rays.size());
  c.results.resize(n);
  std::vector<std::vector<RayHit>> per_ray(n);
  parallel_for(n, [&](int r) {
    std::vector<RayHit>& hits = per_ray[r];
    thread_local std::vector<trace_detail::Frag> frags;
    collect_hits(rays[r], bvh, hits);
    trace_detail::make_frags(set, bvh, rays[r], hits, frags);
    const auto b = composite_forward<trace_detail::kAttrs>(frags);
    hits.resize(b.used);
    c.results[r] = trace_detail::finish(b);
  });
  c.offsets.resize(n + 1, 0);
  for (int r = 0; r < n; ++r) c.offsets[r + 1] = c.offsets[r] + static_cast<int>(per_ray[r].size());
  c.hits.reserve(c.offsets[n]);
  for (auto& v : per_ray) c.hits.insert(c.hits.end(), v.begin(), v.end());
  c.rays = std::move(rays);
  return c;
}

/// Upstream adjoints of one ray's TraceResult.
struct TraceAdjoint {
  Vec3 d_color;
  double d_depth = 0.0;
  double d_alpha = 0.0;
};

struct TraceGrads {
  std::vector<SplatGrad> params;  // per primitive of the traced set
  std::vector<Vec3> d_origin;     // per ray
  std::vector<Vec3> d_dir;        // per ray
};

/// Adjoint of trace_batch for the traced-set parameters and for every ray's
/// origin and direction. Per-primitive sums run in ray order.
inline TraceGrads trace_backward(const GaussianSet& set, const SplatBVH& bvh,
                                 const TraceCache& c, std::span<const TraceAdjoint> adj) {
  using namespace trace_detail;
  if (!c.valid) throw Error("trace_backward: missing forward cache");
  const int n_rays = static_cast<int>(c.rays.size());
  if (static_cast<int>(adj.size()) != n_rays) throw Error("trace_backward: adjoint count mismatch");
  if (bvh.prepared.size() != set.size()) throw Error("trace_backward: BVH does not match set");

  struct Record {
    Vec3 d_mean, d_u, d_v, d_n, d_color;
    double d_lsu, d_lsv, d_opacity;
  };
  TraceGrads out;
  out.d_origin.assign(n_rays, Vec3{});
  out.d_dir.assign(n_rays, Vec3{});
  std::vector<Record> records(c.hits.size());

  parallel_for(n_rays, [&](int r) {
    const int b0 = c.offsets[r], used = c.offsets[r + 1] - b0;
    if (used == 0) return;
    const Ray& ray = c.rays[r];
    const std::span<const RayHit> hits(c.hits.data() + b0, used);
    std::vector<Frag> frags;
    make_frags(set, bvh, ray, hits, frags);
    const auto b = composite_forward<kAttrs>(frags);
    const TraceAdjoint& a = adj[r];
    double d_n = 0.0, d_a = a.d_alpha;
    if (b.alpha > kMinDepthAlpha) {
      d_n = a.d_depth / b.alpha;
      d_a -= a.d_depth * b.value[3] / (b.alpha * b.alpha);
    }
    std::vector<double> d_alpha(used);
    std::vector<std::array<double, kAttrs>> d_x(used);
    composite_backward<kAttrs>(frags, used, {a.d_color.x, a.d_color.y, a.d_color.z, d_n}, d_a,
                               d_alpha, d_x);
    for (int k = 0; k < used; ++k) {
      const auto& h = hits[k];
      const auto& ps = *bvh.prepared[h.id];
      Record& rec = records[b0 + k];
      rec = Record{};
      double d_g = 0.0;
      if (ps.act.opacity * h.hit.g < kMaxFragmentAlpha) {
        rec.d_opacity = d_alpha[k] * h.hit.g;
        d_g = d_alpha[k] * ps.act.opacity;
      }
      HitGrad hg;
      intersect_splat_backward(ps.frame, bvh.means[h.id], ray.origin, ray.dir, h.hit, d_g,
                               d_x[k][3], hg);
      rec.d_mean = hg.d_mean;
      rec.d_u = hg.d_u;
      rec.d_v = hg.d_v;
      rec.d_n = hg.d_n;
      rec.d_lsu = hg.d_log_su;
      rec.d_lsv = hg.d_log_sv;
      rec.d_color = {d_x[k][0], d_x[k][1], d_x[k][2]};
      out.d_origin[r] += hg.d_origin;
      out.d_dir[r] += hg.d_dir;
      if (set.sh_degree() > 0) {
        std::array<Vec3, kShCoeffs> scratch{};
        out.d_dir[r] += sh_color_backward(set.primitives[h.id].sh, set.sh_degree(), ray.dir,
                                          rec.d_color, scratch);
      }
    }
  });

  const int n = static_cast<int>(set.size());
  struct Accum {
    Vec3 d_u, d_v, d_n, d_color;
  };
  std::vector<Accum> acc(n);
  out.params.assign(n, zero_grad());
  for (int r = 0; r < n_rays; ++r)
    for (int k = c.offsets[r]; k < c.offsets[r + 1]; ++k) {
      const int id = c.hits[k].id;
      const Record& rec = records[k];
      SplatGrad& g = out.params[id];
      g.mean += rec.d_mean;
      g.log_scale[0] += rec.d_lsu;
      g.log_scale[1] += rec.d_lsv;
      g.opacity_logit += rec.d_opacity;
      acc[id].d_u += rec.d_u;
      acc[id].d_v += rec.d_v;
      acc[id].d_n += rec.d_n;
      if (set.sh_degree() == 0)
        acc[id].d_color += rec.d_color;
      else
        sh_color_backward(set.primitives[id].sh, set.sh_degree(), c.rays[r].dir, rec.d_color,
                          g.sh);
    }
  parallel_for(n, [&](int i) {
    if (!bvh.prepared[i]) return;
    const auto& p = set.primitives[i];
    SplatGrad& g = out.params[i];
    g.opacity_logit *= sigmoid_grad_from_value(bvh.prepared[i]->act.opacity);
    if (set.sh_degree() == 0) sh_color_backward(p.sh, 0, Vec3{0, 0, 1}, acc[i].d_color, g.sh);
    splat_basis_backward(p, acc[i].d_u, acc[i].d_v, acc[i].d_n, g);
  });
  return out;
}

/// Mirror direction 2 (n . w_o) n - w_o; nullopt when n . w_o <= 0.
inline std::optional<Vec3> reflect_direction(const Vec3& wo, const Vec3& n) {
  const double c = dot(n, wo);
  if (c <= 0.0) return std::nullopt;
  return n * (2.0 * c) - wo;
}

/// dL/dn of reflect_direction for fixed w_o.
inline Vec3 reflect_direction_backward_n(const Vec3& wo, const Vec3& n, const Vec3& d_wr) {
  return (wo * dot(d_wr, n) + d_wr * dot(n, wo)) * 2.0;
}

/// Thin-surface transmission keeps the camera ray direction.
inline Vec3 transmit_direction(const Vec3& camera_dir) { return normalize(camera_dir); }

}  // namespace rtgs
