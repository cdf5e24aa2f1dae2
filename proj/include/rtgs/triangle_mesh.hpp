#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/math.hpp"
#include "rtgs/parallel.hpp"
#include "rtgs/tsdf.hpp"

namespace rtgs {

/// Immutable triangle mesh with a median-split BVH over its triangles.
class TriangleMesh {
 public:
  struct Node {
    Aabb box;
    int left = -1, right = -1;
    int first = 0, count = 0;
  };

  TriangleMesh() = default;
  explicit TriangleMesh(MeshData data) : data_(std::move(data)) {
    for (const auto& t : data_.triangles)
      for (int v : t)
        if (v < 0 || v >= static_cast<int>(data_.vertices.size()))
          throw Error("TriangleMesh: triangle index out of range");
    build();
  }

  const std::vector<Vec3>& vertices() const { return data_.vertices; }
  const std::vector<std::array<int, 3>>& triangles() const { return data_.triangles; }
  bool empty() const { return data_.triangles.empty(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  Vec3 triangle_normal(size_t t) const {
    const auto& tri = data_.triangles[t];
    const auto& v = data_.vertices;
    return normalize(cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]]));
  }

  /// Every hit distance t > t_min along the ray, ascending.
  void all_hits(const Vec3& o, const Vec3& d, double t_min, std::vector<double>& out) const {
    out.clear();
    if (nodes_.empty()) return;
    const Vec3 inv{1.0 / d.x, 1.0 / d.y, 1.0 / d.z};
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& n = nodes_[stack[--sp]];
      if (!n.box.intersect(o, d, inv, t_min, std::numeric_limits<double>::infinity())) continue;
      if (n.left < 0) {
        for (int q = n.first; q < n.first + n.count; ++q)
          if (auto t = intersect(order_[q], o, d); t && *t > t_min) out.push_back(*t);
      } else {
        stack[sp++] = n.left;
        stack[sp++] = n.right;
      }
    }
    std::sort(out.begin(), out.end());
  }

  /// FNV-1a hash of the vertex and index buffers.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    mix(data_.vertices.data(), data_.vertices.size() * sizeof(Vec3));
    mix(data_.triangles.data(), data_.triangles.size() * sizeof(std::array<int, 3>));
    return h;
  }

  friend bool operator==(const TriangleMesh& a, const TriangleMesh& b) {
    return a.data_.vertices == b.data_.vertices && a.data_.triangles == b.data_.triangles;
  }

 private:
  // Two-sided Moller-Trumbore.
  std::optional<double> intersect(int t, const Vec3& o, const Vec3& d) const {
    const auto& tri = data_.triangles[t];
    const Vec3& p0 = data_.vertices[tri[0]];
    const Vec3 e1 = data_.vertices[tri[1]] - p0, e2 = data_.vertices[tri[2]] - p0;
    const Vec3 pv = cross(d, e2);
    const double det = dot(e1, pv);
    if (std::abs(det) < 1e-14) return std::nullopt;
    const double inv = 1.0 / det;
    const Vec3 tv = o - p0;
    const double u = dot(tv, pv) * inv;
    if (u < 0.0 || u > 1.0) return std::nullopt;
    const Vec3 qv = cross(tv, e1);
    const double v = dot(d, qv) * inv;
    if (v < 0.0 || u + v > 1.0) return std::nullopt;
    return dot(e2, qv) * inv;
  }

  int build_node(std::vector<Aabb>& boxes, std::vector<Vec3>& cent, int first, int count) {
    const int idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cb;
    for (int i = first; i < first + count; ++i) {
      box.expand(boxes[order_[i]]);
      cb.expand(cent[order_[i]]);
    }
    nodes_[idx].box = box;
    if (count <= 4) {
      nodes_[idx].first = first;
      nodes_[idx].count = count;
      return idx;
    }
    const Vec3 e = cb.extent();
    const int axis = (e.x >= e.y && e.x >= e.z) ? 0 : (e.y >= e.z ? 1 : 2);
    const int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](int a, int b) {
                       return cent[a][axis] < cent[b][axis] || (cent[a][axis] == cent[b][axis] && a < b);
                     });
    const int l = build_node(boxes, cent, first, mid - first);
    const int r = build_node(boxes, cent, mid, first + count - mid);
    nodes_[idx].left = l;
    nodes_[idx].right = r;
    return idx;
  }

  void build() {
    const int n = static_cast<int>(data_.triangles.size());
    if (n == 0) return;
    std::vector<Aabb> boxes(n);
    std::vector<Vec3> cent(n);
    order_.resize(n);
    for (int t = 0; t < n; ++t) {
      order_[t] = t;
      for (int v : data_.triangles[t]) boxes[t].expand(data_.vertices[v]);
      cent[t] = boxes[t].center();
    }
    build_node(boxes, cent, 0, n);
  }

  MeshData data_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
};

inline TriangleMesh extract_mesh(const TsdfVolume& vol) { return TriangleMesh(extract_mesh_data(vol)); }

/// Minimum separation between the first and second mesh hits.
inline constexpr double kDistinctHitGap = 1e-4;

struct DepthPair {
  std::vector<std::optional<double>> d1, d2;
};

/// Nearest and second-nearest distinct mesh depths along every pixel ray.
inline DepthPair depth_first_second(const TriangleMesh& mesh, const Camera& cam) {
  const size_t n = static_cast<size_t>(cam.width) * cam.height;
  DepthPair r{std::vector<std::optional<double>>(n), std::vector<std::optional<double>>(n)};
  const Vec3 eye = cam.center();
  parallel_for(cam.height, [&](int y) {
    std::vector<double> hits;
    for (int x = 0; x < cam.width; ++x) {
      const size_t i = static_cast<size_t>(y) * cam.width + x;
      mesh.all_hits(eye, cam.pixel_ray(x, y), 0.0, hits);
      if (hits.empty()) continue;
      r.d1[i] = hits[0];
      for (size_t k = 1; k < hits.size(); ++k)
        if (hits[k] > hits[0] + kDistinctHitGap) {
          r.d2[i] = hits[k];
          break;
        }
    }
  });
  return r;
}

/// Binary STL.
inline void write_stl(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_stl: cannot open " + path.string());
  char header[80] = {};
  std::strncpy(header, "rtgs mesh", sizeof(header) - 1);
  f.write(header, 80);
  const uint32_t n = static_cast<uint32_t>(mesh.triangles().size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (size_t t = 0; t < n; ++t) {
    float buf[12];
    const Vec3 nn = mesh.triangle_normal(t);
    for (int k = 0; k < 3; ++k) buf[k] = static_cast<float>(nn[k]);
    for (int v = 0; v < 3; ++v)
      for (int k = 0; k < 3; ++k) buf[3 + 3 * v + k] = static_cast<float>(mesh.vertices()[mesh.triangles()[t][v]][k]);
    f.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    const uint16_t attr = 0;
    f.write(reinterpret_cast<const char*>(&attr), 2);
  }
  if (!f) throw Error("write_stl: write failed for " + path.string());
}

/// ASCII OBJ.
inline void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw Error("write_obj: cannot open " + path.string());
  f.precision(9);
  for (const auto& v : mesh.vertices()) f << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles()) f << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!f) throw Error("write_obj: write failed for " + path.string());
}

}  // namespace rtgs
