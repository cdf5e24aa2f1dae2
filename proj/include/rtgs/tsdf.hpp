#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/math.hpp"
#include "rtgs/parallel.hpp"

namespace rtgs {

inline constexpr long long kMaxTsdfVoxels = 512LL * 512LL * 512LL;
inline constexpr double kTsdfMinAlpha = 0.5;

/// Truncated signed distance samples on a regular lattice. Sample (i, j, k)
/// sits at origin + voxel * (i, j, k); positive distances are in front of the
/// observed surface.
struct TsdfVolume {
  Vec3 origin;
  double voxel = 0.0;
  double tau = 0.0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<float> sdf;
  std::vector<float> weight;

  size_t index(int i, int j, int k) const {
    return (static_cast<size_t>(k) * ny + j) * nx + i;
  }
  Vec3 position(int i, int j, int k) const { return origin + Vec3{double(i), double(j), double(k)} * voxel; }
};

/// One fused view: premultiplied depth and its coverage. Pixels with
/// coverage above 0.5 contribute depth / coverage.
struct DepthView {
  Camera camera;
  std::vector<double> depth;
  std::vector<double> alpha;
};

/// Default lattice spacing: bounding-box diagonal / 256.
inline double default_voxel_size(const Aabb& bbox) { return bbox.diagonal() / 256.0; }

/// Projective TSDF fusion with a running weighted average (weight 1 per view
/// and voxel inside the truncation band).
inline TsdfVolume fuse_tsdf(std::span<const DepthView> views, const Aabb& bbox, double voxel,
                            double tau) {
  if (!(voxel > 0.0) || !(tau > 0.0)) throw Error("fuse_tsdf: voxel size and truncation must be positive");
  const Vec3 e = bbox.extent();
  TsdfVolume vol;
  vol.origin = bbox.lo;
  vol.voxel = voxel;
  vol.tau = tau;
  const auto dim = [&](double len) { return static_cast<long long>(std::floor(len / voxel)) + 1; };
  const long long nx = dim(e.x), ny = dim(e.y), nz = dim(e.z);
  if (nx * ny * nz > kMaxTsdfVoxels)
    throw Error("fuse_tsdf: " + std::to_string(nx) + "x" + std::to_string(ny) + "x" +
                std::to_string(nz) + " voxels exceeds the 512^3 cap");
  vol.nx = static_cast<int>(nx);
  vol.ny = static_cast<int>(ny);
  vol.nz = static_cast<int>(nz);
  vol.sdf.assign(static_cast<size_t>(nx * ny * nz), static_cast<float>(tau));
  vol.weight.assign(vol.sdf.size(), 0.0f);
  for (const auto& v : views) {
    v.camera.validate("fuse_tsdf view");
    if (v.depth.size() != static_cast<size_t>(v.camera.width) * v.camera.height ||
        v.alpha.size() != v.depth.size())
      throw Error("fuse_tsdf: depth map size does not match its camera");
  }
  parallel_for(vol.nz, [&](int k) {
    for (int j = 0; j < vol.ny; ++j)
      for (int i = 0; i < vol.nx; ++i) {
        const Vec3 x = vol.position(i, j, k);
        const size_t vi = vol.index(i, j, k);
        double s = vol.sdf[vi], w = vol.weight[vi];
        for (const auto& v : views) {
          const Camera& c = v.camera;
          const Vec3 pc = c.to_camera(x);
          if (pc.z <= 1e-9) continue;
          const long px = std::lround(c.fx * pc.x / pc.z + c.cx);
          const long py = std::lround(c.fy * pc.y / pc.z + c.cy);
          if (px < 0 || py < 0 || px >= c.width || py >= c.height) continue;
          const size_t pi = static_cast<size_t>(py) * c.width + px;
          if (!(v.alpha[pi] > kTsdfMinAlpha)) continue;
          const double d = v.depth[pi] / v.alpha[pi];
          const double diff = d - norm(pc);
          if (diff < -tau) continue;
          s = (s * w + std::min(diff, tau)) / (w + 1.0);
          w += 1.0;
        }
        vol.sdf[vi] = static_cast<float>(s);
        vol.weight[vi] = static_cast<float>(w);
      }
  });
  return vol;
}

namespace mc_detail {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, c >> 2).
// Faces list their corners counter-clockwise seen from outside the cell.
inline constexpr int kFaces[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                     {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};

using CornerEdge = std::array<int, 2>;  // unordered corner pair
using Loop = std::vector<CornerEdge>;

inline CornerEdge edge_key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

// Iso-surface loops of one sign configuration (bit c set = corner c inside).
// On every face, crossings are walked counter-clockwise and each exit is
// joined to the entry preceding it, which separates the inside corners of
// ambiguous faces identically from both neighboring cells. Segments then
// chain into closed loops through the shared cell edges.
inline std::vector<Loop> case_loops(int config) {
  auto inside = [&](int c) { return ((config >> c) & 1) != 0; };
  std::vector<std::pair<CornerEdge, CornerEdge>> segs;  // entry -> exit
  for (const auto& f : kFaces) {
    std::vector<std::pair<CornerEdge, bool>> crossings;  // (edge, is entry)
    for (int q = 0; q < 4; ++q) {
      const int a = f[q], b = f[(q + 1) % 4];
      if (inside(a) != inside(b)) crossings.push_back({edge_key(a, b), !inside(a)});
    }
    if (crossings.empty()) continue;
    const int m = static_cast<int>(crossings.size());
    for (int q = 0; q < m; ++q) {
      if (crossings[q].second) continue;
      const int prev = (q - 1 + m) % m;
      segs.push_back({crossings[prev].first, crossings[q].first});
    }
  }
  std::vector<Loop> loops;
  std::vector<bool> used(segs.size(), false);
  for (size_t s = 0; s < segs.size(); ++s) {
    if (used[s]) continue;
    Loop loop;
    size_t cur = s;
    while (!used[cur]) {
      used[cur] = true;
      loop.push_back(segs[cur].first);
      for (size_t t = 0; t < segs.size(); ++t)
        if (!used[t] && segs[t].first == segs[cur].second) {
          cur = t;
          break;
        }
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

inline bool share_face(const CornerEdge& a, const CornerEdge& b) {
  for (const auto& f : kFaces) {
    auto on = [&](int c) { return c == f[0] || c == f[1] || c == f[2] || c == f[3]; };
    if (on(a[0]) && on(a[1]) && on(b[0]) && on(b[1])) return true;
  }
  return false;
}

// Fan apex whose diagonals all cross the cell interior, or -1 when every
// choice would put a diagonal on a face (the loop then fans from its centroid).
// A diagonal on a face could coincide with one from the neighboring cell.
inline int fan_apex(const Loop& loop) {
  const int n = static_cast<int>(loop.size());
  for (int s = 0; s < n; ++s) {
    bool ok = true;
    for (int k = 2; k + 1 < n && ok; ++k) ok = !share_face(loop[s], loop[(s + k) % n]);
    if (ok) return s;
  }
  return -1;
}

struct CaseLoop {
  Loop edges;
  int apex = 0;
};

inline const std::array<std::vector<CaseLoop>, 256>& case_table() {
  static const std::array<std::vector<CaseLoop>, 256> table = [] {
    std::array<std::vector<CaseLoop>, 256> t;
    for (int c = 0; c < 256; ++c)
      for (auto& loop : case_loops(c)) {
        const int apex = fan_apex(loop);
        t[c].push_back({std::move(loop), apex});
      }
    return t;
  }();
  return table;
}

}  // namespace mc_detail

/// Indexed triangle soup.
struct MeshData {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

/// Marching cubes at level 0 over cells whose eight samples all carry
/// weight. Vertices are shared through their lattice edge; zero-area
/// triangles are dropped. Triangles face the positive (observed) side.
inline MeshData extract_mesh_data(const TsdfVolume& vol) {
  using namespace mc_detail;
  const auto& table = case_table();
  MeshData mesh;
  std::unordered_map<long long, int> edge_vertex;
  const long long nxy = static_cast<long long>(vol.nx) * vol.ny;
  auto corner_index = [&](int i, int j, int k, int c) {
    return vol.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2));
  };
  for (int k = 0; k + 1 < vol.nz; ++k)
    for (int j = 0; j + 1 < vol.ny; ++j)
      for (int i = 0; i + 1 < vol.nx; ++i) {
        int config = 0;
        bool weighted = true;
        std::array<double, 8> s;
        for (int c = 0; c < 8 && weighted; ++c) {
          const size_t vi = corner_index(i, j, k, c);
          weighted = vol.weight[vi] > 0.0f;
          s[c] = vol.sdf[vi];
          if (s[c] < 0.0) config |= 1 << c;
        }
        if (!weighted || config == 0 || config == 255) continue;
        auto vertex = [&](const CornerEdge& e) {
          const int a = e[0], b = e[1];
          const int axis = (a ^ b) == 1 ? 0 : ((a ^ b) == 2 ? 1 : 2);
          const int ai = i + (a & 1), aj = j + ((a >> 1) & 1), ak = k + (a >> 2);
          const long long key = (ak * nxy + static_cast<long long>(aj) * vol.nx + ai) * 3 + axis;
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) return it->second;
          const double t = s[a] / (s[a] - s[b]);
          const Vec3 pa = vol.position(ai, aj, ak);
          Vec3 step;
          step[axis] = vol.voxel;
          const int id = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(pa + step * t);
          edge_vertex.emplace(key, id);
          return id;
        };
        for (const auto& loop : table[config]) {
          std::vector<int> ids;
          for (const auto& e : loop.edges) ids.push_back(vertex(e));
          const size_t n = ids.size();
          if (loop.apex >= 0) {
            std::rotate(ids.begin(), ids.begin() + loop.apex, ids.end());
            for (size_t q = 1; q + 1 < n; ++q) mesh.triangles.push_back({ids[0], ids[q], ids[q + 1]});
            continue;
          }
          Vec3 c;
          for (int id : ids) c += mesh.vertices[id];
          const int center = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(c / static_cast<double>(n));
          for (size_t q = 0; q < n; ++q) mesh.triangles.push_back({center, ids[q], ids[(q + 1) % n]});
        }
      }
  const double min_area2 = 1e-24 * vol.voxel * vol.voxel * vol.voxel * vol.voxel;
  std::erase_if(mesh.triangles, [&](const std::array<int, 3>& t) {
    const Vec3 c = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]], mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    return dot(c, c) <= min_area2;
  });
  if (mesh.triangles.empty())
    throw Error("extract_mesh: no zero crossing among weighted voxels (" +
                std::to_string(vol.nx) + "x" + std::to_string(vol.ny) + "x" + std::to_string(vol.nz) +
                " lattice)");
  return mesh;
}

}  // namespace rtgs
