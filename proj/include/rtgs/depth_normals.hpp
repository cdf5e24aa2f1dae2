#pragma once

#include <optional>
#include <vector>

#include "rtgs/camera.hpp"
#include "rtgs/math.hpp"

namespace rtgs {

/// World position x = camera center + d * (unit pixel ray); nullopt where the
/// pixel is uncovered (A == 0).
inline std::vector<std::optional<Vec3>> position_from_depth(const std::vector<double>& depth,
                                                            const std::vector<double>& coverage,
                                                            const Camera& cam) {
  std::vector<std::optional<Vec3>> out(depth.size());
  const Vec3 eye = cam.center();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const size_t i = static_cast<size_t>(y) * cam.width + x;
      if (coverage[i] > 0.0) out[i] = eye + cam.pixel_ray(x, y) * depth[i];
    }
  return out;
}

namespace depth_normal_detail {
// Pixel whose finite difference stencil defines N_d at (x, y); border pixels
// borrow from the inward neighbor.
inline int source_x(int x, int w) { return x < w - 1 ? x : x - 1; }
inline int source_y(int y, int h) { return y < h - 1 ? y : y - 1; }
}  // namespace depth_normal_detail

/// Normals from the depth map by forward differences of the back-projected
/// positions, oriented to face the camera. Always unit length.
inline std::vector<Vec3> normal_from_depth(const std::vector<double>& depth, const Camera& cam) {
  using namespace depth_normal_detail;
  const int w = cam.width, h = cam.height;
  std::vector<Vec3> rays(depth.size()), pos(depth.size()), out(depth.size());
  const Vec3 eye = cam.center();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      rays[i] = cam.pixel_ray(x, y);
      pos[i] = eye + rays[i] * depth[i];
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const int sx = source_x(x, w), sy = source_y(y, h);
      Vec3 n;
      if (sx >= 0 && sy >= 0) {
        const size_t s = static_cast<size_t>(sy) * w + sx;
        const Vec3 c = cross(pos[s + 1] - pos[s], pos[s + w] - pos[s]);
        n = normalize(c);
        if (dot(n, rays[s]) > 0.0) n = -n;
      }
      out[i] = norm(n) > 0.0 ? n : -rays[i];
    }
  return out;
}

/// Adjoint of normal_from_depth: dL/dN_d to dL/d(depth).
inline std::vector<double> normal_from_depth_backward(const std::vector<double>& depth,
                                                      const Camera& cam,
                                                      const std::vector<Vec3>& d_normal) {
  using namespace depth_normal_detail;
  const int w = cam.width, h = cam.height;
  std::vector<Vec3> rays(depth.size()), pos(depth.size()), d_pos(depth.size());
  const Vec3 eye = cam.center();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      rays[i] = cam.pixel_ray(x, y);
      pos[i] = eye + rays[i] * depth[i];
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const int sx = source_x(x, w), sy = source_y(y, h);
      if (sx < 0 || sy < 0) continue;
      const size_t s = static_cast<size_t>(sy) * w + sx;
      const Vec3 a = pos[s + 1] - pos[s], b = pos[s + w] - pos[s];
      const Vec3 c = cross(a, b);
      if (!(norm(c) > 0.0)) continue;
      const double sign = dot(c, rays[s]) > 0.0 ? -1.0 : 1.0;
      const Vec3 dc = normalize_backward(c, d_normal[i] * sign);
      const Vec3 da = cross(b, dc), db = cross(dc, a);
      d_pos[s + 1] += da;
      d_pos[s + w] += db;
      d_pos[s] -= da + db;
    }
  std::vector<double> d_depth(depth.size());
  for (size_t i = 0; i < depth.size(); ++i) d_depth[i] = dot(rays[i], d_pos[i]);
  return d_depth;
}

}  // namespace rtgs
