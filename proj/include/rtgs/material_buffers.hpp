#pragma once

#include <filesystem>
#include <vector>

#include "rtgs/image.hpp"
#include "rtgs/math.hpp"

namespace rtgs {

/// Per-pixel deferred-shading maps produced by rasterizing the diffuse set.
/// All maps are premultiplied by coverage except the normal, which is
/// renormalized after blending.
struct MaterialBuffers {
  int width = 0, height = 0;
  std::vector<double> depth;      // distance along the unit pixel ray
  std::vector<Vec3> normal;       // world space, facing the camera
  std::vector<double> roughness;
  std::vector<Vec3> f0;
  std::vector<double> ks;
  std::vector<Vec3> color;        // diffuse color C_d
  std::vector<double> alpha;      // accumulated coverage A

  MaterialBuffers() = default;
  MaterialBuffers(int w, int h) : width(w), height(h) {
    const size_t n = static_cast<size_t>(w) * h;
    depth.assign(n, 0.0);
    normal.assign(n, Vec3{});
    roughness.assign(n, 0.0);
    f0.assign(n, Vec3{});
    ks.assign(n, 0.0);
    color.assign(n, Vec3{});
    alpha.assign(n, 0.0);
  }
  int pixel_count() const { return width * height; }
};

namespace detail {
inline ImageF scalar_image(int w, int h, const std::vector<double>& v) {
  ImageF img(w, h, 1);
  for (size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(v[i]);
  return img;
}
inline ImageF vector_image(int w, int h, const std::vector<Vec3>& v) {
  ImageF img(w, h, 3);
  for (size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = static_cast<float>(v[i][c]);
  return img;
}
}  // namespace detail

/// Debug dump: d.pfm, n.pfm, roughness.pfm, f0.pfm, ks.pfm, cd.pfm, a.pfm.
inline void dump_material_buffers(const std::filesystem::path& dir, const MaterialBuffers& mb) {
  std::filesystem::create_directories(dir);
  const int w = mb.width, h = mb.height;
  write_pfm(dir / "d.pfm", detail::scalar_image(w, h, mb.depth));
  write_pfm(dir / "n.pfm", detail::vector_image(w, h, mb.normal));
  write_pfm(dir / "roughness.pfm", detail::scalar_image(w, h, mb.roughness));
  write_pfm(dir / "f0.pfm", detail::vector_image(w, h, mb.f0));
  write_pfm(dir / "ks.pfm", detail::scalar_image(w, h, mb.ks));
  write_pfm(dir / "cd.pfm", detail::vector_image(w, h, mb.color));
  write_pfm(dir / "a.pfm", detail::scalar_image(w, h, mb.alpha));
}

}  // namespace rtgs
