#pragma once

#include <array>

#include "rtgs/math.hpp"

namespace rtgs {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

namespace sh_detail {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                 -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                 0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                 -0.5900435899266435};
}  // namespace sh_detail

inline constexpr double kShC0 = sh_detail::C0;

/// Real SH basis values at unit direction d, for coefficients [0, count).
inline std::array<double, kShCoeffs> sh_basis(const Vec3& d, int degree) {
  using namespace sh_detail;
  std::array<double, kShCoeffs> y{};
  const double x = d.x, yy = d.y, z = d.z;
  y[0] = C0;
  if (degree < 1) return y;
  y[1] = -C1 * yy;
  y[2] = C1 * z;
  y[3] = -C1 * x;
  if (degree < 2) return y;
  const double xx = x * x, y2 = yy * yy, zz = z * z;
  y[4] = C2[0] * x * yy;
  y[5] = C2[1] * yy * z;
  y[6] = C2[2] * (2.0 * zz - xx - y2);
  y[7] = C2[3] * x * z;
  y[8] = C2[4] * (xx - y2);
  if (degree < 3) return y;
  y[9] = C3[0] * yy * (3.0 * xx - y2);
  y[10] = C3[1] * x * yy * z;
  y[11] = C3[2] * yy * (4.0 * zz - xx - y2);
  y[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
  y[13] = C3[4] * x * (4.0 * zz - xx - y2);
  y[14] = C3[5] * z * (xx - y2);
  y[15] = C3[6] * x * (xx - 3.0 * y2);
  return y;
}

/// Gradients of the basis polynomials with respect to the (unnormalized)
/// direction components.
inline std::array<Vec3, kShCoeffs> sh_basis_grad(const Vec3& d, int degree) {
  using namespace sh_detail;
  std::array<Vec3, kShCoeffs> g{};
  if (degree < 1) return g;
  const double x = d.x, y = d.y, z = d.z;
  g[1] = {0.0, -C1, 0.0};
  g[2] = {0.0, 0.0, C1};
  g[3] = {-C1, 0.0, 0.0};
  if (degree < 2) return g;
  const double xx = x * x, yy = y * y, zz = z * z;
  g[4] = Vec3{y, x, 0.0} * C2[0];
  g[5] = Vec3{0.0, z, y} * C2[1];
  g[6] = Vec3{-2.0 * x, -2.0 * y, 4.0 * z} * C2[2];
  g[7] = Vec3{z, 0.0, x} * C2[3];
  g[8] = Vec3{2.0 * x, -2.0 * y, 0.0} * C2[4];
  if (degree < 3) return g;
  g[9] = Vec3{6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0} * C3[0];
  g[10] = Vec3{y * z, x * z, x * y} * C3[1];
  g[11] = Vec3{-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z} * C3[2];
  g[12] = Vec3{-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy} * C3[3];
  g[13] = Vec3{4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z} * C3[4];
  g[14] = Vec3{2.0 * x * z, -2.0 * y * z, xx - yy} * C3[5];
  g[15] = Vec3{3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0} * C3[6];
  return g;
}

/// RGB radiance of an SH block along unit direction d: sum + 0.5, clamped at 0.
inline Vec3 sh_color(const std::array<Vec3, kShCoeffs>& coeffs, int degree, const Vec3& d) {
  const auto y = sh_basis(d, degree);
  Vec3 c = Vec3::splat(0.5);
  for (int k = 0; k < sh_coeff_count(degree); ++k) c += coeffs[k] * y[k];
  return {std::max(c.x, 0.0), std::max(c.y, 0.0), std::max(c.z, 0.0)};
}

/// Adjoint of sh_color. Accumulates into d_coeffs and returns dL/d(dir) for the
/// unit direction (caller chains through the normalization).
inline Vec3 sh_color_backward(const std::array<Vec3, kShCoeffs>& coeffs, int degree, const Vec3& d,
                              const Vec3& d_color, std::array<Vec3, kShCoeffs>& d_coeffs) {
  const auto y = sh_basis(d, degree);
  const int n = sh_coeff_count(degree);
  Vec3 raw = Vec3::splat(0.5);
  for (int k = 0; k < n; ++k) raw += coeffs[k] * y[k];
  // Clamp mask.
  const Vec3 g{raw.x > 0.0 ? d_color.x : 0.0, raw.y > 0.0 ? d_color.y : 0.0,
               raw.z > 0.0 ? d_color.z : 0.0};
  for (int k = 0; k < n; ++k) d_coeffs[k] += g * y[k];
  if (degree == 0) return {};
  const auto dy = sh_basis_grad(d, degree);
  Vec3 d_dir;
  for (int k = 1; k < n; ++k) d_dir += dy[k] * dot(coeffs[k], g);
  return d_dir;
}

}  // namespace rtgs
