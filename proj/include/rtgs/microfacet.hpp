#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "rtgs/math.hpp"

namespace rtgs {

// The reflected radiance is weighted by f_r * (w_i . n) by default; building
// with RTGS_BRDF_COSINE_FREE drops the cosine factor.
#ifdef RTGS_BRDF_COSINE_FREE
inline constexpr bool kBrdfCosine = false;
#else
inline constexpr bool kBrdfCosine = true;
#endif

inline constexpr double kGrazingCos = 1e-4;
inline constexpr double kMaxBrdfWeight = 10.0;
inline constexpr double kMinEffectiveRoughness = 0.02;
inline constexpr double kMinRawRoughness = 0.02;

/// Surface sample used for shading. `alpha` is the roughness fed to the NDF
/// (already remapped).
struct ShadingPoint {
  Vec3 x;
  Vec3 n;
  Vec3 wo;  // unit, towards the camera
  double alpha;
  Vec3 f0;
  double ks;
};

/// Normalized w_i + w_o; nullopt when the two directions cancel.
inline std::optional<Vec3> half_vector(const Vec3& wi, const Vec3& wo) {
  const Vec3 s = wi + wo;
  const double l = norm(s);
  if (l < 1e-12) return std::nullopt;
  return s / l;
}

/// Isotropic Trowbridge-Reitz distribution.
inline double ggx_d(double cos_h, double alpha) {
  cos_h = std::clamp(cos_h, 0.0, 1.0);
  const double a2 = alpha * alpha;
  const double k = cos_h * cos_h * (a2 - 1.0) + 1.0;
  return a2 / (kPi * k * k);
}

/// Polynomial roughness remap in ln(alpha), clamped below at 0.02.
inline double remap_roughness(double alpha) {
  if (!(alpha > 0.0)) throw Error("remap_roughness: roughness must be positive");
  const double l = std::log(alpha);
  const double g =
      1.62142 + l * (0.819955 + l * (0.1734 + l * (0.0171201 + l * 0.000640711)));
  return std::max(g, kMinEffectiveRoughness);
}

/// d remap / d alpha (zero where the lower clamp is active).
inline double remap_roughness_grad(double alpha) {
  if (remap_roughness(alpha) <= kMinEffectiveRoughness) return 0.0;
  const double l = std::log(alpha);
  const double dg = 0.819955 + l * (2.0 * 0.1734 + l * (3.0 * 0.0171201 + l * 4.0 * 0.000640711));
  return dg / alpha;
}

/// Smith masking for one direction.
inline double smith_g1(double c, double alpha) {
  const double a2 = alpha * alpha;
  return 2.0 * c / (c + std::sqrt(a2 + (1.0 - a2) * c * c));
}

/// Separable Smith shadowing-masking.
inline double smith_g(double cos_i, double cos_o, double alpha) {
  return smith_g1(cos_i, alpha) * smith_g1(cos_o, alpha);
}

/// Schlick Fresnel.
inline Vec3 fresnel(double cos_theta, const Vec3& f0) {
  const double m = std::pow(1.0 - std::clamp(cos_theta, 0.0, 1.0), 5.0);
  return f0 + (Vec3::splat(1.0) - f0) * m;
}

/// Torrance-Sparrow reflection weight f_r(w_i, w_o) (w_i . n) along one traced
/// direction, clamped to [0, 10]; zero at grazing configurations.
inline Vec3 brdf_weight(const ShadingPoint& sp, const Vec3& wi) {
  const double co = dot(sp.n, sp.wo), ci = dot(sp.n, wi);
  if (co <= kGrazingCos || ci <= kGrazingCos) return {};
  const auto h = half_vector(wi, sp.wo);
  if (!h) return {};
  const double d = ggx_d(dot(sp.n, *h), sp.alpha);
  const double g = smith_g(ci, co, sp.alpha);
  const Vec3 f = fresnel(dot(wi, *h), sp.f0);
  const double scale = d * g / (4.0 * co * ci) * (kBrdfCosine ? ci : 1.0);
  const Vec3 w = f * scale;
  return {std::clamp(w.x, 0.0, kMaxBrdfWeight), std::clamp(w.y, 0.0, kMaxBrdfWeight),
          std::clamp(w.z, 0.0, kMaxBrdfWeight)};
}

/// Specular transmission weight 1 - F(n . w_o) inside the transparency mask.
inline Vec3 btdf_weight(const ShadingPoint& sp, bool masked) {
  const double co = dot(sp.n, sp.wo);
  if (!masked || co <= kGrazingCos) return {};
  return Vec3::splat(1.0) - fresnel(co, sp.f0);
}

/// C = (1 - k_s) C_d + k_s (w_r C_r + w_t C_t), clamped below at 0.
inline Vec3 compose_final(const Vec3& cd, const Vec3& cr, const Vec3& ct, double ks,
                          const Vec3& wr, const Vec3& wt) {
  const Vec3 c = cd * (1.0 - ks) + (mul(wr, cr) + mul(wt, ct)) * ks;
  return {std::max(c.x, 0.0), std::max(c.y, 0.0), std::max(c.z, 0.0)};
}

struct ComposeGrad {
  Vec3 d_cd, d_cr, d_ct, d_wr, d_wt;
  double d_ks = 0.0;
};

inline ComposeGrad compose_final_backward(const Vec3& cd, const Vec3& cr, const Vec3& ct,
                                          double ks, const Vec3& wr, const Vec3& wt,
                                          const Vec3& d_out) {
  const Vec3 spec = mul(wr, cr) + mul(wt, ct);
  const Vec3 raw = cd * (1.0 - ks) + spec * ks;
  const Vec3 g{raw.x > 0.0 ? d_out.x : 0.0, raw.y > 0.0 ? d_out.y : 0.0,
               raw.z > 0.0 ? d_out.z : 0.0};
  ComposeGrad r;
  r.d_cd = g * (1.0 - ks);
  r.d_ks = dot(g, spec - cd);
  r.d_wr = mul(g, cr) * ks;
  r.d_cr = mul(g, wr) * ks;
  r.d_wt = mul(g, ct) * ks;
  r.d_ct = mul(g, wt) * ks;
  return r;
}

// ---------------------------------------------------------------------------
// Weights for the single traced mirror ray. The half vector then equals n, so
// D is evaluated at n . h = 1 and every other term depends on c = n . w_o.

struct SpecularWeights {
  Vec3 w_r;
  Vec3 w_t;
};

/// Reflection and transmission weights at a pixel from the blended material
/// maps. `roughness` is the raw map value; it is clamped to [0.02, 1] and
/// remapped before use.
inline SpecularWeights specular_weights(const Vec3& n, const Vec3& wo, double roughness,
                                        const Vec3& f0, bool masked) {
  const double c = dot(n, wo);
  if (c <= kGrazingCos) return {};
  const Vec3 wi = n * (2.0 * c) - wo;
  const ShadingPoint sp{{}, n, wo, remap_roughness(std::clamp(roughness, kMinRawRoughness, 1.0)),
                        f0, 0.0};
  return {brdf_weight(sp, wi), btdf_weight(sp, masked)};
}

struct SpecularWeightsGrad {
  double d_roughness = 0.0;
  Vec3 d_f0;
  Vec3 d_n;
};

inline SpecularWeightsGrad specular_weights_backward(const Vec3& n, const Vec3& wo,
                                                     double roughness, const Vec3& f0,
                                                     bool masked, const Vec3& d_wr,
                                                     const Vec3& d_wt) {
  SpecularWeightsGrad r;
  const double c = dot(n, wo);
  if (c <= kGrazingCos) return r;
  const bool in_range = roughness > kMinRawRoughness && roughness < 1.0;
  const double a_raw = std::clamp(roughness, kMinRawRoughness, 1.0);
  const double a = remap_roughness(a_raw);
  const double da_draw = in_range ? remap_roughness_grad(a_raw) : 0.0;

  const double d = 1.0 / (kPi * a * a);
  const double dd_da = -2.0 * d / a;
  const double a2 = a * a;
  const double s = std::sqrt(a2 + (1.0 - a2) * c * c);
  const double g1 = 2.0 * c / (c + s);
  const double ds_dc = (1.0 - a2) * c / s;
  const double ds_da = a * (1.0 - c * c) / s;
  const double dg1_dc = 2.0 / (c + s) - 2.0 * c * (1.0 + ds_dc) / ((c + s) * (c + s));
  const double dg1_da = -2.0 * c * ds_da / ((c + s) * (c + s));
  const double g = g1 * g1;
  const double dg_dc = 2.0 * g1 * dg1_dc;
  const double dg_da = 2.0 * g1 * dg1_da;
  const double m = std::pow(1.0 - c, 5.0);
  const double dm_dc = -5.0 * std::pow(1.0 - c, 4.0);
  // w_r = d g F / (4 c^p), p = 1 with the cosine factor, 2 without.
  const double p = kBrdfCosine ? 1.0 : 2.0;
  const double inv = 1.0 / (4.0 * std::pow(c, p));
  const double dinv_dc = -p * inv / c;

  double d_c = 0.0, d_a = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double fk = f0[k] + (1.0 - f0[k]) * m;
    const double w = d * g * fk * inv;
    if (w > 0.0 && w < kMaxBrdfWeight) {
      const double gw = d_wr[k];
      const double dfk_dc = (1.0 - f0[k]) * dm_dc;
      d_c += gw * d * (dg_dc * fk * inv + g * dfk_dc * inv + g * fk * dinv_dc);
      d_a += gw * (dd_da * g + d * dg_da) * fk * inv;
      r.d_f0[k] += gw * d * g * inv * (1.0 - m);
    }
    if (masked) {
      // w_t = 1 - F
      r.d_f0[k] -= d_wt[k] * (1.0 - m);
      d_c -= d_wt[k] * (1.0 - f0[k]) * dm_dc;
    }
  }
  r.d_roughness = d_a * da_draw;
  r.d_n = wo * d_c;
  return r;
}

}  // namespace rtgs
