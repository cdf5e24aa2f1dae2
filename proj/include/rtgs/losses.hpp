#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rtgs/image.hpp"
#include "rtgs/math.hpp"

namespace rtgs {

struct LossWeights {
  double spec = 0.2;
  double depth = 0.2;
  double normal = 0.04;
  double mono = 0.01;
  double perc = 0.01;
  double k0 = 0.9;
  double ssim_mix = 0.2;
};

/// Covered pixels for the depth-normal term.
inline constexpr double kCoverageThreshold = 1e-2;

// ---------------------------------------------------------------------------
// SSIM with an 11x11 Gaussian window (sigma 1.5) and zero-padded "same"
// filtering, averaged over pixels and channels.

namespace ssim_detail {

inline constexpr int kRadius = 5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::array<double, 2 * kRadius + 1>& window() {
  static const auto w = [] {
    std::array<double, 2 * kRadius + 1> k{};
    double s = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i) s += k[i + kRadius] = std::exp(-i * i / (2.0 * 1.5 * 1.5));
    for (double& v : k) v /= s;
    return k;
  }();
  return w;
}

// Separable zero-padded Gaussian filter of a single-channel plane. The kernel
// is symmetric, so this operator is its own adjoint.
inline std::vector<double> blur(const std::vector<double>& x, int w, int h) {
  const auto& k = window();
  std::vector<double> tmp(x.size(), 0.0), out(x.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int i = 0; i < w; ++i) {
      double s = 0.0;
      for (int d = -kRadius; d <= kRadius; ++d) {
        const int j = i + d;
        if (j >= 0 && j < w) s += k[d + kRadius] * x[static_cast<size_t>(y) * w + j];
      }
      tmp[static_cast<size_t>(y) * w + i] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int i = 0; i < w; ++i) {
      double s = 0.0;
      for (int d = -kRadius; d <= kRadius; ++d) {
        const int j = y + d;
        if (j >= 0 && j < h) s += k[d + kRadius] * tmp[static_cast<size_t>(j) * w + i];
      }
      out[static_cast<size_t>(y) * w + i] = s;
    }
  return out;
}

inline std::vector<double> plane(const ImageD& img, int c) {
  std::vector<double> p(static_cast<size_t>(img.width) * img.height);
  for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
  return p;
}

}  // namespace ssim_detail

/// Mean SSIM; when `grad` is given it receives dSSIM/dx (same shape as x).
inline double ssim(const ImageD& x, const ImageD& y, ImageD* grad = nullptr) {
  using namespace ssim_detail;
  if (!x.same_shape(y)) throw Error("ssim: image size mismatch");
  const int w = x.width, h = x.height;
  const size_t np = static_cast<size_t>(w) * h;
  if (grad) *grad = ImageD(w, h, x.channels);
  double total = 0.0;
  const double norm_n = 1.0 / static_cast<double>(np * x.channels);
  for (int c = 0; c < x.channels; ++c) {
    const auto px = plane(x, c), py = plane(y, c);
    std::vector<double> xx(np), yy(np), xy(np);
    for (size_t i = 0; i < np; ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    const auto mx = blur(px, w, h), my = blur(py, w, h);
    const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
    std::vector<double> dmx(np), dexx(np), dexy(np);
    for (size_t i = 0; i < np; ++i) {
      const double n1 = 2.0 * mx[i] * my[i] + kC1;
      const double n2 = 2.0 * (exy[i] - mx[i] * my[i]) + kC2;
      const double d1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
      const double d2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kC2;
      const double s = n1 * n2 / (d1 * d2);
      total += s;
      if (!grad) continue;
      const double dd = d1 * d2;
      dmx[i] = (2.0 * my[i] * n2 - 2.0 * my[i] * n1) / dd - s * 2.0 * mx[i] / d1 + s * 2.0 * mx[i] / d2;
      dexx[i] = -s / d2;
      dexy[i] = 2.0 * n1 / dd;
    }
    if (!grad) continue;
    const auto gm = blur(dmx, w, h), gxx = blur(dexx, w, h), gxy = blur(dexy, w, h);
    for (size_t i = 0; i < np; ++i)
      grad->data[i * x.channels + c] = (gm[i] + 2.0 * px[i] * gxx[i] + py[i] * gxy[i]) * norm_n;
  }
  return total * norm_n;
}

/// Loss value with its gradient with respect to the rendered input.
struct ImageLoss {
  double value = 0.0;
  ImageD grad;
};

/// (1 - mix) mean|I - I_gt| + mix (1 - SSIM) / 2.
inline ImageLoss loss_rgb(const ImageD& img, const ImageD& gt, double ssim_mix = 0.2) {
  if (!img.same_shape(gt)) throw Error("loss_rgb: image size mismatch");
  ImageLoss r;
  ImageD g_ssim;
  const double s = ssim(img, gt, &g_ssim);
  const double n = static_cast<double>(img.data.size());
  double l1 = 0.0;
  r.grad = ImageD(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - gt.data[i];
    l1 += std::abs(d);
    const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    r.grad.data[i] = (1.0 - ssim_mix) * sg / n - 0.5 * ssim_mix * g_ssim.data[i];
  }
  r.value = (1.0 - ssim_mix) * l1 / n + ssim_mix * (1.0 - s) / 2.0;
  return r;
}

/// Scalar-map loss and its gradient.
struct MapLoss {
  double value = 0.0;
  std::vector<double> grad;
};

/// (1/N) sum_i mask_i max(0, k0 - ks_i).
inline MapLoss loss_spec(const std::vector<double>& ks, const std::vector<uint8_t>& mask, double k0) {
  if (ks.size() != mask.size()) throw Error("loss_spec: size mismatch");
  MapLoss r;
  r.grad.assign(ks.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(ks.size());
  for (size_t i = 0; i < ks.size(); ++i) {
    if (!mask[i]) continue;
    const double v = k0 - ks[i];
    if (v > 0.0) {
      r.value += v * inv;
      r.grad[i] = -inv;
    }
  }
  return r;
}

/// (1/N) sum_i mask_i max(0, d_i - D_i); absent entries contribute nothing.
inline MapLoss loss_depth(const std::vector<std::optional<double>>& d,
                          const std::vector<std::optional<double>>& back,
                          const std::vector<uint8_t>& mask) {
  if (d.size() != back.size() || d.size() != mask.size()) throw Error("loss_depth: size mismatch");
  MapLoss r;
  r.grad.assign(d.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    if (!mask[i] || !d[i] || !back[i]) continue;
    const double v = *d[i] - *back[i];
    if (v > 0.0) {
      r.value += v * inv;
      r.grad[i] = inv;
    }
  }
  return r;
}

/// Loss between two normal maps with gradients for both.
struct NormalLoss {
  double value = 0.0;
  std::vector<Vec3> grad_n;
  std::vector<Vec3> grad_ref;
};

/// (1/N) sum over covered pixels of (1 - n . N_d).
inline NormalLoss loss_normal(const std::vector<Vec3>& n, const std::vector<Vec3>& nd,
                              const std::vector<double>& coverage) {
  if (n.size() != nd.size() || n.size() != coverage.size()) throw Error("loss_normal: size mismatch");
  NormalLoss r;
  r.grad_n.assign(n.size(), Vec3{});
  r.grad_ref.assign(n.size(), Vec3{});
  const double inv = 1.0 / static_cast<double>(n.size());
  for (size_t i = 0; i < n.size(); ++i) {
    if (!(coverage[i] > kCoverageThreshold)) continue;
    r.value += (1.0 - dot(n[i], nd[i])) * inv;
    r.grad_n[i] = nd[i] * -inv;
    r.grad_ref[i] = n[i] * -inv;
  }
  return r;
}

/// (1/N) sum over pixels where N_m is defined (non-zero) of (1 - n . N_m).
/// An absent map yields zero; the caller logs the skip.
inline NormalLoss loss_mono(const std::vector<Vec3>& n, const std::vector<Vec3>* mono) {
  NormalLoss r;
  r.grad_n.assign(n.size(), Vec3{});
  if (!mono) return r;
  if (mono->size() != n.size()) throw Error("loss_mono: size mismatch");
  const double inv = 1.0 / static_cast<double>(n.size());
  for (size_t i = 0; i < n.size(); ++i) {
    const Vec3& m = (*mono)[i];
    if (dot(m, m) == 0.0) continue;
    r.value += (1.0 - dot(n[i], m)) * inv;
    r.grad_n[i] = m * -inv;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Multi-scale gradient-difference loss, a stand-in for a learned perceptual
// metric. Off unless enabled.

namespace perc_detail {
inline ImageD downsample(const ImageD& a) {
  ImageD out(std::max(1, a.width / 2), std::max(1, a.height / 2), a.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        double s = 0.0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = 2 * x + dx, sy = 2 * y + dy;
            if (sx < a.width && sy < a.height) {
              s += a.at(sx, sy, c);
              ++n;
            }
          }
        out.at(x, y, c) = s / n;
      }
  return out;
}
inline ImageD downsample_adjoint(const ImageD& g, int w, int h) {
  ImageD out(w, h, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        int n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) n += (2 * x + dx < w && 2 * y + dy < h);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = 2 * x + dx, sy = 2 * y + dy;
            if (sx < w && sy < h) out.at(sx, sy, c) += g.at(x, y, c) / n;
          }
      }
  return out;
}
}  // namespace perc_detail

inline constexpr int kPercLevels = 3;

/// Mean absolute difference of forward image gradients, averaged over a
/// three-level 2x2-box pyramid.
inline ImageLoss loss_perc_substitute(const ImageD& img, const ImageD& gt, bool enabled) {
  using namespace perc_detail;
  if (!img.same_shape(gt)) throw Error("loss_perc_substitute: image size mismatch");
  ImageLoss r;
  r.grad = ImageD(img.width, img.height, img.channels);
  if (!enabled) return r;
  ImageD e(img.width, img.height, img.channels);
  for (size_t i = 0; i < e.data.size(); ++i) e.data[i] = img.data[i] - gt.data[i];
  std::vector<ImageD> levels{e};
  for (int l = 1; l < kPercLevels; ++l) levels.push_back(downsample(levels.back()));
  std::vector<ImageD> grads;
  for (const auto& a : levels) {
    ImageD g(a.width, a.height, a.channels);
    const double cnt = static_cast<double>(std::max(1, (a.width - 1) * a.height + a.width * (a.height - 1)) * a.channels);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        for (int c = 0; c < a.channels; ++c) {
          auto term = [&](int x2, int y2) {
            const double d = a.at(x2, y2, c) - a.at(x, y, c);
            r.value += std::abs(d) / cnt / kPercLevels;
            const double s = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / cnt / kPercLevels;
            g.at(x2, y2, c) += s;
            g.at(x, y, c) -= s;
          };
          if (x + 1 < a.width) term(x + 1, y);
          if (y + 1 < a.height) term(x, y + 1);
        }
    grads.push_back(std::move(g));
  }
  for (int l = kPercLevels - 1; l > 0; --l) {
    const ImageD up = downsample_adjoint(grads[l], levels[l - 1].width, levels[l - 1].height);
    for (size_t i = 0; i < up.data.size(); ++i) grads[l - 1].data[i] += up.data[i];
  }
  r.grad = std::move(grads[0]);
  return r;
}

// ---------------------------------------------------------------------------

/// Per-term values of the weighted objective; disabled terms are absent.
struct LossBreakdown {
  std::optional<double> rgb, spec, depth, normal, mono, perc;
  double total = 0.0;
};

/// Weighted sum of the active terms; throws on a non-finite term.
inline double total_loss(LossBreakdown& b, const LossWeights& w) {
  const std::pair<const char*, std::optional<double>*> terms[] = {
      {"rgb", &b.rgb}, {"spec", &b.spec}, {"depth", &b.depth},
      {"normal", &b.normal}, {"mono", &b.mono}, {"perc", &b.perc}};
  for (const auto& [name, v] : terms)
    if (*v && !std::isfinite(**v)) throw Error(std::string("total_loss: non-finite term '") + name + "'");
  b.total = b.rgb.value_or(0.0) + w.spec * b.spec.value_or(0.0) + w.depth * b.depth.value_or(0.0) +
            w.normal * b.normal.value_or(0.0) + w.mono * b.mono.value_or(0.0) +
            w.perc * b.perc.value_or(0.0);
  return b.total;
}

/// PSNR and SSIM of a rendering against ground truth.
struct Metrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const ImageD& img, const ImageD& gt) {
  if (!img.same_shape(gt)) throw Error("psnr: image size mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) mse += (img.data[i] - gt.data[i]) * (img.data[i] - gt.data[i]);
  mse /= static_cast<double>(img.data.size());
  return mse > 0.0 ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)) : kPsnrCap;
}

/// PSNR restricted to pixels with mask set; 99 for an empty mask.
inline double masked_psnr(const ImageD& img, const ImageD& gt, const std::vector<uint8_t>& mask) {
  if (!img.same_shape(gt) || mask.size() != static_cast<size_t>(img.width) * img.height)
    throw Error("masked_psnr: size mismatch");
  double se = 0.0;
  size_t n = 0;
  for (size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    for (int c = 0; c < img.channels; ++c) {
      const double d = img.data[p * img.channels + c] - gt.data[p * img.channels + c];
      se += d * d;
      ++n;
    }
  }
  if (n == 0 || se == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(n / se));
}

inline Metrics eval_metrics(const ImageD& img, const ImageD& gt) { return {psnr(img, gt), ssim(img, gt)}; }

}  // namespace rtgs
