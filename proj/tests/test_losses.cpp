#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rtgs/losses.hpp"
#include "rtgs/oracles.hpp"

using namespace rtgs;

namespace {

ImageD random_image(int w, int h, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ImageD img(w, h, 3);
  for (double& v : img.data) v = u(rng);
  return img;
}

// Straight 2D-window SSIM: 11x11 Gaussian, sigma 1.5, zero outside the image.
double ssim_oracle(const ImageD& x, const ImageD& y) {
  double wsum = 0.0;
  std::vector<double> g(11);
  for (int i = 0; i < 11; ++i) wsum += g[i] = std::exp(-(i - 5) * (i - 5) / 4.5);
  double total = 0.0;
  for (int c = 0; c < x.channels; ++c)
    for (int py = 0; py < x.height; ++py)
      for (int px = 0; px < x.width; ++px) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int sx = px + dx, sy = py + dy;
            if (sx < 0 || sy < 0 || sx >= x.width || sy >= x.height) continue;
            const double w = g[dx + 5] * g[dy + 5] / (wsum * wsum);
            const double a = x.at(sx, sy, c), b = y.at(sx, sy, c);
            mx += w * a;
            my += w * b;
            xx += w * a * a;
            yy += w * b * b;
            xy += w * a * b;
          }
        const double c1 = 1e-4, c2 = 9e-4;
        total += (2 * mx * my + c1) * (2 * (xy - mx * my) + c2) /
                 ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
      }
  return total / (x.width * x.height * x.channels);
}

template <typename F>
void expect_gradient(F&& f, const std::vector<double>& x, const std::vector<double>& analytic, double step = 1e-6) {
  const auto fd = fd_gradient_oracle(f, x, step);
  const auto chk = compare_gradients(analytic, fd, 1e-9);
  EXPECT_LT(chk.max_rel_error, 1e-4) << "worst coordinate " << chk.worst;
  EXPECT_GT(chk.compared, 0);
}

}  // namespace

TEST(Ssim, MatchesDirectWindowOracle) {
  const auto x = random_image(13, 9, 1), y = random_image(13, 9, 2);
  EXPECT_NEAR(ssim(x, y), ssim_oracle(x, y), 1e-12);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, SizeMismatchThrows) {
  EXPECT_THROW(ssim(ImageD(4, 4, 3), ImageD(4, 5, 3)), Error);
  EXPECT_THROW(loss_rgb(ImageD(4, 4, 3), ImageD(5, 4, 3)), Error);
}

TEST(LossRgb, FixedPointOffsetAndSymmetry) {
  const auto gt = random_image(12, 10, 3);
  EXPECT_EQ(loss_rgb(gt, gt).value, 0.0);
  ImageD flat(12, 10, 3, 0.4), shifted(12, 10, 3, 0.5);
  const double l = loss_rgb(shifted, flat).value;
  EXPECT_NEAR(l, 0.8 * 0.1 + 0.2 * (1.0 - ssim_oracle(shifted, flat)) / 2.0, 1e-12);
  const auto a = random_image(12, 10, 4);
  EXPECT_NEAR(loss_rgb(a, gt).value, loss_rgb(gt, a).value, 1e-14);
}

TEST(LossRgb, GradientMatchesFiniteDifferences) {
  const auto img = random_image(9, 8, 5), gt = random_image(9, 8, 6);
  const auto g = loss_rgb(img, gt);
  auto f = [&](std::span<const double> x) {
    ImageD i = img;
    i.data.assign(x.begin(), x.end());
    return loss_rgb(i, gt).value;
  };
  expect_gradient(f, img.data, g.grad.data);
}

TEST(LossSpec, Examples) {
  EXPECT_EQ(loss_spec(std::vector<double>(6, 0.95), std::vector<uint8_t>(6, 1), 0.9).value, 0.0);
  EXPECT_NEAR(loss_spec({0.5}, {1}, 0.9).value, 0.4, 1e-12);
  EXPECT_EQ(loss_spec({0.1, 0.2, 0.0}, {0, 0, 0}, 0.9).value, 0.0);
}

TEST(LossSpec, GradientPiecewiseLinearityAndMaskMonotonicity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> ks(50);
  std::vector<uint8_t> mask(50);
  for (size_t i = 0; i < ks.size(); ++i) {
    ks[i] = u(rng);
    mask[i] = u(rng) < 0.5;
  }
  const auto l = loss_spec(ks, mask, 0.9);
  expect_gradient([&](std::span<const double> x) { return loss_spec({x.begin(), x.end()}, mask, 0.9).value; }, ks, l.grad);
  // Doubling every ReLU argument doubles the value.
  std::vector<double> ks2(ks.size());
  for (size_t i = 0; i < ks.size(); ++i) ks2[i] = 0.9 - 2.0 * (0.9 - ks[i]);
  EXPECT_NEAR(loss_spec(ks2, mask, 0.9).value, 2.0 * l.value, 1e-12);
  auto bigger = mask;
  for (size_t i = 0; i < bigger.size(); i += 3) bigger[i] = 1;
  EXPECT_GE(loss_spec(ks, bigger, 0.9).value, l.value);
}

TEST(LossDepth, Examples) {
  using O = std::optional<double>;
  EXPECT_EQ(loss_depth({O(1.0), O(2.0)}, {O(1.0), O(2.0)}, {1, 1}).value, 0.0);
  EXPECT_NEAR(loss_depth({O(1.3)}, {O(1.2)}, {1}).value, 0.1, 1e-12);
  EXPECT_EQ(loss_depth({O(0.5), O(1.0)}, {O(1.0), O(1.5)}, {1, 1}).value, 0.0);
  // Absent entries count toward N_p but contribute nothing.
  EXPECT_NEAR(loss_depth({O(1.3), std::nullopt, O(2.0)}, {O(1.2), O(1.0), std::nullopt}, {1, 1, 1}).value,
              0.1 / 3.0, 1e-12);
}

TEST(LossDepth, GradientAndMaskMonotonicity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const size_t n = 40;
  std::vector<double> d(n);
  std::vector<std::optional<double>> back(n);
  std::vector<uint8_t> mask(n);
  for (size_t i = 0; i < n; ++i) {
    d[i] = u(rng);
    if (i % 7) back[i] = u(rng);
    mask[i] = u(rng) < 1.2;
  }
  auto wrap = [](std::span<const double> x) { return std::vector<std::optional<double>>(x.begin(), x.end()); };
  const auto l = loss_depth(wrap(d), back, mask);
  expect_gradient([&](std::span<const double> x) { return loss_depth(wrap(x), back, mask).value; }, d, l.grad);
  std::vector<uint8_t> all(n, 1);
  EXPECT_GE(loss_depth(wrap(d), back, all).value, l.value);
}

TEST(LossNormal, ExamplesAndCoverage) {
  const Vec3 z{0, 0, 1}, x{1, 0, 0};
  EXPECT_EQ(loss_normal({z, x}, {z, x}, {1, 1}).value, 0.0);
  EXPECT_NEAR(loss_normal({z}, {-z}, {1}).value, 2.0, 1e-15);
  EXPECT_NEAR(loss_normal({z, z}, {x, z}, {1, 1}).value, 0.5, 1e-15);
  EXPECT_EQ(loss_normal({z}, {-z}, {kCoverageThreshold}).value, 0.0);
}

TEST(LossNormal, GradientsBothArguments) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  const size_t n = 12;
  std::vector<Vec3> a(n), b(n);
  std::vector<double> cov(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = normalize({nd(rng), nd(rng), nd(rng)});
    b[i] = normalize({nd(rng), nd(rng), nd(rng)});
    cov[i] = i % 4 ? 0.5 : 0.0;
  }
  const auto l = loss_normal(a, b, cov);
  auto flat = [](const std::vector<Vec3>& v) {
    std::vector<double> o;
    for (const auto& e : v) o.insert(o.end(), {e.x, e.y, e.z});
    return o;
  };
  auto unflat = [](std::span<const double> x) {
    std::vector<Vec3> o;
    for (size_t i = 0; i < x.size(); i += 3) o.push_back({x[i], x[i + 1], x[i + 2]});
    return o;
  };
  expect_gradient([&](std::span<const double> x) { return loss_normal(unflat(x), b, cov).value; }, flat(a), flat(l.grad_n));
  expect_gradient([&](std::span<const double> x) { return loss_normal(a, unflat(x), cov).value; }, flat(b), flat(l.grad_ref));
  const auto m = loss_mono(a, &b);
  expect_gradient([&](std::span<const double> x) { return loss_mono(unflat(x), &b).value; }, flat(a), flat(m.grad_n));
}

TEST(LossMono, ExamplesAndUndefinedPixels) {
  const Vec3 z{0, 0, 1};
  const std::vector<Vec3> mono{z};
  EXPECT_EQ(loss_mono({z}, &mono).value, 0.0);
  EXPECT_EQ(loss_mono({z}, nullptr).value, 0.0);
  const std::vector<Vec3> anti{-z};
  EXPECT_NEAR(loss_mono({z}, &anti).value, 2.0, 1e-15);
  const std::vector<Vec3> holes{Vec3{}, -z};
  EXPECT_NEAR(loss_mono({z, z}, &holes).value, 1.0, 1e-15);
}

TEST(LossPerc, FixedPointsShiftInvarianceAndGradient) {
  const auto gt = random_image(11, 9, 12);
  EXPECT_EQ(loss_perc_substitute(gt, gt, true).value, 0.0);
  ImageD shifted = gt;
  for (double& v : shifted.data) v += 0.25;
  EXPECT_NEAR(loss_perc_substitute(shifted, gt, true).value, 0.0, 1e-14);
  const auto img = random_image(11, 9, 13);
  EXPECT_EQ(loss_perc_substitute(img, gt, false).value, 0.0);
  const auto l = loss_perc_substitute(img, gt, true);
  EXPECT_GT(l.value, 0.0);
  auto f = [&](std::span<const double> x) {
    ImageD i = img;
    i.data.assign(x.begin(), x.end());
    return loss_perc_substitute(i, gt, true).value;
  };
  expect_gradient(f, img.data, l.grad.data);
}

TEST(TotalLoss, WeightedSumAndNonFiniteTerm) {
  const LossWeights w;
  LossBreakdown zero{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  EXPECT_EQ(total_loss(zero, w), 0.0);
  LossBreakdown only;
  only.rgb = 1.0;
  EXPECT_EQ(total_loss(only, w), 1.0);
  LossBreakdown b;
  b.rgb = 0.5;
  b.spec = 0.1;
  EXPECT_NEAR(total_loss(b, w), 0.52, 1e-15);
  EXPECT_EQ(b.total, total_loss(b, w));
  LossBreakdown bad;
  bad.rgb = 0.1;
  bad.depth = std::nan("");
  try {
    total_loss(bad, w);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
}

TEST(Metrics, PsnrExamples) {
  const auto a = random_image(8, 8, 14);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(eval_metrics(a, a).ssim, 1.0, 1e-12);
  ImageD b = a;
  for (double& v : b.data) v += 0.1;
  EXPECT_NEAR(psnr(b, a), 20.0, 1e-9);
  EXPECT_NEAR(psnr(ImageD(4, 4, 3, 0.0), ImageD(4, 4, 3, 1.0)), 0.0, 1e-15);
  std::vector<uint8_t> mask(64, 0);
  EXPECT_EQ(masked_psnr(b, a, mask), kPsnrCap);
  mask[3] = 1;
  EXPECT_NEAR(masked_psnr(b, a, mask), 20.0, 1e-9);
  EXPECT_THROW(psnr(a, ImageD(8, 7, 3)), Error);
}
