#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "rtgs/oracles.hpp"
#include "rtgs/raytracer.hpp"
#include "test_support.hpp"

using namespace rtgs;
using rtgs::test::make_set;

namespace {

GaussianSet random_cloud(int count, uint64_t seed, Role role = Role::Reflection) {
  Aabb box{{-1, -1, -1}, {1, 1, 1}};
  GaussianSet s = init_random_in_bbox(box, count, role, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : s.primitives) {
    p.log_scale = {std::log(0.15 + 0.1 * u(rng)), std::log(0.15 + 0.1 * u(rng))};
    p.opacity_logit = 1.5 * u(rng);
    p.sh[0] = {u(rng), u(rng), u(rng)};
  }
  return s;
}

Ray random_ray(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const Vec3 o = normalize(Vec3{nd(rng), nd(rng), nd(rng)}) * 3.0;
  const Vec3 target{u(rng), u(rng), u(rng)};
  return {o, normalize(target - o), 0.0, std::numeric_limits<double>::infinity(), -1};
}

}  // namespace

TEST(Bvh, SinglePrimitiveIsOneLeaf) {
  const auto s = random_cloud(1, 3);
  const auto b = build_bvh(s);
  ASSERT_EQ(b.nodes.size(), 1u);
  EXPECT_TRUE(b.nodes[0].leaf());
  EXPECT_EQ(b.nodes[0].count, 1);
}

TEST(Bvh, StructuralInvariants) {
  const auto s = random_cloud(1000, 4);
  const auto b = build_bvh(s);
  std::vector<int> seen(s.size(), 0);
  for (const auto& n : b.nodes) {
    if (n.leaf()) {
      EXPECT_LE(n.count, kBvhLeafSize);
      for (int k = n.first; k < n.first + n.count; ++k) {
        ++seen[b.indices[k]];
        const auto& f = b.prepared[b.indices[k]]->frame;
        const Aabb pb = splat_bounds(f, b.means[b.indices[k]]);
        EXPECT_TRUE(n.box.contains(pb.lo) && n.box.contains(pb.hi));
      }
    } else {
      for (int c : {n.left, n.right}) {
        EXPECT_TRUE(n.box.contains(b.nodes[c].box.lo));
        EXPECT_TRUE(n.box.contains(b.nodes[c].box.hi));
      }
    }
  }
  for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Bvh, EmptySetTracesNothing) {
  const GaussianSet s(Role::Reflection);
  const auto b = build_bvh(s);
  EXPECT_TRUE(b.empty());
  const auto r = trace_composite({{0, 0, 0}, {0, 0, 1}}, b, s);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_EQ(r.color, Vec3{});
}

TEST(Trace, MissAndSingleOpaqueSplat) {
  SplatParams p;
  p.mean = {0, 0, 2};
  p.log_scale = {std::log(0.5), std::log(0.5)};
  p.opacity_logit = 30.0;
  p.sh[0] = (Vec3{0.2, 0.6, 1.0} - Vec3::splat(0.5)) / kShC0;
  const auto s = make_set(Role::Reflection, {p});
  const auto b = build_bvh(s);
  EXPECT_EQ(trace_composite({{5, 0, 0}, {0, 0, 1}}, b, s).alpha, 0.0);
  const auto r = trace_composite({{0, 0, 0}, {0, 0, 1}}, b, s);
  EXPECT_NEAR(r.depth, 2.0, 1e-12);
  EXPECT_NEAR(r.alpha, 0.99, 1e-12);
  EXPECT_NEAR(norm(r.color - Vec3{0.2, 0.6, 1.0} * 0.99), 0.0, 1e-12);
}

TEST(Trace, BvhMatchesBruteForceFragments) {
  const auto s = random_cloud(100, 5);
  const auto b = build_bvh(s);
  std::mt19937_64 rng(6);
  std::vector<RayHit> hits;
  int nonempty = 0;
  for (int i = 0; i < 1000; ++i) {
    const Ray ray = random_ray(rng);
    collect_hits(ray, b, hits);
    const auto ref = brute_ray_fragments(s, ray.origin, ray.dir, ray.t_min, ray.t_max);
    ASSERT_EQ(hits.size(), ref.size());
    for (size_t k = 0; k < ref.size(); ++k) {
      EXPECT_EQ(hits[k].id, ref[k].id);
      EXPECT_EQ(hits[k].hit.t, ref[k].t);
    }
    nonempty += !ref.empty();
    const auto r = trace_composite(ray, b, s);
    const auto o = brute_compose_oracle(ref, 1);
    EXPECT_NEAR(r.alpha, o.alpha, kTransmittanceEps);
    if (r.alpha > kMinDepthAlpha)
      EXPECT_NEAR(r.depth * r.alpha, o.value[0], 10 * kTransmittanceEps);
  }
  EXPECT_GT(nonempty, 500);
}

TEST(ReflectDirection, Cases) {
  const Vec3 n{0, 0, 1};
  EXPECT_EQ(*reflect_direction(n, n), n);
  const Vec3 wo = Vec3{0, 1, 1} / std::sqrt(2.0);
  EXPECT_LT(norm(*reflect_direction(wo, n) - Vec3{0, -1, 1} / std::sqrt(2.0)), 1e-15);
  EXPECT_FALSE(reflect_direction({1, 0, 0}, n));
}

TEST(ReflectDirection, PreservesLengthAndAngle) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 n = normalize(Vec3{nd(rng), nd(rng), nd(rng)});
    Vec3 wo = normalize(Vec3{nd(rng), nd(rng), nd(rng)});
    if (dot(n, wo) <= 0) wo = -wo;
    const auto r = reflect_direction(wo, n);
    ASSERT_TRUE(r);
    EXPECT_NEAR(norm(*r), 1.0, 1e-12);
    EXPECT_NEAR(dot(n, *r), dot(n, wo), 1e-12);
  }
}

TEST(ReflectDirection, BackwardMatchesFiniteDifferences) {
  const Vec3 wo = normalize(Vec3{0.2, 0.3, 1.0});
  Vec3 n = normalize(Vec3{-0.1, 0.2, 1.0});
  const Vec3 d{0.3, -0.7, 0.5};
  const Vec3 g = reflect_direction_backward_n(wo, n, d);
  for (int k = 0; k < 3; ++k) {
    Vec3 p = n, m = n;
    p[k] += 1e-6;
    m[k] -= 1e-6;
    const double fd = (dot(*reflect_direction(wo, p), d) - dot(*reflect_direction(wo, m), d)) / 2e-6;
    EXPECT_NEAR(g[k], fd, 1e-8);
  }
}

TEST(TransmitDirection, Identity) {
  EXPECT_EQ(transmit_direction({0, 0, 1}), (Vec3{0, 0, 1}));
  const Vec3 d = normalize(Vec3{0.3, -0.2, 0.9});
  EXPECT_LT(norm(transmit_direction(d) - d), 1e-15);
  EXPECT_LT(norm(transmit_direction({0, 0, 5}) - Vec3{0, 0, 1}), 1e-15);
}

TEST(TraceBackward, ZeroAdjointAndMissingCache) {
  const auto s = random_cloud(20, 8);
  const auto b = build_bvh(s);
  std::mt19937_64 rng(9);
  std::vector<Ray> rays;
  for (int i = 0; i < 50; ++i) rays.push_back(random_ray(rng));
  const auto c = trace_batch(rays, b, s);
  const std::vector<TraceAdjoint> adj(rays.size());
  const auto g = trace_backward(s, b, c, adj);
  for (const auto& gi : g.params) EXPECT_EQ(gi, zero_grad());
  for (const auto& d : g.d_origin) EXPECT_EQ(d, Vec3{});
  EXPECT_THROW(trace_backward(s, b, TraceCache{}, adj), Error);
}

namespace {

struct TraceProblem {
  GaussianSet set;
  std::vector<Ray> rays;
  std::vector<TraceAdjoint> adj;
};

double trace_objective(const GaussianSet& s, const std::vector<Ray>& rays,
                       const std::vector<TraceAdjoint>& adj) {
  const auto b = build_bvh(s);
  const auto c = trace_batch(rays, b, s);
  double v = 0.0;
  for (size_t i = 0; i < rays.size(); ++i)
    v += dot(c.results[i].color, adj[i].d_color) + c.results[i].depth * adj[i].d_depth +
         c.results[i].alpha * adj[i].d_alpha;
  return v;
}

}  // namespace

TEST(TraceBackward, ParametersMatchFiniteDifferences) {
  for (int degree : {0, 3}) {
    GaussianSet s = random_cloud(15, 10);
    GaussianSet set(Role::Reflection, degree);
    set.primitives = s.primitives;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& p : set.primitives)
      for (int k = 1; k < 16; ++k) p.sh[k] = {0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)};
    std::vector<Ray> rays;
    std::vector<TraceAdjoint> adj;
    for (int i = 0; i < 200; ++i) {
      rays.push_back(random_ray(rng));
      adj.push_back({{u(rng), u(rng), u(rng)}, u(rng), u(rng)});
    }
    const auto b = build_bvh(set);
    const auto g = trace_backward(set, b, trace_batch(rays, b, set), adj);
    const auto analytic = flatten_params(g.params);
    auto f = [&](std::span<const double> x) {
      auto t = set;
      unflatten_params(x, t.primitives);
      return trace_objective(t, rays, adj);
    };
    const auto fd = fd_gradient_oracle(f, flatten_params(set.primitives), 1e-5);
    const auto chk = compare_gradients(analytic, fd, 1e-6);
    EXPECT_LT(chk.max_rel_error, 5e-3) << "degree " << degree << " worst " << chk.worst << " a "
                                       << analytic[chk.worst] << " fd " << fd.numeric[chk.worst];
  }
}

TEST(TraceBackward, RayOriginAndDirectionMatchFiniteDifferences) {
  const auto s = random_cloud(20, 12);
  const auto b = build_bvh(s);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    Ray ray = random_ray(rng);
    const TraceAdjoint a{{u(rng), u(rng), u(rng)}, u(rng), u(rng)};
    const auto c = trace_batch({ray}, b, s);
    if (c.results[0].alpha < 1e-3) continue;
    const auto g = trace_backward(s, b, c, std::vector<TraceAdjoint>{a});
    std::vector<double> x{ray.origin.x, ray.origin.y, ray.origin.z, ray.dir.x, ray.dir.y, ray.dir.z};
    auto f = [&](std::span<const double> v) {
      Ray r = ray;
      r.origin = {v[0], v[1], v[2]};
      r.dir = {v[3], v[4], v[5]};
      const auto res = trace_batch({r}, b, s).results[0];
      return dot(res.color, a.d_color) + res.depth * a.d_depth + res.alpha * a.d_alpha;
    };
    const auto fd = fd_gradient_oracle(f, x, 1e-6);
    const std::vector<double> an{g.d_origin[0].x, g.d_origin[0].y, g.d_origin[0].z,
                                 g.d_dir[0].x,    g.d_dir[0].y,    g.d_dir[0].z};
    EXPECT_LT(compare_gradients(an, fd, 1e-6).max_rel_error, 5e-3);
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(TraceBackward, DeterministicAcrossRuns) {
  const auto s = random_cloud(60, 14);
  const auto b = build_bvh(s);
  std::mt19937_64 rng(15);
  std::vector<Ray> rays;
  std::vector<TraceAdjoint> adj;
  for (int i = 0; i < 500; ++i) {
    rays.push_back(random_ray(rng));
    adj.push_back({{1, 0.5, 0.25}, 0.1, 0.2});
  }
  const auto g1 = trace_backward(s, b, trace_batch(rays, b, s), adj);
  const auto g2 = trace_backward(s, b, trace_batch(rays, b, s), adj);
  EXPECT_EQ(g1.params, g2.params);
  EXPECT_EQ(g1.d_dir, g2.d_dir);
}
