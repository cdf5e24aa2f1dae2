#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rtgs/checkpoint.hpp"
#include "rtgs/scene_io.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace rtgs;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rtgs_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SceneBundle small_bundle(bool masks) {
  SceneBundle b;
  b.bbox.lo = {-1, -1, -1};
  b.bbox.hi = {1, 1, 1};
  for (int i = 0; i < 2; ++i) {
    SceneView v;
    v.camera = look_at({3.0 * (i ? 1 : -1), 0.5, 3.0}, {0, 0, 0}, {0, -1, 0}, 8, 6, 0.8);
    v.image = ImageF(8, 6, 3);
    for (size_t k = 0; k < v.image.data.size(); ++k) v.image.data[k] = static_cast<float>(k % 17) / 16.0f;
    if (masks) {
      v.mask = std::vector<uint8_t>(48, 0);
      for (int k = 0; k < 48; k += 3) (*v.mask)[k] = 1;
      v.mono_normals = std::vector<Vec3>(48, Vec3{});
      (*v.mono_normals)[5] = normalize(Vec3{1, 2, 3});
    }
    b.views.push_back(v);
  }
  b.points = {{{0.1, 0.2, 0.3}, {1.0, 0.5, 0.0}}, {{-0.5, 0.25, 0.125}, {0.0, 0.0, 1.0}}};
  return b;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(SceneIo, SaveLoadRoundTrip) {
  const auto dir = temp_dir("scene_rt");
  const auto b = small_bundle(true);
  save_scene(dir, b);
  const auto r = load_scene(dir);
  ASSERT_EQ(r.views.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r.views[i].camera, b.views[i].camera) << "view " << i;
    EXPECT_EQ(r.views[i].image, b.views[i].image) << "view " << i;
    EXPECT_EQ(r.views[i].mask, b.views[i].mask) << "view " << i;
    ASSERT_TRUE(r.views[i].mono_normals.has_value());
    for (size_t k = 0; k < 48; ++k)
      EXPECT_LT(norm((*r.views[i].mono_normals)[k] - (*b.views[i].mono_normals)[k]), 1e-7);  // float storage
  }
  ASSERT_EQ(r.points.size(), b.points.size());
  for (size_t i = 0; i < b.points.size(); ++i) {
    EXPECT_EQ(r.points[i].position, b.points[i].position);
    EXPECT_EQ(r.points[i].color, b.points[i].color);
  }
  EXPECT_EQ(r.bbox.lo, b.bbox.lo);
  EXPECT_EQ(r.bbox.hi, b.bbox.hi);
  EXPECT_TRUE(r.notes.empty());
}

TEST(SceneIo, MissingMaskFileIsAbsent) {
  const auto dir = temp_dir("scene_nomask");
  save_scene(dir, small_bundle(true));
  fs::remove(dir / "mask_1.png");
  const auto r = load_scene(dir);
  EXPECT_TRUE(r.views[0].mask.has_value());
  EXPECT_FALSE(r.views[1].mask.has_value());
  ASSERT_FALSE(r.notes.empty());
  EXPECT_NE(r.notes[0].find("mask"), std::string::npos);
}

TEST(SceneIo, SizeMismatchNamesView) {
  const auto dir = temp_dir("scene_size");
  save_scene(dir, small_bundle(false));
  write_pfm(dir / "image_1.pfm", ImageF(5, 5, 3));
  try {
    load_scene(dir);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("view 1"), std::string::npos) << e.what();
  }
}

TEST(SceneIo, MalformedJsonNamesFile) {
  const auto dir = temp_dir("scene_json");
  write_text(dir / "scene.json", "{\"views\": [");
  try {
    load_scene(dir);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("scene.json"), std::string::npos) << e.what();
  }
}

TEST(SceneIo, NonUnitNormalRejected) {
  const auto dir = temp_dir("scene_normal");
  auto b = small_bundle(true);
  (*b.views[0].mono_normals)[7] = {0.5, 0.0, 0.0};
  save_scene(dir, b);
  EXPECT_THROW(load_scene(dir), Error);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  auto ps = test::random_splats(5, 3);
  const auto before = ps;
  AdamMoments mom(ps.size());
  const auto rates = group_rates({}, 1.0, 0, 100);
  for (int step = 1; step <= 3; ++step)
    adam_update(ps, std::vector<SplatGrad>(ps.size(), zero_grad()), mom, rates, step);
  EXPECT_EQ(ps, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto ps = test::random_splats(1, 4);
  const auto before = ps;
  auto g = zero_grad();
  g.mean = {2.0, -3.0, 0.0};
  g.opacity_logit = -0.5;
  AdamMoments mom(1);
  LearningRates lr;
  const auto rates = group_rates(lr, 2.0, 0, 100);
  adam_update(ps, {g}, mom, rates, 1);
  EXPECT_NEAR(ps[0].mean.x - before[0].mean.x, -lr.position * 2.0, 1e-12);
  EXPECT_NEAR(ps[0].mean.y - before[0].mean.y, lr.position * 2.0, 1e-12);
  EXPECT_EQ(ps[0].mean.z, before[0].mean.z);
  EXPECT_NEAR(ps[0].opacity_logit - before[0].opacity_logit, lr.opacity, 1e-12);
}

TEST(Adam, PositionRateDecays) {
  LearningRates lr;
  const auto r0 = group_rates(lr, 1.0, 0, 1000);
  const auto r1 = group_rates(lr, 1.0, 1000, 1000);
  EXPECT_DOUBLE_EQ(r0[0], lr.position);
  EXPECT_NEAR(r1[0], lr.position * lr.position_final_factor, 1e-15);
}

TEST(Adam, ShapeMismatchThrows) {
  auto ps = test::random_splats(3, 5);
  AdamMoments mom(3);
  EXPECT_THROW(adam_update(ps, std::vector<SplatGrad>(2, zero_grad()), mom, {}, 1), Error);
  AdamMoments small(2);
  EXPECT_THROW(adam_update(ps, std::vector<SplatGrad>(3, zero_grad()), small, {}, 1), Error);
}

TEST(Schedule, StagesAtFullScale) {
  ScheduleConfig cfg;
  cfg.validate();
  const auto s0 = schedule_stage(0, cfg);
  EXPECT_EQ(s0.stage, 1);
  EXPECT_FALSE(s0.reflection);
  EXPECT_FALSE(s0.transmission);
  EXPECT_FALSE(s0.loss_spec);
  const auto s3000 = schedule_stage(3000, cfg);
  EXPECT_EQ(s3000.stage, 2);
  EXPECT_TRUE(s3000.reflection);
  EXPECT_TRUE(s3000.loss_spec);
  const auto s20000 = schedule_stage(20000, cfg);
  EXPECT_EQ(s20000.stage, 3);
  EXPECT_TRUE(s20000.extract_mesh);
  EXPECT_TRUE(s20000.transmission);
  EXPECT_FALSE(s20000.loss_depth);
  const auto s45000 = schedule_stage(45000, cfg);
  EXPECT_EQ(s45000.stage, 3);
  EXPECT_FALSE(s45000.extract_mesh);
  EXPECT_TRUE(s45000.loss_depth);
  EXPECT_EQ(cfg.total_steps(), 60000);
}

TEST(Schedule, ScaleAndAblations) {
  ScheduleConfig cfg;
  cfg.scale = 0.05;
  cfg.validate();
  EXPECT_EQ(cfg.total_steps(), 3000);
  EXPECT_EQ(schedule_stage(149, cfg).stage, 1);
  EXPECT_EQ(schedule_stage(150, cfg).stage, 2);
  EXPECT_TRUE(schedule_stage(1000, cfg).extract_mesh);
  EXPECT_TRUE(schedule_stage(2000, cfg).loss_depth);
  cfg.ablate.no_depth_loss = true;
  cfg.ablate.no_spec_loss = true;
  EXPECT_FALSE(schedule_stage(2500, cfg).loss_depth);
  EXPECT_FALSE(schedule_stage(2500, cfg).loss_spec);
  ScheduleConfig bad;
  bad.scale = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad.scale = 1.0;
  bad.bounds.raster_only = 30000;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Densify, ZeroGradientsOnlyPrune) {
  auto set = test::make_set(Role::Diffuse, test::random_splats(10, 6));
  set.primitives[3].opacity_logit = logit(1e-3);
  AdamMoments mom(set.size());
  mom.m[4].mean = {1, 2, 3};
  GradStats stats(set.size());
  stats.add(std::vector<SplatGrad>(set.size(), zero_grad()));
  EXPECT_EQ(stats.count[0], 0);
  const auto before = set.primitives;
  const int changes = densify_prune(set, mom, stats, {}, 10.0);
  EXPECT_EQ(changes, 1);
  ASSERT_EQ(set.size(), 9u);
  EXPECT_EQ(set.primitives[3], before[4]);
  EXPECT_EQ(mom.m[3].mean, (Vec3{1, 2, 3}));
  EXPECT_EQ(mom.size(), set.size());
  EXPECT_EQ(stats.size(), set.size());
}

TEST(Densify, CloneSmallSplitLarge) {
  auto ps = test::random_splats(2, 7);
  ps[0].log_scale = {std::log(0.01), std::log(0.01)};
  ps[1].log_scale = {std::log(0.5), std::log(0.2)};
  auto set = test::make_set(Role::Diffuse, ps);
  AdamMoments mom(2);
  GradStats stats(2);
  std::vector<SplatGrad> g(2, zero_grad());
  g[0].mean = {1e-2, 0, 0};
  g[1].mean = {0, 1e-2, 0};
  stats.add(g);
  DensifyConfig cfg;
  const int changes = densify_prune(set, mom, stats, cfg, 10.0);  // threshold 0.1
  EXPECT_EQ(changes, 2);
  ASSERT_EQ(set.size(), 4u);
  EXPECT_EQ(set.primitives[0], ps[0]);
  EXPECT_EQ(set.primitives[1], ps[0]);
  EXPECT_LT(set.primitives[2].log_scale[0], ps[1].log_scale[0]);
  EXPECT_EQ(set.primitives[2].log_scale[1], ps[1].log_scale[1]);
  EXPECT_NEAR(norm(set.primitives[2].mean - set.primitives[3].mean), 0.5, 1e-9);
  EXPECT_EQ(mom.size(), 4u);
}

TEST(Densify, SplitPreservesLocalAppearance) {
  // One splat facing an axis camera, rendered before and after a split.
  SplatParams p;
  p.mean = {0, 0, 3};
  p.tangent_u = {1, 0, 0};
  p.tangent_v = {0, 1, 0};
  p.log_scale = {std::log(0.3), std::log(0.12)};
  p.opacity_logit = logit(0.3);
  p.sh[0] = {1.5, 0.5, -0.5};
  const auto cam = test::axis_camera(64, 64, 80.0);
  const auto render = [&](std::vector<SplatParams> ps) {
    return rasterize_maps(test::make_set(Role::Diffuse, std::move(ps)), cam).maps.color;
  };
  const auto a = render({p});
  const auto halves = split_splat(p);
  const auto b = render({halves[0], halves[1]});
  double se = 0.0, peak = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      se += (a[i][c] - b[i][c]) * (a[i][c] - b[i][c]);
      peak = std::max(peak, a[i][c]);
    }
  }
  const double mse = se / (3.0 * a.size());
  const double psnr = 10.0 * std::log10(peak * peak / mse);
  EXPECT_GT(psnr, 40.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TrainState s;
  s.step = 1234;
  s.seed = 99;
  s.schedule.scale = 0.05;
  s.schedule.ablate.no_mesh_guide = true;
  s.ray_eps = 1.7e-3;
  s.bbox.lo = {-1, -2, -3};
  s.bbox.hi = {1, 2, 3};
  s.cameras = {test::axis_camera(8, 6, 10.0), look_at({1, 2, 3}, {0, 0, 0}, {0, -1, 0}, 8, 6, 0.7)};
  s.masks = {std::vector<uint8_t>(48, 1), std::nullopt};
  s.sets.diffuse = test::make_set(Role::Diffuse, test::random_splats(7, 1));
  s.sets.reflection = test::make_set(Role::Reflection, test::random_splats(3, 2));
  s.sets.transmittance = test::make_set(Role::Transmittance, {});
  for (int k = 0; k < 3; ++k) {
    s.moments[k] = AdamMoments(s.set(k).size());
    s.stats[k] = GradStats(s.set(k).size());
  }
  s.moments[0].v[2].sh[5] = {1e-300, -0.0, 3.5};
  s.stats[1].accum[1] = 0.25;
  s.stats[1].count[1] = 4;
  MeshData md;
  md.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  md.triangles = {{0, 1, 2}};
  s.mesh = TriangleMesh(md);

  const auto dir = temp_dir("ckpt");
  save_checkpoint(s, dir / "a.ckpt");
  const auto r = load_checkpoint(dir / "a.ckpt");
  EXPECT_TRUE(r == s);
  save_checkpoint(r, dir / "b.ckpt");
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(ba, bb);
}

TEST(Checkpoint, TruncationAndVersionErrors) {
  TrainState s;
  s.sets.diffuse = test::make_set(Role::Diffuse, test::random_splats(4, 1));
  s.moments[0] = AdamMoments(4);
  s.stats[0] = GradStats(4);
  const auto dir = temp_dir("ckpt_bad");
  save_checkpoint(s, dir / "a.ckpt");
  std::ifstream f(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});

  std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  try {
    load_checkpoint(dir / "t.ckpt");
    FAIL() << "expected truncation error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }

  std::string v2 = bytes;
  v2[8] = 2;
  std::ofstream(dir / "v.ckpt", std::ios::binary) << v2;
  try {
    load_checkpoint(dir / "v.ckpt");
    FAIL() << "expected version error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }

  std::ofstream(dir / "m.ckpt", std::ios::binary) << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), Error);
}
