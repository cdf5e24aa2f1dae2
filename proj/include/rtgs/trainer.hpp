#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rtgs/checkpoint.hpp"
#include "rtgs/depth_normals.hpp"
#include "rtgs/losses.hpp"
#include "rtgs/scene_io.hpp"
#include "rtgs/tsdf.hpp"

namespace rtgs {

struct TrainConfig {
  ScheduleConfig schedule;
  LearningRates lr;
  AdamConfig adam;
  DensifyConfig densify;
  LossWeights weights;
  uint64_t seed = 0;
  int reflection_count = 2000;
  int transmittance_count = 2000;
  double ray_eps_fraction = 1e-3;  // of the bbox diagonal
  double tsdf_tau_voxels = 4.0;
  int checkpoint_every = 0;        // 0: final checkpoint only
  SortMode sort = SortMode::CenterDepth;
  std::filesystem::path out_dir;   // empty: write nothing
};

struct StepLog {
  int step = 0;
  int stage = 1;
  int view = 0;
  LossBreakdown loss;
  std::array<size_t, 3> counts{};
};

struct ViewMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> masked_psnr;
};

struct MetricsSummary {
  std::vector<ViewMetrics> views;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> masked_psnr;  // mean over views with a non-empty mask
};

/// View index for `step`: one fresh permutation of the views per epoch, drawn
/// from the seed alone so resumed runs agree with uninterrupted ones.
inline int sample_view(uint64_t seed, int step, int view_count) {
  const int epoch = step / view_count;
  std::vector<int> order(view_count);
  for (int i = 0; i < view_count; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order[step % view_count];
}

/// Render switches for a given step of the run stored in `s`.
inline RenderFeatures render_features(const TrainState& s, int step, SortMode sort = SortMode::CenterDepth) {
  const auto f = schedule_stage(std::min(step, s.schedule.total_steps() - 1), s.schedule);
  RenderFeatures r;
  r.reflection = f.reflection;
  r.transmission = f.transmission;
  r.transmittance_set = !s.schedule.ablate.no_transmittance_set;
  r.mesh_guide = !s.schedule.ablate.no_mesh_guide;
  r.ray_eps = s.ray_eps;
  r.raster.sort = sort;
  return r;
}

/// TSDF fusion of the diffuse depth maps from every camera, then marching cubes.
inline TriangleMesh extract_scene_mesh(const GaussianSet& diffuse, const std::vector<Camera>& cams,
                                       const Aabb& bbox, double tau_voxels) {
  std::vector<DepthView> views;
  for (const auto& cam : cams) {
    auto r = rasterize_maps(diffuse, cam);
    views.push_back({cam, std::move(r.maps.depth), std::move(r.maps.alpha)});
  }
  const double voxel = default_voxel_size(bbox);
  return extract_mesh(fuse_tsdf(views, bbox, voxel, tau_voxels * voxel));
}

/// Pixels whose depth-normal stencil lies entirely on covered pixels keep
/// their coverage; the rest get 0 so empty background never feeds N_d.
inline std::vector<double> stencil_coverage(const std::vector<double>& alpha, int w, int h) {
  using namespace depth_normal_detail;
  std::vector<double> out(alpha.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const int sx = source_x(x, w), sy = source_y(y, h);
      if (sx < 0 || sy < 0) continue;
      const size_t s = static_cast<size_t>(sy) * w + sx;
      if (alpha[s] > kCoverageThreshold && alpha[s + 1] > kCoverageThreshold && alpha[s + w] > kCoverageThreshold)
        out[i] = alpha[i];
    }
  return out;
}

class Trainer {
 public:
  Trainer(const SceneBundle& scene, TrainConfig cfg) : scene_(scene), cfg_(std::move(cfg)) {
    cfg_.schedule.validate();
    validate_scene();
    auto& s = state_;
    s.seed = cfg_.seed;
    s.schedule = cfg_.schedule;
    s.bbox = scene.bbox;
    s.ray_eps = cfg_.ray_eps_fraction * scene.bbox.diagonal();
    for (const auto& v : scene.views) {
      s.cameras.push_back(v.camera);
      s.masks.push_back(v.mask);
    }
    s.sets.diffuse = init_diffuse_from_points(scene.points, cfg_.seed);
    s.sets.reflection = init_random_in_bbox(scene.bbox, cfg_.reflection_count, Role::Reflection, cfg_.seed + 1);
    s.sets.transmittance =
        init_random_in_bbox(scene.bbox, cfg_.transmittance_count, Role::Transmittance, cfg_.seed + 2);
    for (int k = 0; k < 3; ++k) {
      s.moments[k] = AdamMoments(s.set(k).size());
      s.stats[k] = GradStats(s.set(k).size());
    }
    load_ground_truth();
  }

  /// Resumes from a checkpoint of the same scene.
  Trainer(const SceneBundle& scene, TrainConfig cfg, TrainState resume)
      : scene_(scene), cfg_(std::move(cfg)), state_(std::move(resume)) {
    cfg_.schedule = state_.schedule;
    cfg_.seed = state_.seed;
    validate_scene();
    if (state_.cameras.size() != scene.views.size())
      throw Error("Trainer: checkpoint has " + std::to_string(state_.cameras.size()) + " views, scene has " +
                  std::to_string(scene.views.size()));
    load_ground_truth();
    if (state_.mesh) compute_depth_pairs();
  }

  const TrainState& state() const { return state_; }
  const std::vector<StepLog>& history() const { return history_; }
  const std::vector<std::string>& notes() const { return notes_; }
  bool done() const { return state_.step >= cfg_.schedule.total_steps(); }

  StepLog step() {
    auto& s = state_;
    const int total = cfg_.schedule.total_steps();
    const auto stage = schedule_stage(s.step, cfg_.schedule);
    if (stage.extract_mesh && !s.mesh) {
      s.mesh = extract_scene_mesh(s.sets.diffuse, s.cameras, s.bbox, cfg_.tsdf_tau_voxels);
      compute_depth_pairs();
    }
    StepLog log;
    log.step = s.step;
    log.stage = stage.stage;
    log.view = sample_view(s.seed, s.step, static_cast<int>(s.cameras.size()));
    const int v = log.view;
    const Camera& cam = s.cameras[v];
    const auto* mask = s.masks[v] ? &*s.masks[v] : nullptr;
    const RenderFeatures rf = render_features(s, s.step, cfg_.sort);
    static const std::vector<std::optional<double>> kNoDepth;
    const auto& d2 = rf.mesh_guide && !pairs_.empty() ? pairs_[v].d2 : kNoDepth;
    const ForwardState fs = render_forward(s.sets, cam, rf, mask, d2);
    const auto& mb = fs.raster.maps;
    const auto& w = cfg_.weights;

    PipelineAdjoints adj;
    const auto rgb = loss_rgb(fs.image, gt_[v], w.ssim_mix);
    log.loss.rgb = rgb.value;
    adj.d_image = rgb.grad;

    if (stage.loss_normal) {
      const auto nd = normal_from_depth(fs.surface_depth, cam);
      const auto ln = loss_normal(mb.normal, nd, stencil_coverage(mb.alpha, cam.width, cam.height));
      log.loss.normal = ln.value;
      adj.d_normal.resize(ln.grad_n.size());
      std::vector<Vec3> d_ref(ln.grad_ref.size());
      for (size_t i = 0; i < ln.grad_n.size(); ++i) {
        adj.d_normal[i] = ln.grad_n[i] * w.normal;
        d_ref[i] = ln.grad_ref[i] * w.normal;
      }
      adj.d_surface_depth = normal_from_depth_backward(fs.surface_depth, cam, d_ref);
    }
    if (stage.loss_mono) {
      const auto& mono = scene_.views[v].mono_normals;
      if (mono) {
        const auto lm = loss_mono(mb.normal, &*mono);
        log.loss.mono = lm.value;
        if (adj.d_normal.empty()) adj.d_normal.assign(lm.grad_n.size(), Vec3{});
        for (size_t i = 0; i < lm.grad_n.size(); ++i) adj.d_normal[i] += lm.grad_n[i] * w.mono;
      } else {
        note_once("view " + std::to_string(v) + ": no monocular normals, mono loss skipped");
      }
    }
    if (stage.loss_spec && mask) {
      const auto ls = loss_spec(mb.ks, *mask, w.k0);
      log.loss.spec = ls.value;
      adj.d_ks.resize(ls.grad.size());
      for (size_t i = 0; i < ls.grad.size(); ++i) adj.d_ks[i] = ls.grad[i] * w.spec;
    }
    if (stage.loss_depth && mask && !pairs_.empty() && rf.transmission) {
      const auto ld = loss_depth(fs.d_first, pairs_[v].d2, *mask);
      log.loss.depth = ld.value;
      adj.d_first.resize(ld.grad.size());
      for (size_t i = 0; i < ld.grad.size(); ++i) adj.d_first[i] = ld.grad[i] * w.depth;
    }
    if (stage.loss_perc) {
      const auto lp = loss_perc_substitute(fs.image, gt_[v], true);
      log.loss.perc = lp.value;
      for (size_t i = 0; i < lp.grad.data.size(); ++i) adj.d_image.data[i] += lp.grad.data[i] * w.perc;
    }
    try {
      total_loss(log.loss, w);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " at step " + std::to_string(s.step) + "; state dumped to " +
                  dump_on_failure().string());
    }

    const SceneGrads g = render_backward(s.sets, fs, adj);
    const std::vector<SplatGrad>* grads[3] = {&g.diffuse, &g.reflection, &g.transmittance};
    const int densify_until = static_cast<int>(cfg_.densify.until_fraction * total);
    const bool track = cfg_.densify.enabled && s.step < densify_until;
    const double scene_scale = s.bbox.diagonal();
    const auto rates = group_rates(cfg_.lr, scene_scale, s.step, total);
    for (int k = 0; k < 3; ++k) {
      if (grads[k]->empty()) continue;
      if (track) s.stats[k].add(*grads[k]);
      adam_update(s.set(k).primitives, *grads[k], s.moments[k], rates, s.step + 1, cfg_.adam);
    }
    ++s.step;
    if (track && s.step % cfg_.densify.interval == 0) {
      for (int k = 0; k < 3; ++k) {
        densify_prune(s.set(k), s.moments[k], s.stats[k], cfg_.densify, scene_scale);
        if (s.moments[k].size() != s.set(k).size() || s.stats[k].size() != s.set(k).size())
          throw Error("Trainer: optimizer buffers lost alignment after densification");
      }
    }
    for (int k = 0; k < 3; ++k) log.counts[k] = s.set(k).size();
    history_.push_back(log);
    if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && s.step % cfg_.checkpoint_every == 0)
      save_checkpoint(s, cfg_.out_dir / ("step_" + std::to_string(s.step) + ".ckpt"));
    return log;
  }

  void run() {
    while (!done()) step();
  }

  MetricsSummary evaluate() const { return evaluate_state(state_, scene_, pairs_, cfg_.sort); }

  /// Metrics of every view rendered with the features of the state's step.
  static MetricsSummary evaluate_state(const TrainState& s, const SceneBundle& scene,
                                       const std::vector<DepthPair>& pairs,
                                       SortMode sort = SortMode::CenterDepth) {
    if (s.cameras.size() != scene.views.size()) throw Error("evaluate: checkpoint and scene view counts differ");
    MetricsSummary out;
    const RenderFeatures rf = render_features(s, s.step, sort);
    int masked = 0;
    double masked_sum = 0.0;
    for (size_t v = 0; v < scene.views.size(); ++v) {
      const auto& view = scene.views[v];
      const auto* mask = view.mask ? &*view.mask : nullptr;
      static const std::vector<std::optional<double>> kNoDepth;
      const auto& d2 = rf.mesh_guide && v < pairs.size() ? pairs[v].d2 : kNoDepth;
      RenderFeatures f = rf;
      if (!mask) f.transmission = false;
      const auto fs = render_forward(s.sets, s.cameras[v], f, mask, d2);
      const ImageD gt = image_cast<double>(view.image);
      const auto m = eval_metrics(fs.image, gt);
      ViewMetrics vm{m.psnr, m.ssim, std::nullopt};
      if (mask && std::any_of(mask->begin(), mask->end(), [](uint8_t b) { return b != 0; })) {
        vm.masked_psnr = masked_psnr(fs.image, gt, *mask);
        masked_sum += *vm.masked_psnr;
        ++masked;
      }
      out.psnr += m.psnr / scene.views.size();
      out.ssim += m.ssim / scene.views.size();
      out.views.push_back(vm);
    }
    if (masked > 0) out.masked_psnr = masked_sum / masked;
    return out;
  }

  /// Depth pairs for rendering a checkpoint outside a training run.
  static std::vector<DepthPair> depth_pairs(const TrainState& s) {
    std::vector<DepthPair> out;
    if (!s.mesh) return out;
    for (const auto& cam : s.cameras) out.push_back(depth_first_second(*s.mesh, cam));
    return out;
  }

 private:
  void validate_scene() const {
    if (scene_.views.empty()) throw Error("Trainer: scene has no views");
    if (scene_.points.empty()) throw Error("Trainer: scene has no seed points");
    const auto probe = schedule_stage(cfg_.schedule.total_steps() - 1, cfg_.schedule);
    if (probe.transmission)
      for (size_t i = 0; i < scene_.views.size(); ++i)
        if (!scene_.views[i].mask)
          throw Error("Trainer: view " + std::to_string(i) + " has no transparency mask but stage 3 is scheduled");
  }

  void load_ground_truth() {
    gt_.clear();
    for (const auto& v : scene_.views) gt_.push_back(image_cast<double>(v.image));
  }

  void compute_depth_pairs() { pairs_ = depth_pairs(state_); }

  void note_once(const std::string& msg) {
    if (std::find(notes_.begin(), notes_.end(), msg) == notes_.end()) notes_.push_back(msg);
  }

  std::filesystem::path dump_on_failure() const {
    const auto dir = cfg_.out_dir.empty() ? std::filesystem::temp_directory_path() : cfg_.out_dir;
    const auto path = dir / ("failed_step_" + std::to_string(state_.step) + ".ckpt");
    save_checkpoint(state_, path);
    return path;
  }

  const SceneBundle& scene_;
  TrainConfig cfg_;
  TrainState state_;
  std::vector<ImageD> gt_;
  std::vector<DepthPair> pairs_;
  std::vector<StepLog> history_;
  std::vector<std::string> notes_;
};

// ---------------------------------------------------------------------------
// Log files.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& hist) {
  std::ofstream f(path);
  if (!f) throw Error("write_loss_csv: cannot open " + path.string());
  f << "step,stage,view,rgb,spec,depth,normal,mono,perc,total,n_diffuse,n_reflection,n_transmittance\n";
  const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& h : hist) {
    const auto& l = h.loss;
    f << h.step << ',' << h.stage << ',' << h.view << ',' << opt(l.rgb) << ',' << opt(l.spec) << ','
      << opt(l.depth) << ',' << opt(l.normal) << ',' << opt(l.mono) << ',' << opt(l.perc) << ','
      << format_double(l.total) << ',' << h.counts[0] << ',' << h.counts[1] << ',' << h.counts[2] << '\n';
  }
}

inline void write_metrics_csv(std::ostream& f, const MetricsSummary& m) {
  f << "view,psnr,ssim,masked_psnr\n";
  for (size_t i = 0; i < m.views.size(); ++i) {
    const auto& v = m.views[i];
    f << i << ',' << format_double(v.psnr) << ',' << format_double(v.ssim) << ','
      << (v.masked_psnr ? format_double(*v.masked_psnr) : std::string()) << '\n';
  }
  f << "mean," << format_double(m.psnr) << ',' << format_double(m.ssim) << ','
    << (m.masked_psnr ? format_double(*m.masked_psnr) : std::string()) << '\n';
}

struct TrainResult {
  TrainState state;
  std::vector<StepLog> history;
  MetricsSummary metrics;
  std::vector<std::string> notes;
};

/// Full run. With an output directory it writes losses.csv, metrics.csv and
/// final.ckpt there.
inline TrainResult train_loop(const SceneBundle& scene, const TrainConfig& cfg,
                              const std::function<void(const StepLog&)>& on_step = {}) {
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
  Trainer t(scene, cfg);
  while (!t.done()) {
    const auto log = t.step();
    if (on_step) on_step(log);
  }
  TrainResult r{t.state(), t.history(), t.evaluate(), t.notes()};
  if (!cfg.out_dir.empty()) {
    write_loss_csv(cfg.out_dir / "losses.csv", r.history);
    std::ofstream mf(cfg.out_dir / "metrics.csv");
    write_metrics_csv(mf, r.metrics);
    save_checkpoint(r.state, cfg.out_dir / "final.ckpt");
  }
  return r;
}

}  // namespace rtgs
