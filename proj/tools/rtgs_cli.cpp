#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "rtgs/synthetic.hpp"
#include "rtgs/trainer.hpp"

namespace fs = std::filesystem;
using namespace rtgs;

namespace {

struct TrainArgs {
  std::string scene, out;
  double scale = 1.0;
  uint64_t seed = 0;
  bool no_transmittance_set = false, no_spec_loss = false, no_depth_loss = false, no_mesh_guide = false;
  bool no_densify = false;
  std::string perc;
  int checkpoint_every = 0;
  int reflection_count = 2000, transmittance_count = 2000;
  int log_every = 100;
  int max_splats = DensifyConfig{}.max_primitives;
  SortMode sort = SortMode::CenterDepth;
};

const std::map<std::string, SortMode> kSortModes{{"center-depth", SortMode::CenterDepth},
                                                 {"hit-depth", SortMode::HitDepth}};

int run_train(const TrainArgs& a) {
  const auto scene = load_scene(a.scene);
  for (const auto& n : scene.notes) std::cerr << "note: " << n << '\n';
  TrainConfig cfg;
  cfg.schedule.scale = a.scale;
  cfg.schedule.ablate = {a.no_transmittance_set, a.no_spec_loss, a.no_depth_loss, a.no_mesh_guide};
  if (!a.perc.empty() && a.perc != "grad-ms") throw Error("--perc accepts only 'grad-ms'");
  cfg.schedule.perc = !a.perc.empty();
  cfg.densify.enabled = !a.no_densify;
  cfg.densify.max_primitives = a.max_splats;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.reflection_count = a.reflection_count;
  cfg.transmittance_count = a.transmittance_count;
  cfg.out_dir = a.out;
  cfg.sort = a.sort;
  const auto t0 = std::chrono::steady_clock::now();
  const int total = cfg.schedule.total_steps();
  const auto r = train_loop(scene, cfg, [&](const StepLog& l) {
    if (a.log_every > 0 && ((l.step + 1) % a.log_every == 0 || l.step + 1 == total)) {
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %d/%d stage %d loss %.5f splats %zu/%zu/%zu (%.0fs)\n", l.step + 1, total, l.stage,
                   l.loss.total, l.counts[0], l.counts[1], l.counts[2], sec);
    }
  });
  for (const auto& n : r.notes) std::cerr << "note: " << n << '\n';
  write_metrics_csv(std::cout, r.metrics);
  return 0;
}

int run_render(const std::string& ckpt, int view, const std::string& out, const std::string& maps, SortMode sort) {
  const auto s = load_checkpoint(ckpt);
  if (view < 0 || view >= static_cast<int>(s.cameras.size()))
    throw Error("render: view " + std::to_string(view) + " out of range (checkpoint has " +
                std::to_string(s.cameras.size()) + " views)");
  auto f = render_features(s, s.step, sort);
  const auto* mask = s.masks[view] ? &*s.masks[view] : nullptr;
  if (!mask) f.transmission = false;
  const auto pairs = Trainer::depth_pairs(s);
  static const std::vector<std::optional<double>> none;
  const auto fs = render_forward(s.sets, s.cameras[view], f, mask, pairs.empty() ? none : pairs[view].d2);
  const fs::path p(out);
  if (p.extension() == ".pfm") write_pfm(p, image_cast<float>(fs.image));
  else write_png_linear(p, fs.image);
  if (!maps.empty()) dump_material_buffers(maps, fs.raster.maps);
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& scene_dir, SortMode sort) {
  const auto s = load_checkpoint(ckpt);
  const auto scene = load_scene(scene_dir);
  write_metrics_csv(std::cout, Trainer::evaluate_state(s, scene, Trainer::depth_pairs(s), sort));
  return 0;
}

int run_mesh(const std::string& ckpt, const std::string& out) {
  const auto s = load_checkpoint(ckpt);
  const TriangleMesh mesh = s.mesh ? *s.mesh : extract_scene_mesh(s.sets.diffuse, s.cameras, s.bbox, 4.0);
  const fs::path p(out);
  if (p.extension() == ".obj") write_obj(p, mesh);
  else write_stl(p, mesh);
  std::cerr << mesh.vertices().size() << " vertices, " << mesh.triangles().size() << " triangles\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflective and transparent scene reconstruction with three Gaussian surfel sets"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Optimize a scene");
  train->add_option("--scene", ta.scene, "Scene directory with scene.json")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--scale", ta.scale, "Multiplier on all stage boundaries, in (0, 1]")->default_val(1.0);
  train->add_option("--seed", ta.seed, "Random seed")->default_val(0);
  train->add_flag("--no-transmittance-set", ta.no_transmittance_set, "Ablation: drop the transmittance set");
  train->add_flag("--no-spec-loss", ta.no_spec_loss, "Ablation: drop the specular-weight prior");
  train->add_flag("--no-depth-loss", ta.no_depth_loss, "Ablation: drop the back-surface depth loss");
  train->add_flag("--no-mesh-guide", ta.no_mesh_guide, "Ablation: start the second bounce at the first-bounce depth");
  train->add_flag("--no-densify", ta.no_densify, "Disable clone/split/prune");
  train->add_option("--perc", ta.perc, "Enable the perceptual substitute (grad-ms)");
  train->add_option("--max-splats", ta.max_splats, "Densification cap per primitive set");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Write step_N.ckpt every N steps (0: final only)");
  train->add_option("--reflection-count", ta.reflection_count, "Initial reflection primitives");
  train->add_option("--transmittance-count", ta.transmittance_count, "Initial transmittance primitives");
  train->add_option("--log-every", ta.log_every, "Progress line interval (0: silent)");
  train->add_option("--sort", ta.sort, "Fragment order: center-depth or hit-depth")
      ->transform(CLI::CheckedTransformer(kSortModes));

  std::string ckpt, out, maps, scene_dir, preset;
  int view = 0;
  SortMode sort = SortMode::CenterDepth;
  auto* render = app.add_subcommand("render", "Render one training view from a checkpoint");
  render->add_option("--ckpt", ckpt)->required();
  render->add_option("--view", view)->required();
  render->add_option("--out", out, "PNG (sRGB) or PFM (linear)")->required();
  render->add_option("--maps", maps, "Also dump the material buffers to this directory");
  render->add_option("--sort", sort, "Fragment order: center-depth or hit-depth")
      ->transform(CLI::CheckedTransformer(kSortModes));

  auto* eval = app.add_subcommand("eval", "Print per-view PSNR/SSIM as CSV");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--scene", scene_dir)->required();
  eval->add_option("--sort", sort, "Fragment order: center-depth or hit-depth")
      ->transform(CLI::CheckedTransformer(kSortModes));

  auto* mesh = app.add_subcommand("mesh", "Export the extracted mesh");
  mesh->add_option("--ckpt", ckpt)->required();
  mesh->add_option("--out", out, "STL, or OBJ by extension")->required();

  DatasetConfig dc;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--preset", preset)->required()->check(CLI::IsMember({"mirror", "slab", "combo"}));
  synth->add_option("--out", out)->required();
  synth->add_option("--views", dc.views)->default_val(8);
  synth->add_option("--width", dc.width)->default_val(128);
  synth->add_option("--height", dc.height)->default_val(128);
  synth->add_option("--spp", dc.spp)->default_val(64);
  synth->add_option("--points", dc.points)->default_val(4000);
  synth->add_option("--seed", dc.seed)->default_val(0);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(ta);
    if (*render) return run_render(ckpt, view, out, maps, sort);
    if (*eval) return run_eval(ckpt, scene_dir, sort);
    if (*mesh) return run_mesh(ckpt, out);
    if (*synth) {
      generate_dataset(build_preset(preset), dc, out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
