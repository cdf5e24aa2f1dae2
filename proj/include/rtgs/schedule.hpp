#pragma once

#include <cmath>
#include <string>

#include "rtgs/math.hpp"

namespace rtgs {

/// Full-length stage boundaries in steps; multiplied by the run scale.
struct StageBoundaries {
  int raster_only = 3000;       // stage 1 ends
  int reflection_until = 20000; // stage 2 ends
  int mesh_at = 20000;          // mesh extraction step
  int joint_until = 60000;      // end of the run
  int depth_from = 40000;       // back-surface depth loss starts
};

/// Ablation switches. Each disables one component of the full model.
struct Ablations {
  bool no_transmittance_set = false;
  bool no_spec_loss = false;
  bool no_depth_loss = false;
  bool no_mesh_guide = false;
};

struct ScheduleConfig {
  StageBoundaries bounds;
  double scale = 1.0;
  Ablations ablate;
  bool perc = false;

  int scaled(int b) const { return static_cast<int>(std::lround(b * scale)); }
  int total_steps() const { return scaled(bounds.joint_until); }

  void validate() const {
    if (!(scale > 0.0 && scale <= 1.0)) throw Error("schedule: scale must lie in (0, 1]");
    const auto& b = bounds;
    if (!(b.raster_only > 0 && b.raster_only < b.reflection_until && b.reflection_until <= b.depth_from &&
          b.depth_from < b.joint_until))
      throw Error("schedule: stage boundaries must increase");
    if (b.mesh_at != b.reflection_until) throw Error("schedule: mesh extraction must end stage 2");
    if (scaled(b.raster_only) < 1 || scaled(b.raster_only) >= scaled(b.reflection_until))
      throw Error("schedule: scale " + std::to_string(scale) + " collapses a stage");
  }
};

/// What runs at one step.
struct StageFeatures {
  int stage = 1;
  bool reflection = false;
  bool transmission = false;
  bool extract_mesh = false;  // fires once, before the step's render
  bool loss_spec = false;
  bool loss_depth = false;
  bool loss_normal = true;
  bool loss_mono = true;
  bool loss_perc = false;
};

inline StageFeatures schedule_stage(int step, const ScheduleConfig& cfg) {
  StageFeatures f;
  const int s1 = cfg.scaled(cfg.bounds.raster_only);
  const int s2 = cfg.scaled(cfg.bounds.reflection_until);
  const int mesh = cfg.scaled(cfg.bounds.mesh_at);
  const int depth = cfg.scaled(cfg.bounds.depth_from);
  f.stage = step < s1 ? 1 : (step < s2 ? 2 : 3);
  f.reflection = f.stage >= 2;
  f.transmission = f.stage >= 3;
  f.extract_mesh = step == mesh;
  f.loss_spec = f.stage >= 2 && !cfg.ablate.no_spec_loss;
  f.loss_depth = f.stage >= 3 && step >= depth && !cfg.ablate.no_depth_loss && !cfg.ablate.no_transmittance_set;
  f.loss_perc = cfg.perc;
  return f;
}

}  // namespace rtgs
