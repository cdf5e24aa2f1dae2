#pragma once

#include <cmath>
#include <vector>

#include "rtgs/adam.hpp"
#include "rtgs/splat.hpp"

namespace rtgs {

struct DensifyConfig {
  bool enabled = true;
  int interval = 100;
  double grad_threshold = 2e-4;   // mean world-space position-gradient norm
  double until_fraction = 0.6;    // of the run
  double prune_opacity = 0.005;
  double percent_dense = 0.01;    // split above this fraction of the scene diagonal
  int max_primitives = 10000;      // per set; sized for single-machine runs
};

/// Position-gradient statistics since the last densification.
struct GradStats {
  std::vector<double> accum;
  std::vector<int> count;

  explicit GradStats(size_t n = 0) : accum(n, 0.0), count(n, 0) {}
  size_t size() const { return accum.size(); }

  void add(const std::vector<SplatGrad>& grads) {
    if (grads.size() != accum.size()) throw Error("GradStats: shape mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
      const double n = norm(grads[i].mean);
      if (n == 0.0) continue;
      accum[i] += n;
      ++count[i];
    }
  }

  friend bool operator==(const GradStats&, const GradStats&) = default;
};

// Children sit at +-0.5 sigma_u along the major tangent with sigma_u scaled by
// sqrt(0.75), so the pair keeps the parent's first and second moments; the
// opacity halves the parent's mass between them.
inline constexpr double kSplitOffset = 0.5;

/// Splits p along its larger tangent axis into two children.
inline std::array<SplatParams, 2> split_splat(const SplatParams& p) {
  const auto frame = splat_basis(p);
  std::array<SplatParams, 2> out{p, p};
  if (!frame) return out;
  const int axis = p.log_scale[0] >= p.log_scale[1] ? 0 : 1;
  const double sigma = std::exp(p.log_scale[axis]);
  const Vec3 dir = axis == 0 ? frame->u : frame->v;
  const double shrink = std::sqrt(1.0 - kSplitOffset * kSplitOffset);
  const double o = sigmoid(p.opacity_logit);
  const double oc = std::min(o / (2.0 * shrink), 0.99);
  for (int c = 0; c < 2; ++c) {
    out[c].mean = p.mean + dir * ((c == 0 ? 1.0 : -1.0) * kSplitOffset * sigma);
    out[c].tangent_u = frame->u;
    out[c].tangent_v = frame->v;
    out[c].log_scale[axis] = p.log_scale[axis] + std::log(shrink);
    out[c].opacity_logit = logit(oc);
  }
  return out;
}

/// Clones small and splits large primitives whose mean gradient exceeds the
/// threshold, then prunes nearly transparent ones. Moments of new primitives
/// start at zero; statistics are reset. Returns the number of changes.
inline int densify_prune(GaussianSet& set, AdamMoments& mom, GradStats& stats, const DensifyConfig& cfg,
                         double scene_diagonal) {
  const size_t n = set.size();
  if (mom.size() != n || stats.size() != n) throw Error("densify_prune: buffers out of sync with primitives");
  std::vector<SplatParams> prims;
  AdamMoments moms;
  int changes = 0;
  auto keep = [&](const SplatParams& p, size_t src) {
    prims.push_back(p);
    moms.m.push_back(mom.m[src]);
    moms.v.push_back(mom.v[src]);
  };
  auto fresh = [&](const SplatParams& p) {
    prims.push_back(p);
    moms.m.push_back(zero_grad());
    moms.v.push_back(zero_grad());
  };
  size_t budget = cfg.max_primitives > static_cast<int>(n) ? cfg.max_primitives - n : 0;
  for (size_t i = 0; i < n; ++i) {
    const auto& p = set.primitives[i];
    if (sigmoid(p.opacity_logit) < cfg.prune_opacity) {
      ++changes;
      continue;
    }
    const bool hot = stats.count[i] > 0 && stats.accum[i] / stats.count[i] > cfg.grad_threshold;
    if (!hot || budget == 0) {
      keep(p, i);
      continue;
    }
    --budget;
    ++changes;
    const double extent = std::exp(std::max(p.log_scale[0], p.log_scale[1]));
    if (extent > cfg.percent_dense * scene_diagonal) {
      for (const auto& c : split_splat(p)) fresh(c);
    } else {
      keep(p, i);
      fresh(p);
    }
  }
  set.primitives = std::move(prims);
  mom = std::move(moms);
  stats = GradStats(set.size());
  return changes;
}

}  // namespace rtgs
