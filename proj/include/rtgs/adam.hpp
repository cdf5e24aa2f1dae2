#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "rtgs/splat.hpp"

namespace rtgs {

/// Base learning rate per parameter group. The position rate is multiplied by
/// the scene scale and decays exponentially to `position_final_factor` of its
/// initial value over the run.
struct LearningRates {
  double position = 1.6e-4;
  double position_final_factor = 0.01;
  double tangent = 5e-3;
  double scale = 5e-3;
  double opacity = 0.05;
  double sh = 2.5e-3;
  double material = 5e-3;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

/// First and second moments, one entry per primitive.
struct AdamMoments {
  std::vector<SplatParams> m, v;

  explicit AdamMoments(size_t n = 0) : m(n, zero_grad()), v(n, zero_grad()) {}
  size_t size() const { return m.size(); }

  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

using GroupRates = std::array<double, kParamGroupCount>;

/// Group rates at `step` of a `total_steps` run.
inline GroupRates group_rates(const LearningRates& lr, double scene_scale, int step, int total_steps) {
  const double t = total_steps > 0 ? std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0) : 0.0;
  GroupRates r{};
  r[static_cast<int>(ParamGroup::Position)] =
      lr.position * scene_scale * std::exp(t * std::log(lr.position_final_factor));
  r[static_cast<int>(ParamGroup::Tangent)] = lr.tangent;
  r[static_cast<int>(ParamGroup::Scale)] = lr.scale;
  r[static_cast<int>(ParamGroup::Opacity)] = lr.opacity;
  r[static_cast<int>(ParamGroup::Sh)] = lr.sh;
  r[static_cast<int>(ParamGroup::Material)] = lr.material;
  return r;
}

/// One bias-corrected Adam step; `step` counts from 1.
inline void adam_update(std::vector<SplatParams>& params, const std::vector<SplatGrad>& grads,
                        AdamMoments& mom, const GroupRates& rates, int step, const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || mom.size() != params.size())
    throw Error("adam_update: shape mismatch (" + std::to_string(params.size()) + " params, " +
                std::to_string(grads.size()) + " grads, " + std::to_string(mom.size()) + " moments)");
  if (step < 1) throw Error("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, step);
  const double c2 = 1.0 - std::pow(cfg.beta2, step);
  for (size_t i = 0; i < params.size(); ++i) {
    std::vector<std::span<const double>> g;
    std::vector<std::span<double>> m, v;
    visit_params(grads[i], [&](ParamGroup, std::span<const double> s) { g.push_back(s); });
    visit_params(mom.m[i], [&](ParamGroup, std::span<double> s) { m.push_back(s); });
    visit_params(mom.v[i], [&](ParamGroup, std::span<double> s) { v.push_back(s); });
    size_t b = 0;
    visit_params(params[i], [&](ParamGroup group, std::span<double> p) {
      const double lr = rates[static_cast<int>(group)];
      for (size_t k = 0; k < p.size(); ++k) {
        const double gk = g[b][k];
        m[b][k] = cfg.beta1 * m[b][k] + (1.0 - cfg.beta1) * gk;
        v[b][k] = cfg.beta2 * v[b][k] + (1.0 - cfg.beta2) * gk * gk;
        p[k] -= lr * (m[b][k] / c1) / (std::sqrt(v[b][k] / c2) + cfg.eps);
      }
      ++b;
    });
  }
}

}  // namespace rtgs
