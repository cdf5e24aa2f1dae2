#pragma once

#include <array>
#include <cassert>
#include <span>
#include <vector>

namespace rtgs {

/// Front-to-back blending stops once the remaining transmittance drops below this.
inline constexpr double kTransmittanceEps = 1e-4;

template <int K>
struct Fragment {
  double alpha;             // effective alpha o * g, already clipped
  std::array<double, K> x;  // attributes carried by the fragment
};

template <int K>
struct Blend {
  std::array<double, K> value{};
  double alpha = 0.0;          // accumulated alpha 1 - prod(1 - alpha_i)
  double transmittance = 1.0;  // prod(1 - alpha_i) over the used fragments
  int used = 0;                // fragments consumed before early termination
};

/// out = sum_i x_i alpha_i prod_{j<i} (1 - alpha_j), premultiplied.
template <int K>
Blend<K> composite_forward(std::span<const Fragment<K>> frags) {
  Blend<K> b;
  double T = 1.0;
  for (const auto& f : frags) {
    const double w = f.alpha * T;
    for (int k = 0; k < K; ++k) b.value[k] += f.x[k] * w;
    T *= 1.0 - f.alpha;
    ++b.used;
    if (T < kTransmittanceEps) break;
  }
  b.transmittance = T;
  b.alpha = 1.0 - T;
  return b;
}

/// Adjoint of composite_forward over the first `used` fragments.
template <int K>
void composite_backward(std::span<const Fragment<K>> frags, int used,
                        const std::array<double, K>& d_value, double d_alpha,
                        std::span<double> d_frag_alpha,
                        std::span<std::array<double, K>> d_frag_x) {
  assert(used <= static_cast<int>(frags.size()));
  thread_local std::vector<double> trans;
  trans.resize(static_cast<size_t>(used) + 1);
  trans[0] = 1.0;
  for (int i = 0; i < used; ++i) trans[i + 1] = trans[i] * (1.0 - frags[i].alpha);
  const double t_final = trans[used];
  std::array<double, K> suffix{};
  for (int i = used - 1; i >= 0; --i) {
    const auto& f = frags[i];
    const double w = f.alpha * trans[i];
    const double inv = 1.0 / (1.0 - f.alpha);
    double da = d_alpha * t_final * inv;
    for (int k = 0; k < K; ++k) {
      da += d_value[k] * (trans[i] * f.x[k] - suffix[k] * inv);
      d_frag_x[i][k] = w * d_value[k];
      suffix[k] += f.x[k] * w;
    }
    d_frag_alpha[i] = da;
  }
}

}  // namespace rtgs
