#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "psrp/error.hpp"
#include "psrp/nn.hpp"

namespace psrp {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  ///< decoupled: theta -= lr * weight_decay * theta

  void validate() const {
    if (!(lr >= 0.0)) throw ValidationError("Adam: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ValidationError("Adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ValidationError("Adam: eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("Adam: weight_decay must be >= 0");
  }
};

/// First/second moments laid out in for_each_param order.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

template <class Module>
AdamState make_adam_state(const Module& module) {
  const auto count = nn::parameter_count(module);
  return {std::vector<double>(count, 0.0), std::vector<double>(count, 0.0), 0};
}

/// One bias-corrected Adam update from the gradients currently held by `module`.
template <class Module>
void adam_step(Module& module, AdamState& state, const AdamConfig& cfg) {
  const auto count = nn::parameter_count(module);
  if (state.m.size() != count || state.v.size() != count) {
    throw DimensionError("adam_step: optimizer state does not match the module");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t offset = 0;
  module.for_each_param([&](const std::string&, nn::Param& p) {
    double* w = p.value.data();
    const double* g = p.grad.data();
    for (Eigen::Index i = 0; i < p.size(); ++i, ++offset) {
      double& m = state.m[offset];
      double& v = state.v[offset];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = (m / c1) / (std::sqrt(v / c2) + cfg.eps) + cfg.weight_decay * w[i];
      w[i] -= cfg.lr * update;
    }
  });
}

}  // namespace psrp
