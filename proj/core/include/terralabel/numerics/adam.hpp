#pragma once

#include <cstdint>
#include <vector>

#include "terralabel/numerics/parameters.hpp"

namespace terralabel::numerics {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one buffer per parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// Applies one Adam update to every parameter that has a gradient.
/// Throws TrainingDivergence (leaving parameters untouched) if any gradient
/// entry is non-finite.
template <typename T>
void adam_step(ParameterList<T>& params, AdamState& state, const AdamOptions& options);

template <typename T>
void zero_grad(ParameterList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace terralabel::numerics
