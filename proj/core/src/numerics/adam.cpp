#include "terralabel/numerics/adam.hpp"

#include <cmath>

#include "terralabel/common/error.hpp"

namespace terralabel::numerics {

template <typename T>
void adam_step(ParameterList<T>& params, AdamState& state, const AdamOptions& options) {
  if (state.m.size() != params.size()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params[i].tensor.numel();
    if (state.m[i].size() != n) {
      if (!state.m[i].empty()) {
        throw ShapeError("adam: moment buffer for '" + params[i].name + "' has wrong size");
      }
      state.m[i].assign(n, 0.0);
      state.v[i].assign(n, 0.0);
    }
    for (T g : params[i].tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingDivergence("adam: non-finite gradient in '" + params[i].name + "'");
      }
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    if (!tensor.has_grad()) continue;
    auto grad = tensor.grad();
    auto value = tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = static_cast<double>(grad[k]);
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g;
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      value[k] = static_cast<T>(static_cast<double>(value[k]) -
                                options.lr * mhat / (std::sqrt(vhat) + options.eps));
    }
  }
}

template void adam_step<float>(ParameterList<float>&, AdamState&, const AdamOptions&);
template void adam_step<double>(ParameterList<double>&, AdamState&, const AdamOptions&);

}  // namespace terralabel::numerics
