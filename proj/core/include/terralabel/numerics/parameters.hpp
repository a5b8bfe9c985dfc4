#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "terralabel/numerics/tensor.hpp"

namespace terralabel::numerics {

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

/// Uniform(-b, b) with b = sqrt(6 / fan_in); used for conv and linear weights.
template <typename T>
BasicTensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)); used for graph layer weights.
template <typename T>
BasicTensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                              std::mt19937_64& rng);

}  // namespace terralabel::numerics
