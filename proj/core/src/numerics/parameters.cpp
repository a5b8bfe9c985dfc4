#include "terralabel/numerics/parameters.hpp"

#include <cmath>

namespace terralabel::numerics {
namespace {

template <typename T>
BasicTensor<T> uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_size(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::from(std::move(shape), std::move(values), true);
}

}  // namespace

template <typename T>
BasicTensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform<T>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

template <typename T>
BasicTensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                              std::mt19937_64& rng) {
  return uniform<T>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

template BasicTensor<float> he_uniform<float>(Shape, std::size_t, std::mt19937_64&);
template BasicTensor<double> he_uniform<double>(Shape, std::size_t, std::mt19937_64&);
template BasicTensor<float> glorot_uniform<float>(Shape, std::size_t, std::size_t, std::mt19937_64&);
template BasicTensor<double> glorot_uniform<double>(Shape, std::size_t, std::size_t, std::mt19937_64&);

}  // namespace terralabel::numerics
