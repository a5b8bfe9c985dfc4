#include "terralabel/features/loss.hpp"

#include "terralabel/common/error.hpp"
#include "terralabel/numerics/ops.hpp"

namespace terralabel::features {

using numerics::BasicTensor;
namespace ops = numerics;

namespace {
constexpr double kDiceSmooth = 1e-7;

template <typename T>
void check_pair(const char* name, const BasicTensor<T>& pred, const BasicTensor<T>& truth) {
  if (pred.shape() != truth.shape() || pred.rank() != 4) {
    throw ShapeError(std::string(name) + ": pred " + numerics::shape_string(pred.shape()) + " vs truth " +
                     numerics::shape_string(truth.shape()));
  }
}
}  // namespace

double dice_per_class(std::span<const float> truth, std::span<const float> pred) {
  if (truth.size() != pred.size()) throw ShapeError("dice_per_class: size mismatch");
  double inter = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    inter += double(truth[i]) * pred[i];
    sx += truth[i];
    sy += pred[i];
  }
  if (sx + sy == 0.0) return 1.0;
  return 2.0 * inter / (sx + sy);
}

template <typename T>
BasicTensor<T> dice_coefficient(const BasicTensor<T>& pred, const BasicTensor<T>& truth) {
  check_pair("dice_coefficient", pred, truth);
  const numerics::Shape flat{pred.dim(0) * pred.dim(1), pred.dim(2) * pred.dim(3)};
  auto p = ops::reshape(pred, flat);
  auto t = ops::reshape(truth, flat);
  auto inter = ops::sum(ops::mul(p, t), 1);
  auto denom = ops::add(ops::sum(p, 1), ops::sum(t, 1));
  auto d = ops::div(ops::add_scalar(ops::mul_scalar(inter, T(2)), T(kDiceSmooth)),
                    ops::add_scalar(denom, T(kDiceSmooth)));
  return ops::mean(d);
}

template <typename T>
BasicTensor<T> bce(const BasicTensor<T>& pred, const BasicTensor<T>& truth) {
  check_pair("bce", pred, truth);
  auto p = ops::clamp(pred, T(kBceClamp), T(1 - kBceClamp));
  auto pos = ops::mul(truth, ops::log(p));
  auto neg = ops::mul(ops::rsub_scalar(T(1), truth), ops::log(ops::rsub_scalar(T(1), p)));
  return ops::mul_scalar(ops::mean(ops::add(pos, neg)), T(-1));
}

template <typename T>
BasicTensor<T> combo_loss(const BasicTensor<T>& pred, const BasicTensor<T>& truth) {
  auto dice_term = ops::rsub_scalar(T(1), dice_coefficient(pred, truth));
  return ops::mul_scalar(ops::add(dice_term, bce(pred, truth)), T(0.5));
}

#define TERRALABEL_INSTANTIATE_LOSS(T)                                                  \
  template BasicTensor<T> dice_coefficient(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> bce(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> combo_loss(const BasicTensor<T>&, const BasicTensor<T>&);

TERRALABEL_INSTANTIATE_LOSS(float)
TERRALABEL_INSTANTIATE_LOSS(double)

}  // namespace terralabel::features
