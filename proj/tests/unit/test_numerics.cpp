#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/numerics/adam.hpp"
#include "terralabel/numerics/checkpoint.hpp"
#include "terralabel/numerics/ops.hpp"

using namespace terralabel;
using namespace terralabel::numerics;
using terralabel::testing::gradcheck;
using terralabel::testing::random_tensor;
using terralabel::testing::random_tensor_away_from_zero;

namespace {

// Direct sliding-window cross-correlation; independent of the im2col path.
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t n, std::size_t cin,
                               std::size_t h, std::size_t w, const std::vector<double>& k,
                               std::size_t cout, std::size_t kh, std::size_t kw, std::size_t pad) {
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  std::vector<double> out(n * cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x[((b * cin + c) * h + iy) * w + ix] * k[((o * cin + c) * kh + i) * kw + j];
              }
          out[((b * cout + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a = Tensor::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("relu zeroes negatives") {
  Tensor out = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(out.at(0) == 0.0f);
  CHECK(out.at(1) == 0.0f);
  CHECK(out.at(2) == 2.0f);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1), ShapeError);
}

TEST_CASE("conv2d of a ramp with an averaging kernel") {
  std::vector<float> ramp(16);
  std::iota(ramp.begin(), ramp.end(), 0.0f);
  Tensor x = Tensor::from({1, 1, 4, 4}, ramp);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f / 9.0f);
  Tensor y = conv2d(x, k, 1);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  // Hand sums of the zero-padded 3x3 windows.
  CHECK(y.at(0) == doctest::Approx(10.0 / 9.0).epsilon(1e-6));   // 0+1+4+5
  CHECK(y.at(5) == doctest::Approx(45.0 / 9.0).epsilon(1e-6));    // rows 0-2, cols 0-2
  CHECK(y.at(15) == doctest::Approx(50.0 / 9.0).epsilon(1e-6));   // 10+11+14+15

  std::vector<double> xd(ramp.begin(), ramp.end());
  auto oracle = naive_conv(xd, 1, 1, 4, 4, std::vector<double>(9, 1.0 / 9.0), 1, 3, 3, 1);
  for (std::size_t i = 0; i < 16; ++i) CHECK(y.at(i) == doctest::Approx(oracle[i]).epsilon(1e-5));
}

TEST_CASE("conv2d matches the naive oracle on random multi-channel input") {
  std::mt19937_64 rng(7);
  for (std::size_t pad : {0u, 1u, 2u}) {
    Tensor64 x = random_tensor({2, 3, 7, 6}, rng);
    Tensor64 k = random_tensor({4, 3, 3, 3}, rng);
    Tensor xf = cast<float>(x);
    Tensor kf = cast<float>(k);
    Tensor y = conv2d(xf, kf, pad);
    auto oracle = naive_conv({x.data().begin(), x.data().end()}, 2, 3, 7, 6,
                             {k.data().begin(), k.data().end()}, 4, 3, 3, pad);
    REQUIRE(y.numel() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(std::abs(y.at(i) - oracle[i]) < 1e-5);
    }
  }
}

TEST_CASE("softmax rows are a probability distribution") {
  std::mt19937_64 rng(3);
  Tensor64 x = random_tensor({5, 7, 3}, rng, -20.0, 20.0);
  for (std::size_t axis : {0u, 1u, 2u}) {
    Tensor64 y = softmax(x, axis);
    Tensor64 s = sum(y, axis);
    for (double v : y.data()) CHECK(v >= 0.0);
    for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("backward: analytic examples") {
  SUBCASE("sum of squares") {
    Tensor w = Tensor::from({2}, {1, 2}, true);
    backward(sum(mul(w, w)));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
  }
  SUBCASE("sigmoid at zero") {
    Tensor x = Tensor::from({1}, {0}, true);
    backward(sum(sigmoid(x)));
    CHECK(x.grad()[0] == doctest::Approx(0.25));
  }
  SUBCASE("shared subexpressions accumulate over every path") {
    Tensor64 x = Tensor64::from({3}, {0.5, -1.5, 2.0}, true);
    Tensor64 xx = mul(x, x);
    backward(sum(add(xx, mul(x, x))));
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0 * x.at(i)));
    x.zero_grad();
    backward(sum(add(xx, xx)));
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0 * x.at(i)));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  }
}

TEST_CASE("inference records no tape") {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = add(a, a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->parents.empty());
}

TEST_CASE("gradient check: elementwise and reduction ops") {
  std::mt19937_64 rng(11);
  using Fn = std::function<Tensor64(const std::vector<Tensor64>&)>;
  auto check = [&](const char* name, Fn f, std::vector<Tensor64> in) {
    CAPTURE(name);
    CHECK(gradcheck(f, in) < 1e-4);
  };
  const Shape s{3, 4};
  // Weighting by a fixed random tensor keeps upstream gradients non-uniform.
  Tensor64 wts = random_tensor({3, 4}, rng);
  auto weighted = [wts](const Tensor64& t) { return sum(mul(t, wts)); };

  check("add", [&](auto& v) { return weighted(add(v[0], v[1])); }, {random_tensor(s, rng), random_tensor(s, rng)});
  check("sub", [&](auto& v) { return weighted(sub(v[0], v[1])); }, {random_tensor(s, rng), random_tensor(s, rng)});
  check("mul", [&](auto& v) { return weighted(mul(v[0], v[1])); }, {random_tensor(s, rng), random_tensor(s, rng)});
  check("div", [&](auto& v) { return weighted(div(v[0], v[1])); }, {random_tensor(s, rng), random_tensor(s, rng, 0.5, 2.0)});
  check("relu", [&](auto& v) { return weighted(relu(v[0])); }, {random_tensor_away_from_zero(s, rng)});
  check("leaky_relu", [&](auto& v) { return weighted(leaky_relu(v[0], 0.2)); }, {random_tensor_away_from_zero(s, rng)});
  check("elu", [&](auto& v) { return weighted(elu(v[0])); }, {random_tensor_away_from_zero(s, rng)});
  check("sigmoid", [&](auto& v) { return weighted(sigmoid(v[0])); }, {random_tensor(s, rng, -4, 4)});
  check("exp", [&](auto& v) { return weighted(exp(v[0])); }, {random_tensor(s, rng)});
  check("log", [&](auto& v) { return weighted(log(v[0])); }, {random_tensor(s, rng, 0.2, 3.0)});
  check("softmax0", [&](auto& v) { return weighted(softmax(v[0], 0)); }, {random_tensor(s, rng, -3, 3)});
  check("softmax1", [&](auto& v) { return weighted(softmax(v[0], 1)); }, {random_tensor(s, rng, -3, 3)});
  check("log_softmax", [&](auto& v) { return weighted(log_softmax(v[0], 1)); }, {random_tensor(s, rng, -3, 3)});
  check("mean_axis", [&](auto& v) { return sum(mul(mean(v[0], 0), Tensor64::from({4}, {1, -2, 3, 0.5}))); },
        {random_tensor(s, rng)});
  check("add_broadcast", [&](auto& v) { return weighted(add_broadcast(v[0], v[1], 1)); },
        {random_tensor(s, rng), random_tensor({4}, rng)});
  check("scale_rows", [&](auto& v) { return weighted(scale_rows(v[0], v[1])); },
        {random_tensor(s, rng), random_tensor({3}, rng)});
  Tensor64 wcat = random_tensor({3, 6}, rng);
  check("concat", [&](auto& v) { return sum(mul(concat<double>({v[0], v[1]}, 1), wcat)); },
        {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)});
  check("matmul", [&](auto& v) { return weighted(matmul(v[0], v[1])); },
        {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng)});
}

TEST_CASE("gradient check: image ops") {
  std::mt19937_64 rng(13);
  for (std::size_t pad : {0u, 1u}) {
    std::vector<Tensor64> in{random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)};
    Tensor64 probe_out = random_tensor({2, 3, 4 + 2 * pad, 4 + 2 * pad}, rng);
    CHECK(gradcheck([&](auto& v) { return sum(mul(conv2d(v[0], v[1], pad), probe_out)); }, in) < 1e-4);
  }
  {
    std::vector<Tensor64> in{random_tensor({1, 3, 5, 5}, rng), random_tensor({2, 3, 1, 1}, rng)};
    Tensor64 w = random_tensor({1, 2, 5, 5}, rng);
    CHECK(gradcheck([&](auto& v) { return sum(mul(conv2d(v[0], v[1], 0), w)); }, in) < 1e-4);
  }
  {
    // Distinct values so each pooling window has a unique maximum.
    std::vector<double> vals(2 * 3 * 6 * 6);
    std::iota(vals.begin(), vals.end(), 0.0);
    std::shuffle(vals.begin(), vals.end(), rng);
    for (auto& v : vals) v *= 0.1;
    std::vector<Tensor64> in{Tensor64::from({2, 3, 6, 6}, vals)};
    Tensor64 w = random_tensor({2, 3, 3, 3}, rng);
    CHECK(gradcheck([&](auto& v) { return sum(mul(max_pool2x2(v[0]), w)); }, in) < 1e-4);
  }
  {
    std::vector<Tensor64> in{random_tensor({1, 2, 3, 3}, rng)};
    Tensor64 w = random_tensor({1, 2, 6, 6}, rng);
    CHECK(gradcheck([&](auto& v) { return sum(mul(upsample_nearest2x(v[0]), w)); }, in) < 1e-4);
  }
  for (bool training : {true, false}) {
    CAPTURE(training);
    std::vector<Tensor64> in{random_tensor({2, 3, 4, 4}, rng), random_tensor({3}, rng, 0.5, 1.5),
                             random_tensor({3}, rng)};
    Tensor64 w = random_tensor({2, 3, 4, 4}, rng);
    BatchNormState<double> state(3);
    state.running_mean = {0.1, -0.2, 0.3};
    state.running_var = {1.5, 0.7, 1.1};
    auto f = [&](const std::vector<Tensor64>& v) {
      BatchNormState<double> scratch = state;  // running stats must not drift during the check
      return sum(mul(batch_norm2d(v[0], v[1], v[2], scratch, training), w));
    };
    CHECK(gradcheck(f, in) < 1e-4);
  }
}

TEST_CASE("gradient check: graph ops") {
  std::mt19937_64 rng(17);
  const std::vector<std::uint32_t> src{0, 1, 2, 3, 1, 0, 2};
  const std::vector<std::uint32_t> dst{1, 0, 0, 2, 3, 3, 3};
  Tensor64 w = random_tensor({7, 3}, rng);
  Tensor64 w4 = random_tensor({4, 3}, rng);
  Tensor64 w7 = random_tensor({7}, rng);
  std::vector<Tensor64> in{random_tensor({4, 3}, rng)};
  CHECK(gradcheck([&](auto& v) { return sum(mul(index_rows<double>(v[0], src), w)); }, in) < 1e-4);
  std::vector<Tensor64> in2{random_tensor({7, 3}, rng)};
  CHECK(gradcheck([&](auto& v) { return sum(mul(scatter_add_rows<double>(v[0], dst, 4), w4)); }, in2) < 1e-4);
  std::vector<Tensor64> in3{random_tensor({7}, rng, -2, 2)};
  CHECK(gradcheck([&](auto& v) { return sum(mul(segment_softmax<double>(v[0], dst, 4), w7)); }, in3) < 1e-4);
}

TEST_CASE("segment softmax normalises within each group") {
  const std::vector<std::uint32_t> seg{0, 0, 1, 2, 2, 2};
  Tensor s = Tensor::from({6}, {1, 2, -5, 0, 0.5f, 3});
  Tensor p = segment_softmax<float>(s, seg, 3);
  CHECK(p.at(0) + p.at(1) == doctest::Approx(1.0));
  CHECK(p.at(2) == doctest::Approx(1.0));
  CHECK(p.at(3) + p.at(4) + p.at(5) == doctest::Approx(1.0));
}

TEST_CASE("random 3-layer MLP gradients match finite differences in 64-bit mode") {
  std::mt19937_64 rng(23);
  std::vector<Tensor64> params{random_tensor({5, 8}, rng), random_tensor({8}, rng),
                               random_tensor({8, 6}, rng), random_tensor({6}, rng),
                               random_tensor({6, 3}, rng), random_tensor({3}, rng)};
  Tensor64 x = random_tensor({4, 5}, rng);
  Tensor64 target = softmax(random_tensor({4, 3}, rng), 1).detach();
  auto f = [&](const std::vector<Tensor64>& p) {
    Tensor64 h = elu(add_broadcast(matmul(x, p[0]), p[1], 1));
    h = sigmoid(add_broadcast(matmul(h, p[2]), p[3], 1));
    Tensor64 logits = add_broadcast(matmul(h, p[4]), p[5], 1);
    return mean(mul_scalar(mul(target, log_softmax(logits, 1)), -1.0));
  };
  CHECK(gradcheck(f, params) < 1e-4);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterList<float> params{{"w", Tensor::from({3}, {1, -2, 3}, true)}};
    params[0].tensor.mutable_grad();  // allocates zeros
    AdamState state;
    adam_step(params, state, {});
    CHECK(state.step == 1);
    CHECK(params[0].tensor.at(0) == 1.0f);
    CHECK(params[0].tensor.at(1) == -2.0f);
  }
  SUBCASE("first step with unit gradient moves by -lr") {
    ParameterList<double> params{{"w", Tensor64::from({1}, {0.5}, true)}};
    params[0].tensor.mutable_grad()[0] = 1.0;
    AdamState state;
    AdamOptions opt;
    adam_step(params, state, opt);
    // mhat = 1, vhat = 1 -> delta = -lr / (1 + eps)
    CHECK(params[0].tensor.at(0) == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("constant gradient drives the parameter monotonically against its sign") {
    ParameterList<float> params{{"w", Tensor::from({1}, {0.0f}, true)}};
    AdamState state;
    float previous = 0.0f;
    for (int i = 0; i < 200; ++i) {
      params[0].tensor.zero_grad();
      params[0].tensor.mutable_grad()[0] = 0.3f;
      adam_step(params, state, {});
      CHECK(params[0].tensor.at(0) < previous);
      previous = params[0].tensor.at(0);
    }
  }
  SUBCASE("non-finite gradient is a divergence") {
    ParameterList<float> params{{"w", Tensor::from({1}, {0.0f}, true)}};
    params[0].tensor.mutable_grad()[0] = std::nanf("");
    AdamState state;
    CHECK_THROWS_AS(adam_step(params, state, {}), TrainingDivergence);
    CHECK(params[0].tensor.at(0) == 0.0f);
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  std::mt19937_64 rng(29);
  ParameterList<float> tensors{{"enc.0.weight", cast<float>(random_tensor({4, 3, 3, 3}, rng))},
                               {"bias", cast<float>(random_tensor({4}, rng))},
                               {"scalar", Tensor::scalar(3.5f)}};
  std::stringstream buffer;
  write_checkpoint(buffer, tensors);
  const std::string bytes = buffer.str();
  CHECK(bytes.substr(0, 4) == "TLWT");
  auto loaded = read_checkpoint(buffer);
  REQUIRE(loaded.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded[i].name == tensors[i].name);
    CHECK(loaded[i].tensor.shape() == tensors[i].tensor.shape());
    CHECK(std::equal(loaded[i].tensor.data().begin(), loaded[i].tensor.data().end(),
                     tensors[i].tensor.data().begin()));
  }
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
}
