#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "temp_dir.hpp"
#include "terralabel/clustering/fcm.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/features/loss.hpp"
#include "terralabel/features/train.hpp"
#include "terralabel/features/unet.hpp"
#include "terralabel/ingest/synthetic.hpp"

using namespace terralabel;
using namespace terralabel::features;
using numerics::Tensor;
using numerics::Tensor64;

namespace {

// Independent scalar evaluation of the combo loss over [N][C][P] arrays.
double combo_oracle(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t n,
                    std::size_t c, std::size_t p) {
  double dice = 0.0, bce_sum = 0.0;
  for (std::size_t s = 0; s < n * c; ++s) {
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < p; ++i) {
      const double y = pred[s * p + i], x = truth[s * p + i];
      inter += x * y;
      sp += y;
      st += x;
      const double yc = std::clamp(y, 1e-7, 1 - 1e-7);
      bce_sum += -(x * std::log(yc) + (1 - x) * std::log(1 - yc));
    }
    dice += (2 * inter + 1e-7) / (sp + st + 1e-7);
  }
  dice /= double(n * c);
  return 0.5 * (1 - dice) + 0.5 * bce_sum / double(n * c * p);
}

struct SmallStore {
  std::vector<UNetSample> train, test;
  std::size_t bands = 12;
};

SmallStore small_store(std::size_t classes, std::size_t chip = 64) {
  ingest::SyntheticTileOptions opt;
  opt.height = 5 * chip;
  opt.width = 4 * chip;
  auto synth = ingest::make_synthetic_tile(opt);
  auto chips = ingest::chip_tile(synth.tile, chip);
  auto stats = ingest::compute_norm_stats(chips);
  clustering::ChipSampler sampler(12, 7);
  for (const auto& c : chips) sampler.add(c);
  auto model = clustering::fcm_fit(sampler.samples(), {.clusters = classes});
  SmallStore store;
  for (const auto& c : chips) {
    UNetSample s;
    s.size = chip;
    s.image = ingest::normalize(c, stats).data;
    s.target = clustering::fcm_predict(model, c).planes();
    (c.split == ingest::Split::test ? store.test : store.train).push_back(std::move(s));
  }
  return store;
}

}  // namespace

TEST_CASE("dice per class") {
  CHECK(dice_per_class(std::vector<float>{1, 1, 1}, std::vector<float>{1, 1, 1}) == 1.0);
  CHECK(dice_per_class(std::vector<float>{1, 0}, std::vector<float>{0, 1}) == 0.0);
  CHECK(dice_per_class(std::vector<float>{.5f, .5f}, std::vector<float>{1, 0}) == doctest::Approx(0.5));
  CHECK(dice_per_class(std::vector<float>{0, 0}, std::vector<float>{0, 0}) == 1.0);
  CHECK_THROWS_AS(dice_per_class(std::vector<float>{0}, std::vector<float>{0, 0}), ShapeError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> x(9), y(9);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const double d = dice_per_class(x, y);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("combo loss values") {
  SUBCASE("perfect binary prediction is ~0") {
    auto t = Tensor64::from({1, 2, 1, 2}, {1, 0, 0, 1});
    CHECK(combo_loss(t, t).item() < 1e-6);
    CHECK(combo_loss(t, t).item() >= 0.0);
  }
  SUBCASE("pred 0.5 on binary truth gives BCE = ln 2") {
    auto t = Tensor64::from({1, 1, 2, 2}, {1, 0, 1, 0});
    auto p = Tensor64::full({1, 1, 2, 2}, 0.5);
    CHECK(bce(p, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("X = [.5, .5], Y = [1, 0] gives D = 0.5") {
    auto x = Tensor64::from({1, 1, 1, 2}, {.5, .5});
    auto y = Tensor64::from({1, 1, 1, 2}, {1, 0});
    CHECK(dice_coefficient(y, x).item() == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("random 4-pixel, 2-class instance matches the scalar oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> p(8), t(8);
      for (auto& v : p) v = u(rng);
      for (auto& v : t) v = u(rng);
      const double got = combo_loss(Tensor64::from({1, 2, 2, 2}, p), Tensor64::from({1, 2, 2, 2}, t)).item();
      CHECK(got == doctest::Approx(combo_oracle(p, t, 1, 2, 4)).epsilon(1e-12));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(combo_loss(Tensor64::zeros({1, 1, 2, 2}), Tensor64::zeros({1, 2, 2, 2})), ShapeError);
  }
}

TEST_CASE("gradient check: dice, BCE and combo loss") {
  std::mt19937_64 rng(3);
  auto truth = testing::random_tensor({2, 3, 2, 2}, rng, 0.0, 1.0);
  truth.set_requires_grad(false);
  std::vector<Tensor64> in{testing::random_tensor({2, 3, 2, 2}, rng, 0.05, 0.95)};
  CHECK(testing::gradcheck([&](const auto& v) { return dice_coefficient(v[0], truth); }, in) < 1e-4);
  CHECK(testing::gradcheck([&](const auto& v) { return bce(v[0], truth); }, in) < 1e-4);
  CHECK(testing::gradcheck([&](const auto& v) { return combo_loss(v[0], truth); }, in) < 1e-4);
  // Through the sigmoid, as used in training.
  std::vector<Tensor64> logits{testing::random_tensor({1, 2, 3, 3}, rng, -3.0, 3.0)};
  auto t2 = testing::random_tensor({1, 2, 3, 3}, rng, 0.0, 1.0);
  CHECK(testing::gradcheck([&](const auto& v) { return combo_loss(numerics::sigmoid(v[0]), t2); }, logits) <
        1e-4);
}

TEST_CASE("unet shapes and skip wiring") {
  UNet net(UNetConfig::desk(12, 3));
  UNetTrace trace;
  auto out = net.forward(Tensor::zeros({2, 12, 32, 32}), false, &trace);
  CHECK(out.activations.shape() == numerics::Shape{2, 64, 32, 32});
  CHECK(out.logits.shape() == numerics::Shape{2, 3, 32, 32});
  REQUIRE(trace.skips.size() == 2);
  for (const auto& s : trace.skips) {
    CHECK(s.decoder_level == 3 - s.encoder_level);
    // Concatenation needs matching spatial size and batch.
    CHECK(s.encoder_output[0] == s.decoder_input[0]);
    CHECK(s.encoder_output[2] == s.decoder_input[2]);
    CHECK(s.encoder_output[3] == s.decoder_input[3]);
  }
  CHECK(trace.skips[0].encoder_output == numerics::Shape{2, 16, 16, 16});
  CHECK(trace.skips[1].encoder_output == numerics::Shape{2, 8, 32, 32});

  CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 12, 30, 30}), false), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 11, 32, 32}), false), ShapeError);
  CHECK_THROWS_AS(UNet(UNetConfig{1, 8, 12, 2, 64}), InvalidArgument);

  // The full configuration doubles 64 kernels per level up to 1024.
  UNetConfig full;
  std::size_t widest = 0;
  for (std::size_t l = 0; l < full.depth; ++l) widest = full.base_kernels << l;
  CHECK(widest == 1024);
}

TEST_CASE("activation extraction") {
  UNet net(UNetConfig::desk(12, 2), 5);
  ingest::Chip chip;
  chip.size = 256;
  chip.bands = 12;
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  chip.data.resize(12 * 256 * 256);
  for (auto& v : chip.data) v = g(rng);

  auto a = extract_activations(net, chip);
  CHECK(a.size() == 64u * 256 * 256);
  CHECK(extract_activations(net, chip) == a);

  SUBCASE("constant input gives spatially constant maps away from the border") {
    std::fill(chip.data.begin(), chip.data.end(), 0.7f);
    auto m = extract_activations(net, chip);
    // Zero padding reaches ~2^l pixels per conv at level l; 48 px clears it for depth 3.
    for (std::size_t c = 0; c < 64; ++c) {
      const float ref = m[c * 65536 + 128 * 256 + 128];
      for (std::size_t r = 48; r < 208; ++r)
        for (std::size_t col = 48; col < 208; ++col) {
          REQUIRE(std::abs(m[c * 65536 + r * 256 + col] - ref) <= 1e-5f * std::max(1.0f, std::abs(ref)));
        }
    }
  }
  SUBCASE("activation file round trip") {
    testing::TempDir dir;
    save_activations(dir.path() / "a.tlwt", a, 64, 256);
    std::size_t ch = 0, n = 0;
    CHECK(load_activations(dir.path() / "a.tlwt", &ch, &n) == a);
    CHECK(ch == 64);
    CHECK(n == 256);
  }
}

TEST_CASE("unet training") {
  auto store = small_store(2);
  REQUIRE(store.train.size() == 15);
  REQUIRE(store.test.size() == 5);
  auto train = SampleSource::in_memory(store.train);
  auto test = SampleSource::in_memory(store.test);

  SUBCASE("zero-epoch budget returns the initial weights") {
    UNet net(UNetConfig::desk(12, 2), 1);
    auto before = net.state();
    auto result = train_unet(net, train, test, {.max_epochs = 0});
    CHECK(result.history.empty());
    auto after = net.state();
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(std::equal(before[i].tensor.data().begin(), before[i].tensor.data().end(),
                       after[i].tensor.data().begin()));
    }
  }
  SUBCASE("loss drops below the untrained network's") {
    UNet net(UNetConfig::desk(12, 2), 1);
    const double untrained_train = evaluate_loss(net, train);
    auto result = train_unet(net, train, test, {.max_epochs = 6, .patience = 15, .batch_size = 4});
    CHECK(result.history.size() == 6);
    CHECK(result.best_val_loss < result.initial_val_loss);
    CHECK(evaluate_loss(net, train) < untrained_train);
    CHECK(evaluate_loss(net, test) == doctest::Approx(result.best_val_loss).epsilon(1e-5));
  }
  SUBCASE("checkpoint round trip reproduces the forward pass") {
    testing::TempDir dir;
    UNet net(UNetConfig::desk(12, 2), 1);
    train_unet(net, train, test, {.max_epochs = 1, .checkpoint = dir.path() / "unet.tlwt"});
    UNet loaded = UNet::load(dir.path() / "unet.tlwt");
    CHECK(loaded.config().out_classes == 2);
    CHECK(evaluate_loss(loaded, test) == evaluate_loss(net, test));
  }
  SUBCASE("divergence keeps the best weights") {
    UNet net(UNetConfig::desk(12, 2), 1);
    auto bad = store.train;
    bad[0].image[10] = NAN;
    const double before = evaluate_loss(net, test);
    CHECK_THROWS_AS(train_unet(net, SampleSource::in_memory(bad), test, {.max_epochs = 2, .augment = false}),
                    TrainingDivergence);
    CHECK(evaluate_loss(net, test) == before);
  }
}
