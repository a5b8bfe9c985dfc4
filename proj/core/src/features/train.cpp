#include "terralabel/features/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "terralabel/common/error.hpp"
#include "terralabel/common/image.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/features/loss.hpp"
#include "terralabel/numerics/checkpoint.hpp"

namespace terralabel::features {

using numerics::Tensor;

namespace {

std::vector<float> rotate_planes(const std::vector<float>& planes, std::size_t n, int turns) {
  if (turns == 0) return planes;
  const std::size_t area = n * n, count = planes.size() / area;
  std::vector<float> out(planes.size());
  for (std::size_t c = 0; c < count; ++c) {
    auto r = rotate_square<float>(std::span<const float>(planes).subspan(c * area, area), n, turns);
    std::copy(r.begin(), r.end(), out.begin() + c * area);
  }
  return out;
}

struct Batch {
  Tensor image, target;
};

Batch make_batch(const std::vector<UNetSample>& samples, std::size_t bands, std::size_t classes) {
  const std::size_t b = samples.size(), n = samples.front().size;
  std::vector<float> image, target;
  image.reserve(b * bands * n * n);
  target.reserve(b * classes * n * n);
  for (const auto& s : samples) {
    if (s.size != n || s.image.size() != bands * n * n || s.target.size() != classes * n * n) {
      throw ShapeError("unet batch: sample dimensions differ from the network configuration");
    }
    image.insert(image.end(), s.image.begin(), s.image.end());
    target.insert(target.end(), s.target.begin(), s.target.end());
  }
  return {Tensor::from({b, bands, n, n}, std::move(image)), Tensor::from({b, classes, n, n}, std::move(target))};
}

}  // namespace

SampleSource SampleSource::in_memory(std::vector<UNetSample> samples) {
  auto shared = std::make_shared<std::vector<UNetSample>>(std::move(samples));
  return {shared->size(), [shared](std::size_t i) { return shared->at(i); }};
}

double evaluate_loss(UNet& net, const SampleSource& source, std::size_t batch_size) {
  const auto& cfg = net.config();
  double total = 0.0;
  for (std::size_t start = 0; start < source.size; start += batch_size) {
    std::vector<UNetSample> items;
    for (std::size_t i = start; i < std::min(source.size, start + batch_size); ++i) items.push_back(source.load(i));
    Batch batch = make_batch(items, cfg.in_channels, cfg.out_classes);
    const double loss = combo_loss(net.forward(batch.image, false).probs, batch.target).item();
    total += loss * static_cast<double>(items.size());
  }
  return source.size == 0 ? 0.0 : total / static_cast<double>(source.size);
}

UNetTrainResult train_unet(UNet& net, const SampleSource& train, const SampleSource& validation,
                           const UNetTrainOptions& options,
                           const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.size == 0) throw InvalidArgument("train_unet: no training samples");
  const auto& cfg = net.config();
  const bool held_out = validation.size > 0;
  const SampleSource& monitor = held_out ? validation : train;
  if (!held_out) log::warn("train_unet: no held-out chips; early stopping monitors the training loss");

  UNetTrainResult result;
  result.initial_val_loss = evaluate_loss(net, monitor, options.batch_size);
  result.best_val_loss = result.initial_val_loss;
  auto best_state = net.state();
  if (!options.checkpoint.empty()) net.save(options.checkpoint);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(options.noise_sigma));
  std::uniform_int_distribution<int> quarter(0, 3);
  numerics::AdamState adam;
  std::vector<std::size_t> order(train.size);
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      std::vector<UNetSample> items;
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i) {
        UNetSample s = train.load(order[i]);
        if (options.augment) {
          const int turns = quarter(rng);
          s.image = rotate_planes(s.image, s.size, turns);
          s.target = rotate_planes(s.target, s.size, turns);
          for (auto& v : s.image) v += noise(rng);
        }
        items.push_back(std::move(s));
      }
      Batch batch = make_batch(items, cfg.in_channels, cfg.out_classes);
      Tensor loss = combo_loss(net.forward(batch.image, true).probs, batch.target);
      numerics::zero_grad(net.parameters());
      numerics::backward(loss);
      try {
        if (!std::isfinite(loss.item())) throw TrainingDivergence("unet: non-finite loss");
        numerics::adam_step(net.parameters(), adam, options.adam);
      } catch (const TrainingDivergence&) {
        net.load_state(best_state);
        if (!options.checkpoint.empty()) net.save(options.checkpoint);
        log::error("unet training diverged in epoch " + std::to_string(epoch) + "; kept best weights");
        throw;
      }
      epoch_loss += loss.item() * static_cast<double>(items.size());
    }
    EpochRecord record{epoch, epoch_loss / static_cast<double>(train.size),
                       evaluate_loss(net, monitor, options.batch_size)};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      best_state = net.state();
      since_best = 0;
      if (!options.checkpoint.empty()) net.save(options.checkpoint);
    } else if (++since_best >= options.patience) {
      result.early_stopped = true;
      break;
    }
  }
  net.load_state(best_state);
  return result;
}

std::vector<float> extract_activations(UNet& net, const ingest::Chip& normalized) {
  if (normalized.bands != net.config().in_channels) {
    throw ShapeError("extract_activations: chip has " + std::to_string(normalized.bands) +
                     " bands, network expects " + std::to_string(net.config().in_channels));
  }
  Tensor x = Tensor::from({1, normalized.bands, normalized.size, normalized.size}, normalized.data);
  Tensor maps = net.forward(x, false).activations;
  return std::vector<float>(maps.data().begin(), maps.data().end());
}

void save_activations(const std::filesystem::path& path, const std::vector<float>& maps, std::size_t channels,
                      std::size_t size) {
  if (maps.size() != channels * size * size) throw InvalidArgument("save_activations: size mismatch");
  numerics::save_checkpoint(path, {{"activations", Tensor::from({channels, size, size}, maps)}});
}

std::vector<float> load_activations(const std::filesystem::path& path, std::size_t* channels, std::size_t* size) {
  const auto records = numerics::load_checkpoint(path);
  if (records.size() != 1 || records[0].name != "activations" || records[0].tensor.rank() != 3) {
    throw FormatError("activation file " + path.string() + " is malformed");
  }
  const Tensor& t = records[0].tensor;
  if (channels) *channels = t.dim(0);
  if (size) *size = t.dim(1);
  return std::vector<float>(t.data().begin(), t.data().end());
}

}  // namespace terralabel::features
