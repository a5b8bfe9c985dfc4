#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "terralabel/features/unet.hpp"
#include "terralabel/ingest/chips.hpp"
#include "terralabel/numerics/adam.hpp"

namespace terralabel::features {

/// One chip and its soft targets, both channel-major over an n x n grid.
struct UNetSample {
  std::size_t size = 0;
  std::vector<float> image;   // [bands][size][size], normalised
  std::vector<float> target;  // [classes][size][size], memberships
};

/// Random-access sample provider; lets large stores stream from disk.
struct SampleSource {
  std::size_t size = 0;
  std::function<UNetSample(std::size_t)> load;

  static SampleSource in_memory(std::vector<UNetSample> samples);
};

struct UNetTrainOptions {
  std::size_t max_epochs = 200;
  std::size_t patience = 15;
  std::size_t batch_size = 4;
  numerics::AdamOptions adam;
  bool augment = true;
  double noise_sigma = 0.01;  // in normalised (unit band std) units
  std::uint64_t seed = 42;
  /// When set, the best weights so far are written here after every improvement.
  std::filesystem::path checkpoint;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct UNetTrainResult {
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 = the initial weights
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

/// Mean combo loss over a source, eval mode, no augmentation.
double evaluate_loss(UNet& net, const SampleSource& source, std::size_t batch_size = 4);

/// Adam on the combo loss with rotation/noise augmentation; the held-out
/// source drives early stopping (the training loss does when it is empty).
/// On return the network holds the best weights. A non-finite gradient
/// restores (and, if configured, saves) the best weights, then rethrows.
UNetTrainResult train_unet(UNet& net, const SampleSource& train, const SampleSource& validation,
                           const UNetTrainOptions& options,
                           const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Eval-mode feature maps [final_feature_maps][size][size] for a normalised chip.
std::vector<float> extract_activations(UNet& net, const ingest::Chip& normalized);

/// Activation maps stored as a single-record TLWT file ("activations", [maps, h, w]).
void save_activations(const std::filesystem::path& path, const std::vector<float>& maps, std::size_t channels,
                      std::size_t size);
std::vector<float> load_activations(const std::filesystem::path& path, std::size_t* channels = nullptr,
                                    std::size_t* size = nullptr);

}  // namespace terralabel::features
