#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "terralabel/numerics/ops.hpp"
#include "terralabel/numerics/parameters.hpp"

namespace terralabel::features {

struct UNetConfig {
  std::size_t depth = 5;
  std::size_t base_kernels = 64;  // doubled per encoder level
  std::size_t in_channels = 12;
  std::size_t out_classes = 8;
  std::size_t final_feature_maps = 64;

  /// The tested laptop configuration: depth 3, 8 base kernels.
  static UNetConfig desk(std::size_t in_channels, std::size_t classes) {
    return {3, 8, in_channels, classes, 64};
  }
  void validate() const;
};

/// Shapes seen while running forward, for inspecting the skip wiring.
struct UNetTrace {
  // Levels are 1-based: encoder level l (l = 1 outermost) feeds decoder
  // stage depth - l, counting decoder stages upward from the bottleneck.
  struct Skip {
    std::size_t encoder_level;
    std::size_t decoder_level;
    numerics::Shape encoder_output;
    numerics::Shape decoder_input;  // upsampled tensor the skip is concatenated with
  };
  std::vector<Skip> skips;
};

struct UNetOutput {
  numerics::Tensor activations;  // [N, final_feature_maps, H, W]
  numerics::Tensor logits;       // [N, C, H, W]
  numerics::Tensor probs;        // sigmoid(logits)
};

/// Encoder of conv-BN-ReLU pairs with 2x2 max pooling; decoder of nearest
/// upsampling + 3x3 conv, skip concatenation, and conv-BN-ReLU pairs. A last
/// 3x3 conv-BN-ReLU produces the feature maps, and a 1x1 conv gives one
/// logit per (non-exclusive) class.
class UNet {
 public:
  explicit UNet(const UNetConfig& config, std::uint64_t seed = 42);

  const UNetConfig& config() const { return config_; }
  numerics::ParameterList<float>& parameters() { return params_; }
  const numerics::ParameterList<float>& parameters() const { return params_; }

  /// x [N, in_channels, H, W] with H, W divisible by 2^(depth - 1).
  UNetOutput forward(const numerics::Tensor& x, bool training, UNetTrace* trace = nullptr);

  /// Parameters plus batch-norm running statistics and the configuration.
  numerics::ParameterList<float> state() const;
  void load_state(const numerics::ParameterList<float>& state);

  void save(const std::filesystem::path& path) const;
  static UNet load(const std::filesystem::path& path);

 private:
  struct ConvBn {
    numerics::Tensor weight, gamma, beta;
    numerics::BatchNormState<float> bn;
    std::string name;
  };

  ConvBn& add_conv_bn(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k);
  numerics::Tensor apply(ConvBn& layer, const numerics::Tensor& x, bool training);

  UNetConfig config_;
  std::mt19937_64 rng_;
  std::vector<ConvBn> layers_;  // stable order: see constructor
  numerics::Tensor head_weight_, head_bias_;
  numerics::ParameterList<float> params_;
};

}  // namespace terralabel::features
