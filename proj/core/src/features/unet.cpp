#include "terralabel/features/unet.hpp"

#include "terralabel/common/error.hpp"
#include "terralabel/numerics/checkpoint.hpp"

namespace terralabel::features {

using numerics::Tensor;
namespace ops = numerics;

void UNetConfig::validate() const {
  if (depth < 2) throw InvalidArgument("unet: depth must be >= 2");
  if (base_kernels < 4) throw InvalidArgument("unet: base_kernels must be >= 4");
  if (in_channels == 0 || out_classes == 0 || final_feature_maps == 0) {
    throw InvalidArgument("unet: channel counts must be positive");
  }
}

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {
  config_.validate();
  // Reserve so references handed out by add_conv_bn stay valid.
  layers_.reserve(4 * config_.depth + 1);
  const std::size_t d = config_.depth, b = config_.base_kernels;
  std::size_t cin = config_.in_channels;
  for (std::size_t l = 0; l < d; ++l) {
    const std::size_t c = b << l;
    add_conv_bn("enc" + std::to_string(l) + ".conv0", cin, c, 3);
    add_conv_bn("enc" + std::to_string(l) + ".conv1", c, c, 3);
    cin = c;
  }
  for (std::size_t l = d - 1; l-- > 0;) {
    const std::size_t c = b << l;
    add_conv_bn("dec" + std::to_string(l) + ".up", c * 2, c, 3);
    add_conv_bn("dec" + std::to_string(l) + ".conv0", c * 2, c, 3);
    add_conv_bn("dec" + std::to_string(l) + ".conv1", c, c, 3);
  }
  add_conv_bn("features", b, config_.final_feature_maps, 3);
  head_weight_ = ops::he_uniform<float>({config_.out_classes, config_.final_feature_maps, 1, 1},
                                        config_.final_feature_maps, rng_);
  head_weight_.set_requires_grad(true);
  head_bias_ = Tensor::zeros({config_.out_classes}, true);
  params_.push_back({"head.weight", head_weight_});
  params_.push_back({"head.bias", head_bias_});
}

UNet::ConvBn& UNet::add_conv_bn(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
  ConvBn layer;
  layer.name = name;
  layer.weight = ops::he_uniform<float>({cout, cin, k, k}, cin * k * k, rng_);
  layer.weight.set_requires_grad(true);
  layer.gamma = Tensor::full({cout}, 1.0f, true);
  layer.beta = Tensor::zeros({cout}, true);
  layer.bn = numerics::BatchNormState<float>(cout);
  params_.push_back({name + ".weight", layer.weight});
  params_.push_back({name + ".gamma", layer.gamma});
  params_.push_back({name + ".beta", layer.beta});
  layers_.push_back(std::move(layer));
  return layers_.back();
}

Tensor UNet::apply(ConvBn& layer, const Tensor& x, bool training) {
  const std::size_t pad = layer.weight.dim(2) / 2;
  return ops::relu(ops::batch_norm2d(ops::conv2d(x, layer.weight, pad), layer.gamma, layer.beta, layer.bn,
                                     training));
}

UNetOutput UNet::forward(const Tensor& x, bool training, UNetTrace* trace) {
  const std::size_t d = config_.depth;
  const std::size_t multiple = std::size_t{1} << (d - 1);
  if (x.rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) % multiple || x.dim(3) % multiple) {
    throw ShapeError("unet: input " + numerics::shape_string(x.shape()) + " needs " +
                     std::to_string(config_.in_channels) + " channels and sides divisible by " +
                     std::to_string(multiple));
  }
  std::size_t next = 0;
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t l = 0; l < d; ++l) {
    if (l > 0) h = ops::max_pool2x2(h);
    h = apply(layers_[next++], h, training);
    h = apply(layers_[next++], h, training);
    skips.push_back(h);
  }
  for (std::size_t l = d - 1; l-- > 0;) {
    Tensor up = apply(layers_[next++], ops::upsample_nearest2x(h), training);
    if (trace) trace->skips.push_back({l + 1, d - 1 - l, skips[l].shape(), up.shape()});
    h = ops::concat<float>({skips[l], up}, 1);
    h = apply(layers_[next++], h, training);
    h = apply(layers_[next++], h, training);
  }
  UNetOutput out;
  out.activations = apply(layers_[next++], h, training);
  out.logits = ops::add_broadcast(ops::conv2d(out.activations, head_weight_, 0), head_bias_, 1);
  out.probs = ops::sigmoid(out.logits);
  return out;
}

ops::ParameterList<float> UNet::state() const {
  ops::ParameterList<float> s;
  for (const auto& p : params_) s.push_back({p.name, p.tensor.detach()});
  for (const auto& layer : layers_) {
    s.push_back({layer.name + ".running_mean", Tensor::from({layer.bn.running_mean.size()}, layer.bn.running_mean)});
    s.push_back({layer.name + ".running_var", Tensor::from({layer.bn.running_var.size()}, layer.bn.running_var)});
  }
  s.push_back({"config", Tensor::from({5}, {float(config_.depth), float(config_.base_kernels),
                                             float(config_.in_channels), float(config_.out_classes),
                                             float(config_.final_feature_maps)})});
  return s;
}

void UNet::load_state(const ops::ParameterList<float>& state) {
  ops::assign_parameters(params_, state);
  for (auto& layer : layers_) {
    for (const auto& t : state) {
      if (t.name == layer.name + ".running_mean") {
        layer.bn.running_mean.assign(t.tensor.data().begin(), t.tensor.data().end());
      } else if (t.name == layer.name + ".running_var") {
        layer.bn.running_var.assign(t.tensor.data().begin(), t.tensor.data().end());
      }
    }
  }
}

void UNet::save(const std::filesystem::path& path) const { ops::save_checkpoint(path, state()); }

UNet UNet::load(const std::filesystem::path& path) {
  const auto state = ops::load_checkpoint(path);
  UNetConfig config;
  bool found = false;
  for (const auto& t : state) {
    if (t.name != "config") continue;
    if (t.tensor.numel() != 5) throw FormatError("unet checkpoint: malformed config record");
    auto v = t.tensor.data();
    config = {std::size_t(v[0]), std::size_t(v[1]), std::size_t(v[2]), std::size_t(v[3]), std::size_t(v[4])};
    found = true;
  }
  if (!found) throw FormatError("unet checkpoint " + path.string() + " has no config record");
  UNet net(config);
  net.load_state(state);
  return net;
}

}  // namespace terralabel::features
