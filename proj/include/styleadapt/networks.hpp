#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "styleadapt/raster_io.hpp"

namespace styleadapt {

struct GeneratorConfig {
  int in_channels = 4;
  std::vector<int> encoder_channels{64, 128, 256};
  int residual_blocks = 3;
  int residual_channels = 256;
  std::vector<int> decoder_channels{256, 128, 64};
  int out_channels = 4;

  void validate() const;
  // Spatial reduction between the input and the bottleneck.
  int downsample_factor() const { return 1 << encoder_channels.size(); }
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  int in_channels = 4;
  std::vector<int> channels{64, 128, 256, 512, 1};
  int kernel = 4;
  int stride = 2;
  double leaky_slope = 0.2;
  double dropout = 0.5;

  void validate() const;
  // Minimum input extent; inputs are padded up to a multiple of this.
  int patch_stride() const { return 1 << channels.size(); }
  bool operator==(const DiscriminatorConfig&) const = default;
};

// Output of the encoder and residual stack. skips[i] is the activation of
// encoder block i before its downsampling, so skips[0] is full resolution.
struct EncodedFeatures {
  torch::Tensor bottleneck;
  std::vector<torch::Tensor> skips;
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig cfg);

  // x: 1 x C x H x W (or C x H x W) with H, W divisible by downsample_factor().
  EncodedFeatures encode(const torch::Tensor& x);
  // Upsamples the bottleneck, concatenating each skip at matching resolution.
  torch::Tensor decode(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips);
  torch::Tensor forward(const torch::Tensor& x);

  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  torch::nn::ModuleList encoder_{nullptr};
  torch::nn::ModuleList residual_{nullptr};
  torch::nn::ModuleList decoder_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorConfig cfg);

  // Patch probability map of shape 1 x 1 x ceil(H/32) x ceil(W/32).
  torch::Tensor forward(const torch::Tensor& x);

  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

// Conv weights ~ N(0, 0.02), conv biases zero, drawn from a local generator
// so construction never touches the global torch RNG.
Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

EncodedFeatures encode(Generator& gen, const torch::Tensor& x);
torch::Tensor decode(Generator& gen, const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips);
torch::Tensor discriminate(Discriminator& disc, const torch::Tensor& x);

void set_requires_grad(torch::nn::Module& module, bool enabled);
std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& module);
bool parameters_equal(const torch::nn::Module& module, const std::vector<torch::Tensor>& snapshot);
void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to);

// 1 x B x H x W float tensor; uint8 tiles are normalized on the way in.
torch::Tensor tile_to_tensor(const Tile& tile);
// Inverse for float tiles; accepts 1 x B x H x W or B x H x W.
Tile tensor_to_tile(const torch::Tensor& t);

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

}  // namespace styleadapt
