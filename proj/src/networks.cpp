#include "styleadapt/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <sstream>

#include "styleadapt/errors.hpp"

namespace styleadapt {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out, bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
}

nn::BatchNorm2d batch_norm(int c) {
  // Batch size is 1 throughout, so running statistics would never match the
  // per-sample normalization seen in training; always use batch statistics.
  return nn::BatchNorm2d(nn::BatchNorm2dOptions(c).track_running_stats(false));
}

nn::Sequential double_conv(int in, int out) {
  // No conv bias: the following normalization would cancel it.
  return nn::Sequential(conv3x3(in, out, false), batch_norm(out), nn::ReLU(), conv3x3(out, out, false),
                        batch_norm(out), nn::ReLU());
}

class ResidualBlockImpl : public nn::Module {
 public:
  explicit ResidualBlockImpl(int channels)
      : body_(register_module("body", nn::Sequential(conv3x3(channels, channels), nn::ReLU(),
                                                     conv3x3(channels, channels)))) {}
  torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }

 private:
  nn::Sequential body_;
};
TORCH_MODULE(ResidualBlock);

torch::Tensor batched(const torch::Tensor& x) {
  if (x.dim() == 3) return x.unsqueeze(0);
  if (x.dim() != 4) throw ShapeError("expected a C x H x W or N x C x H x W tensor");
  return x;
}

void init_conv_weights(nn::Module& module, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    }
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  std::ostringstream err;
  if (in_channels < 1 || out_channels < 1) err << "channel counts must be positive; ";
  if (encoder_channels.empty()) err << "encoder needs at least one block; ";
  if (std::ranges::any_of(encoder_channels, [](int c) { return c < 1; }) ||
      std::ranges::any_of(decoder_channels, [](int c) { return c < 1; })) {
    err << "block widths must be positive; ";
  }
  std::vector<int> mirrored(encoder_channels.rbegin(), encoder_channels.rend());
  if (decoder_channels != mirrored) err << "decoder_channels must mirror encoder_channels; ";
  if (!encoder_channels.empty() && residual_channels != encoder_channels.back()) {
    err << "residual_channels must equal the last encoder width; ";
  }
  if (residual_blocks < 0) err << "residual_blocks must be nonnegative; ";
  if (!err.str().empty()) throw ConfigError("generator config: " + err.str());
}

void DiscriminatorConfig::validate() const {
  std::ostringstream err;
  if (channels.size() != 5) err << "exactly five convolution layers required; ";
  if (!channels.empty() && channels.back() != 1) err << "final layer must have one channel; ";
  if (std::ranges::any_of(channels, [](int c) { return c < 1; }) || in_channels < 1) {
    err << "channel counts must be positive; ";
  }
  if (kernel != 4 || stride != 2) err << "layers use 4x4 kernels with stride 2; ";
  if (!(dropout >= 0.0 && dropout < 1.0)) err << "dropout must lie in [0, 1); ";
  if (!err.str().empty()) throw ConfigError("discriminator config: " + err.str());
}

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = register_module("encoder", nn::ModuleList());
  int in = cfg_.in_channels;
  for (int c : cfg_.encoder_channels) {
    encoder_->push_back(double_conv(in, c));
    in = c;
  }
  residual_ = register_module("residual", nn::ModuleList());
  for (int i = 0; i < cfg_.residual_blocks; ++i) residual_->push_back(ResidualBlock(cfg_.residual_channels));
  decoder_ = register_module("decoder", nn::ModuleList());
  in = cfg_.residual_channels;
  const auto n = cfg_.encoder_channels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int skip = cfg_.encoder_channels[n - 1 - i];
    const int out = cfg_.decoder_channels[i];
    decoder_->push_back(double_conv(in + skip, out));
    in = out;
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, cfg_.out_channels, 1)));
}

EncodedFeatures GeneratorImpl::encode(const torch::Tensor& input) {
  auto x = batched(input);
  const int factor = cfg_.downsample_factor();
  if (x.size(1) != cfg_.in_channels) throw ShapeError("generator input has wrong channel count");
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0) {
    std::ostringstream msg;
    msg << "generator input " << x.size(2) << "x" << x.size(3) << " is not divisible by " << factor;
    throw ShapeError(msg.str());
  }
  EncodedFeatures out;
  for (const auto& block : *encoder_) {
    x = block->as<nn::Sequential>()->forward(x);
    out.skips.push_back(x);
    x = torch::max_pool2d(x, 2);
  }
  for (const auto& block : *residual_) x = block->as<ResidualBlock>()->forward(x);
  out.bottleneck = x;
  return out;
}

torch::Tensor GeneratorImpl::decode(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips) {
  auto x = batched(bottleneck);
  const auto n = cfg_.encoder_channels.size();
  if (skips.size() != n) throw ShapeError("decode: wrong number of skip tensors");
  if (x.size(1) != cfg_.residual_channels) throw ShapeError("decode: bottleneck has wrong channel count");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& skip = skips[n - 1 - i];
    x = torch::upsample_nearest2d(x, std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2});
    if (skip.dim() != 4 || skip.size(1) != cfg_.encoder_channels[n - 1 - i] || skip.size(2) != x.size(2) ||
        skip.size(3) != x.size(3)) {
      throw ShapeError("decode: skip tensor does not match the upsampled bottleneck");
    }
    x = decoder_[i]->as<nn::Sequential>()->forward(torch::cat({x, skip}, 1));
  }
  return torch::tanh(head_->forward(x));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  auto f = encode(x);
  return decode(f.bottleneck, f.skips);
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  body_ = register_module("body", nn::Sequential());
  int in = cfg_.in_channels;
  const auto n = cfg_.channels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int out = cfg_.channels[i];
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, cfg_.kernel).stride(cfg_.stride).padding(1)));
    if (i + 1 < n) {
      body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(cfg_.leaky_slope)));
      if (i >= 1) body_->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out)));
      body_->push_back(nn::Dropout(nn::DropoutOptions(cfg_.dropout)));
    }
    in = out;
  }
  body_->push_back(nn::Sigmoid());
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& input) {
  auto x = batched(input);
  const int stride = cfg_.patch_stride();
  if (x.size(1) != cfg_.in_channels) throw ShapeError("discriminator input has wrong channel count");
  if (x.size(2) < stride || x.size(3) < stride) {
    std::ostringstream msg;
    msg << "discriminator input " << x.size(2) << "x" << x.size(3) << " is smaller than " << stride << "x" << stride;
    throw ShapeError(msg.str());
  }
  const auto pad_h = (stride - x.size(2) % stride) % stride;
  const auto pad_w = (stride - x.size(3) % stride) % stride;
  if (pad_h != 0 || pad_w != 0) {
    x = torch::nn::functional::pad(
        x, torch::nn::functional::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  }
  return body_->forward(x);
}

Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  Generator g(cfg);
  init_conv_weights(*g, seed);
  return g;
}

Discriminator build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  Discriminator d(cfg);
  init_conv_weights(*d, seed);
  return d;
}

EncodedFeatures encode(Generator& gen, const torch::Tensor& x) { return gen->encode(x); }

torch::Tensor decode(Generator& gen, const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips) {
  return gen->decode(bottleneck, skips);
}

torch::Tensor discriminate(Discriminator& disc, const torch::Tensor& x) { return disc->forward(x); }

void set_requires_grad(nn::Module& module, bool enabled) {
  for (auto& p : module.parameters()) p.set_requires_grad(enabled);
}

std::vector<torch::Tensor> snapshot_parameters(const nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool parameters_equal(const nn::Module& module, const std::vector<torch::Tensor>& snapshot) {
  const auto params = module.parameters();
  if (params.size() != snapshot.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!torch::equal(params[i].detach(), snapshot[i])) return false;
  }
  return true;
}

void copy_parameters(const nn::Module& from, nn::Module& to) {
  const auto src = from.named_parameters();
  auto dst = to.named_parameters();
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: modules differ in structure");
  torch::NoGradGuard no_grad;
  for (const auto& item : src) {
    auto* target = dst.find(item.key());
    if (target == nullptr) throw ShapeError("copy_parameters: missing parameter " + item.key());
    target->copy_(item.value());
  }
}

torch::Tensor tile_to_tensor(const Tile& tile) {
  tile.validate();
  const Tile f = tile.dtype() == DType::kUInt8 ? normalize(tile) : tile;
  auto px = f.f32();
  return torch::from_blob(const_cast<float*>(px.data()),
                          {1, static_cast<int64_t>(f.bands), static_cast<int64_t>(f.height),
                           static_cast<int64_t>(f.width)},
                          torch::kFloat32)
      .clone();
}

Tile tensor_to_tile(const torch::Tensor& t) {
  auto x = t.detach();
  if (x.dim() == 4) {
    if (x.size(0) != 1) throw ShapeError("tensor_to_tile expects a single sample");
    x = x.squeeze(0);
  }
  if (x.dim() != 3) throw ShapeError("tensor_to_tile expects B x H x W");
  x = x.to(torch::kFloat32).contiguous();
  Tile tile = Tile::zeros_f32(static_cast<std::uint32_t>(x.size(0)), static_cast<std::uint32_t>(x.size(1)),
                              static_cast<std::uint32_t>(x.size(2)));
  std::copy_n(x.data_ptr<float>(), tile.size(), tile.f32().begin());
  return tile;
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},         {"encoder_channels", c.encoder_channels},
                     {"residual_blocks", c.residual_blocks}, {"residual_channels", c.residual_channels},
                     {"decoder_channels", c.decoder_channels}, {"out_channels", c.out_channels}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  c.in_channels = j.value("in_channels", c.in_channels);
  if (j.contains("encoder_channels")) j.at("encoder_channels").get_to(c.encoder_channels);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  if (j.contains("decoder_channels")) {
    j.at("decoder_channels").get_to(c.decoder_channels);
  } else {
    c.decoder_channels.assign(c.encoder_channels.rbegin(), c.encoder_channels.rend());
  }
  c.residual_channels = j.value("residual_channels", c.encoder_channels.empty() ? 0 : c.encoder_channels.back());
  c.out_channels = j.value("out_channels", c.out_channels);
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels}, {"channels", c.channels},          {"kernel", c.kernel},
                     {"stride", c.stride},           {"leaky_slope", c.leaky_slope}, {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig{};
  c.in_channels = j.value("in_channels", c.in_channels);
  if (j.contains("channels")) j.at("channels").get_to(c.channels);
  c.kernel = j.value("kernel", c.kernel);
  c.stride = j.value("stride", c.stride);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.dropout = j.value("dropout", c.dropout);
}

}  // namespace styleadapt
