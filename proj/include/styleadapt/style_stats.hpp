#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace styleadapt {

inline constexpr double kStatsEpsilon = 1e-5;

// Per-channel spatial mean and standard deviation of a feature map.
struct ChannelStats {
  torch::Tensor mu;     // [C]
  torch::Tensor sigma;  // [C], sqrt(population variance + eps)

  std::int64_t channels() const { return mu.size(0); }
};

// Accepts C x H x W or 1 x C x H x W features. Differentiable.
ChannelStats channel_stats(const torch::Tensor& features);

// Re-normalizes every content channel to the style mean/std.
torch::Tensor adain(const torch::Tensor& content, const ChannelStats& content_stats, const ChannelStats& style_stats);

// Exponentially accumulated style of a domain at the bottleneck.
struct DomainStats {
  std::vector<double> mu_glob;
  std::vector<double> sigma_glob;
  double decay_rate = 0.99;
  std::uint64_t updates_seen = 0;

  static DomainStats zeros(std::size_t channels, double decay_rate = 0.99);

  std::size_t channels() const { return mu_glob.size(); }
  void validate() const;
  ChannelStats as_channel_stats(torch::ScalarType dtype = torch::kFloat32) const;

  bool operator==(const DomainStats&) const = default;
};

// mu_glob <- decay * mu_glob + (1 - decay) * mu_c, likewise for sigma.
DomainStats update_global(const DomainStats& ds, const ChannelStats& current);
void update_global_inplace(DomainStats& ds, const ChannelStats& current);

void to_json(nlohmann::json& j, const DomainStats& s);
void from_json(const nlohmann::json& j, DomainStats& s);

void save_domain_stats(const DomainStats& s, const std::filesystem::path& path);
DomainStats load_domain_stats(const std::filesystem::path& path);

}  // namespace styleadapt
