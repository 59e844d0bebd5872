#include "styleadapt/style_stats.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "styleadapt/errors.hpp"

namespace styleadapt {

namespace {

torch::Tensor as_chw(const torch::Tensor& t, const char* what) {
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError(std::string(what) + ": batch dimension must be 1");
    return t.squeeze(0);
  }
  if (t.dim() != 3) throw ShapeError(std::string(what) + ": expected C x H x W features");
  return t;
}

}  // namespace

ChannelStats channel_stats(const torch::Tensor& features) {
  auto chw = as_chw(features, "channel_stats");
  if (chw.size(1) * chw.size(2) < 1) throw ShapeError("channel_stats: empty spatial extent");
  auto flat = chw.flatten(1);
  auto mu = flat.mean(1);
  auto var = (flat - mu.unsqueeze(1)).pow(2).mean(1);
  return {mu, (var + kStatsEpsilon).sqrt()};
}

torch::Tensor adain(const torch::Tensor& content, const ChannelStats& content_stats, const ChannelStats& style_stats) {
  const bool batched = content.dim() == 4;
  auto chw = as_chw(content, "adain");
  const auto c = chw.size(0);
  if (content_stats.channels() != c || style_stats.channels() != c) {
    throw ShapeError("adain: channel counts of content and statistics differ");
  }
  auto view = [](const torch::Tensor& v) { return v.view({-1, 1, 1}); };
  auto out = view(style_stats.sigma) * (chw - view(content_stats.mu)) / view(content_stats.sigma) +
             view(style_stats.mu);
  return batched ? out.unsqueeze(0) : out;
}

DomainStats DomainStats::zeros(std::size_t channels, double decay_rate) {
  DomainStats s{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0), decay_rate, 0};
  s.validate();
  return s;
}

void DomainStats::validate() const {
  if (mu_glob.size() != sigma_glob.size()) throw ShapeError("domain stats vectors differ in length");
  if (!(decay_rate > 0.0 && decay_rate < 1.0)) throw PreconditionError("decay_rate must lie strictly in (0, 1)");
}

ChannelStats DomainStats::as_channel_stats(torch::ScalarType dtype) const {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto mu = torch::tensor(mu_glob, opts).to(dtype);
  auto sigma = torch::tensor(sigma_glob, opts).to(dtype);
  return {mu, sigma};
}

void update_global_inplace(DomainStats& ds, const ChannelStats& current) {
  ds.validate();
  if (static_cast<std::size_t>(current.channels()) != ds.channels()) {
    throw ShapeError("update_global: statistics length mismatch");
  }
  auto mu = current.mu.detach().to(torch::kFloat64).contiguous();
  auto sigma = current.sigma.detach().to(torch::kFloat64).contiguous();
  const double* m = mu.data_ptr<double>();
  const double* s = sigma.data_ptr<double>();
  const double d = ds.decay_rate;
  for (std::size_t i = 0; i < ds.channels(); ++i) {
    ds.mu_glob[i] = d * ds.mu_glob[i] + (1.0 - d) * m[i];
    ds.sigma_glob[i] = d * ds.sigma_glob[i] + (1.0 - d) * s[i];
  }
  ++ds.updates_seen;
}

DomainStats update_global(const DomainStats& ds, const ChannelStats& current) {
  DomainStats next = ds;
  update_global_inplace(next, current);
  return next;
}

void to_json(nlohmann::json& j, const DomainStats& s) {
  j = nlohmann::json{{"decay_rate", s.decay_rate},
                     {"updates_seen", s.updates_seen},
                     {"mu_glob", s.mu_glob},
                     {"sigma_glob", s.sigma_glob}};
}

void from_json(const nlohmann::json& j, DomainStats& s) {
  j.at("decay_rate").get_to(s.decay_rate);
  j.at("updates_seen").get_to(s.updates_seen);
  j.at("mu_glob").get_to(s.mu_glob);
  j.at("sigma_glob").get_to(s.sigma_glob);
  s.validate();
}

void save_domain_stats(const DomainStats& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write domain stats: " + path.string());
  // nlohmann serializes doubles with round-trip precision.
  out << nlohmann::json(s).dump(2) << '\n';
}

DomainStats load_domain_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("missing domain stats sidecar: " + path.string());
  try {
    return nlohmann::json::parse(in).get<DomainStats>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed domain stats " + path.string() + ": " + e.what());
  }
}

}  // namespace styleadapt
