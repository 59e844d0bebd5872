#include "styleadapt/losses.hpp"

#include <cmath>
#include <cstdio>

#include "styleadapt/errors.hpp"

namespace styleadapt {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": tensor shapes differ");
}

void require_probabilities(const torch::Tensor& p, const char* what) {
  auto d = p.detach();
  if (d.numel() == 0) throw ShapeError(std::string(what) + ": empty probability map");
  // NaN fails both comparisons, so it is rejected here as well.
  if (!d.ge(0).logical_and(d.le(1)).all().item<bool>()) {
    throw DomainError(std::string(what) + ": probabilities must lie in [0, 1]");
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {adv, cross, self, grad}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "l1");
  return (a - b).abs().mean();
}

torch::Tensor sobel_grad(const torch::Tensor& input) {
  const bool batched = input.dim() == 4;
  if (input.dim() != 3 && !batched) throw ShapeError("sobel_grad: expected C x H x W");
  auto x = batched ? input : input.unsqueeze(0);
  if (x.size(2) < 3 || x.size(3) < 3) throw ShapeError("sobel_grad: image must be at least 3x3");
  const auto c = x.size(1);
  auto horiz = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, x.options()).view({3, 3});
  auto kernel = torch::stack({horiz, horiz.t()}).unsqueeze(1).repeat({c, 1, 1, 1});  // [2C,1,3,3]
  auto padded = torch::reflection_pad2d(x, {1, 1, 1, 1});
  auto out = torch::nn::functional::conv2d(padded, kernel, torch::nn::functional::Conv2dFuncOptions().groups(c));
  return batched ? out : out.squeeze(0);
}

torch::Tensor gradient_loss(const torch::Tensor& image, const torch::Tensor& fake) {
  require_same_shape(image, fake, "gradient_loss");
  return l1(sobel_grad(image), sobel_grad(fake));
}

torch::Tensor gan_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  require_probabilities(d_real, "gan_loss_discriminator(real)");
  require_probabilities(d_fake, "gan_loss_discriminator(fake)");
  auto real = d_real.clamp(kProbClamp, 1.0 - kProbClamp);
  auto fake = d_fake.clamp(kProbClamp, 1.0 - kProbClamp);
  return -real.log().mean() - (1.0 - fake).log().mean();
}

torch::Tensor gan_loss_generator(const torch::Tensor& d_fake) {
  require_probabilities(d_fake, "gan_loss_generator");
  return -d_fake.clamp(kProbClamp, 1.0 - kProbClamp).log().mean();
}

LossReport total_generator_loss(const LossTerms& terms, const LossWeights& weights) {
  const std::pair<const char*, double> named[] = {{"adv_g_st", terms.adv_st},
                                                  {"adv_g_ts", terms.adv_ts},
                                                  {"cross", terms.cross},
                                                  {"self", terms.self},
                                                  {"grad", terms.grad}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term '") + name + "'");
  }
  LossReport r;
  r.terms = terms;
  r.total_g = weights.adv * terms.adv_st + weights.adv * terms.adv_ts + weights.cross * terms.cross +
              weights.self * terms.self + weights.grad * terms.grad;
  return r;
}

torch::Tensor weighted_generator_loss(const torch::Tensor& adv_st, const torch::Tensor& adv_ts,
                                      const torch::Tensor& cross, const torch::Tensor& self,
                                      const torch::Tensor& grad, const LossWeights& weights) {
  return weights.adv * adv_st + weights.adv * adv_ts + weights.cross * cross + weights.self * self +
         weights.grad * grad;
}

LossLog::LossLog(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw DataError("cannot open loss log: " + path.string());
  if (!append) out_ << kHeader << '\n';
}

std::string LossLog::format_row(std::int64_t iter, const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(iter),
                r.terms.adv_st, r.terms.adv_ts, r.terms.cross, r.terms.self, r.terms.grad, r.total_g, r.loss_d_s,
                r.loss_d_t);
  return buf;
}

void LossLog::append(std::int64_t iter, const LossReport& r) {
  out_ << format_row(iter, r) << '\n';
  out_.flush();
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"adv", w.adv}, {"cross", w.cross}, {"self", w.self}, {"grad", w.grad}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  w.adv = j.value("adv", w.adv);
  w.cross = j.value("cross", w.cross);
  w.self = j.value("self", w.self);
  w.grad = j.value("grad", w.grad);
}

}  // namespace styleadapt
