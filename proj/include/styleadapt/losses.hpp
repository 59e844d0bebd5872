#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace styleadapt {

struct LossWeights {
  double adv = 1.0;
  double cross = 20.0;
  double self = 10.0;
  double grad = 25.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Unweighted generator terms of one training step.
struct LossTerms {
  double adv_st = 0.0;  // generator adversarial, source -> target
  double adv_ts = 0.0;  // generator adversarial, target -> source
  double cross = 0.0;
  double self = 0.0;
  double grad = 0.0;
};

struct LossReport {
  LossTerms terms;
  double total_g = 0.0;
  double loss_d_s = 0.0;  // discriminator judging source-style images
  double loss_d_t = 0.0;  // discriminator judging target-style images
};

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b);

// Stacked horizontal/vertical 3x3 Sobel responses: output channel 2c is the
// horizontal response of input channel c, 2c+1 the vertical one. Borders use
// reflection padding. Accepts C x H x W or N x C x H x W.
torch::Tensor sobel_grad(const torch::Tensor& x);
torch::Tensor gradient_loss(const torch::Tensor& image, const torch::Tensor& fake);

// Probability maps are clamped to [1e-7, 1 - 1e-7] before taking logs.
inline constexpr double kProbClamp = 1e-7;
torch::Tensor gan_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake);
// Non-saturating form, -mean log D(fake).
torch::Tensor gan_loss_generator(const torch::Tensor& d_fake);

// Combines scalar terms with their weights; both adversarial directions use
// weights.adv. Throws NumericError naming the first non-finite term.
LossReport total_generator_loss(const LossTerms& terms, const LossWeights& weights);
torch::Tensor weighted_generator_loss(const torch::Tensor& adv_st, const torch::Tensor& adv_ts,
                                      const torch::Tensor& cross, const torch::Tensor& self,
                                      const torch::Tensor& grad, const LossWeights& weights);

// CSV training log with header
// iter,adv_g_st,adv_g_ts,cross,self,grad,total_g,loss_d_s,loss_d_t
class LossLog {
 public:
  static constexpr const char* kHeader = "iter,adv_g_st,adv_g_ts,cross,self,grad,total_g,loss_d_s,loss_d_t";

  explicit LossLog(const std::filesystem::path& path, bool append = false);
  void append(std::int64_t iter, const LossReport& r);
  static std::string format_row(std::int64_t iter, const LossReport& r);

 private:
  std::ofstream out_;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

}  // namespace styleadapt
