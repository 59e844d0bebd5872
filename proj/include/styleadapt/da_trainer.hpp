#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "styleadapt/losses.hpp"
#include "styleadapt/networks.hpp"
#include "styleadapt/raster_io.hpp"
#include "styleadapt/style_stats.hpp"

namespace styleadapt {

struct ScheduleConfig {
  double lr_base = 1e-4;
  std::int64_t iter_max = 100000;
  std::int64_t iter_decay_start = 75000;

  void validate() const;
};

// Flat at lr_base up to iter_decay_start, then linear down to zero at iter_max.
double lr_linear(const ScheduleConfig& cfg, std::int64_t iter);

struct TrainerConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  std::int64_t iter_max = 100000;
  std::int64_t iter_decay_start = 75000;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double decay_rate = 0.99;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 5000;
  std::int64_t progress_every = 100;  // 0 disables progress lines on stderr

  ScheduleConfig generator_schedule() const { return {lr_generator, iter_max, iter_decay_start}; }
  ScheduleConfig discriminator_schedule() const { return {lr_discriminator, iter_max, iter_decay_start}; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainerConfig& c);
void from_json(const nlohmann::json& j, TrainerConfig& c);

// Stable FNV-1a digest of a JSON document's compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

enum class StepPhase {
  kStyleApplied,  // detail names the translated image: fake_a, fake_b, rec_source, rec_target
  kGeneratorUpdateBegin,
  kGeneratorUpdateEnd,
  kDiscriminatorUpdateBegin,
  kDiscriminatorUpdateEnd,
};

struct StepEvent {
  StepPhase phase;
  std::string detail;
};

using StepObserver = std::function<void(const StepEvent&)>;

// Detached copies of the images produced inside one step.
struct StepTrace {
  torch::Tensor source, target;
  torch::Tensor fake_a, fake_b;
  torch::Tensor rec_source, rec_target;
  torch::Tensor self_source, self_target;
};

// Differentiable generator objective of one step, with its intermediates.
struct GeneratorObjective {
  torch::Tensor total;
  torch::Tensor adv_st, adv_ts, cross, self, grad;
  torch::Tensor fake_a, fake_b, rec_source, rec_target, self_source, self_target;
  ChannelStats source_stats, target_stats;  // current-batch bottleneck stats
};

// Builds fake_a/fake_b from current-batch cross statistics and evaluates the
// adversarial, cross-reconstruction, self-reconstruction and gradient terms.
// Discriminators are only evaluated; freezing them is the caller's job.
GeneratorObjective generator_objective(Generator& gen_a, Generator& gen_b, Discriminator& disc_a,
                                       Discriminator& disc_b, const torch::Tensor& source,
                                       const torch::Tensor& target, const LossWeights& weights,
                                       const StepObserver& observer = {});

// Mutable state of the adversarial training loop. gen_a encodes/decodes the
// source domain and gen_b the target domain; disc_a judges source-style
// images and disc_b target-style images.
class TrainState {
 public:
  explicit TrainState(TrainerConfig cfg);

  static TrainState from_checkpoint(const std::filesystem::path& dir);
  void save_checkpoint(const std::filesystem::path& dir) const;

  const TrainerConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  Generator& gen_a() { return gen_a_; }
  Generator& gen_b() { return gen_b_; }
  Discriminator& disc_a() { return disc_a_; }
  Discriminator& disc_b() { return disc_b_; }
  const DomainStats& stats_source() const { return stats_source_; }
  const DomainStats& stats_target() const { return stats_target_; }
  double lr_generator() const { return lr_g_; }
  double lr_discriminator() const { return lr_d_; }

  void set_observer(StepObserver observer) { observer_ = std::move(observer); }
  void set_capture_trace(bool enabled) { capture_ = enabled; }
  const StepTrace& last_trace() const { return trace_; }

  // One full step: generator update with frozen discriminators, then the
  // discriminator update on detached fakes, then global statistics.
  LossReport step(const torch::Tensor& source, const torch::Tensor& target);

 private:
  void notify(StepPhase phase, std::string detail = {});

  TrainerConfig cfg_;
  std::int64_t iteration_ = 0;
  Generator gen_a_, gen_b_;
  Discriminator disc_a_, disc_b_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  DomainStats stats_source_, stats_target_;
  double lr_g_ = 0.0, lr_d_ = 0.0;
  StepObserver observer_;
  bool capture_ = false;
  StepTrace trace_;
};

LossReport train_step(TrainState& state, const Tile& source, const Tile& target);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::filesystem::path lr_log;
};

// Trains on the train split of both domains for cfg.iter_max steps. Writes
// out_dir/loss_log.csv, out_dir/lr_log.csv, periodic snapshots under
// out_dir/checkpoint_<iter>/ and the final model under out_dir/checkpoint/.
TrainOutputs train(const Manifest& manifest, const TrainerConfig& cfg, const std::filesystem::path& out_dir);

// Inference: Enc_A -> AdaIN against the stored target statistics -> Dec_B,
// decoding with the content encoder's skips.
class Stylizer {
 public:
  static Stylizer load(const std::filesystem::path& checkpoint_dir);
  Stylizer(Generator gen_a, Generator gen_b, DomainStats target_stats);

  Tile stylize(const Tile& source) const;
  // Same path with explicit style statistics in place of the stored ones.
  Tile stylize_with(const Tile& source, const ChannelStats& style) const;
  // The translation without any re-styling: Dec_B(Enc_A(x)).
  Tile translate_unstyled(const Tile& source) const;
  ChannelStats content_stats(const Tile& source) const;

 private:
  mutable Generator gen_a_, gen_b_;
  DomainStats target_stats_;
};

Tile stylize(const std::filesystem::path& checkpoint_dir, const Tile& source);

// Stylizes every source entry, writing out_dir/source/<file name> (labels
// copied through) plus out_dir/manifest.csv.
Manifest stylize_manifest(const std::filesystem::path& checkpoint_dir, const Manifest& manifest,
                          const std::filesystem::path& out_dir);

}  // namespace styleadapt
