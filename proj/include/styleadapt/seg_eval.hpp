#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "styleadapt/raster_io.hpp"

namespace styleadapt {

struct SegConfig {
  double lr_base = 1e-4;
  double weight_decay = 5e-4;
  double power = 0.9;
  int batch_size = 8;
  std::int64_t iter_max = 3000;
  int num_classes = kNumClasses;
  std::string backbone = "compact_unet";
  std::vector<int> widths{16, 32, 64};
  std::uint64_t seed = 0;
  std::int64_t progress_every = 100;

  void validate() const;
};

void to_json(nlohmann::json& j, const SegConfig& c);
void from_json(const nlohmann::json& j, SegConfig& c);

// lr_base * (1 - iter / iter_max)^power
double poly_lr(const SegConfig& cfg, std::int64_t iter);

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  static constexpr int kSize = kNumClasses;

  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> prediction);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(int truth, int prediction) const { return counts_[truth][prediction]; }
  std::uint64_t total() const;
  // TP / (TP + FP + FN); NaN when the class is absent from truth and prediction.
  double iou(int k) const;
  // Unweighted mean over classes with a defined IoU.
  double miou() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::array<std::array<std::uint64_t, kSize>, kSize> counts_{};
};

struct EvalResult {
  ConfusionMatrix confusion;
  std::array<double, kNumClasses> iou{};
  double miou = 0.0;
};

struct TrainingSet {
  Manifest entries;
  std::vector<double> band_means;  // per band, in normalized [-1, 1] units
};

// Per-band mean over every pixel of every entry, in normalized units.
std::vector<double> compute_band_means(const Manifest& manifest);

// Originals plus their stylized counterparts (found in stylized_dir/source/
// under the same file name), each carrying the original label raster.
TrainingSet prepare_training_set(const Manifest& source_manifest, const std::filesystem::path& stylized_dir);
// No-adaptation baseline: labelled source tiles only.
TrainingSet source_only_training_set(const Manifest& source_manifest);

class SegmentationNetworkImpl : public torch::nn::Module {
 public:
  // x: N x bands x H x W  ->  N x classes x H x W logits
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

std::shared_ptr<SegmentationNetworkImpl> make_segmentation_network(const SegConfig& cfg, int in_channels);

struct SegModel {
  SegConfig config;
  std::vector<double> band_means;
  std::shared_ptr<SegmentationNetworkImpl> network;

  void save(const std::filesystem::path& dir) const;
  static SegModel load(const std::filesystem::path& dir);

  // Class id per pixel for one tile.
  std::vector<std::uint8_t> predict(const Tile& tile) const;
};

struct SegTrainLog {
  std::vector<double> loss;
  std::vector<double> lr;
};

// Cross-entropy, Adam with weight decay and the poly schedule. Writes
// out_dir/model.pt, out_dir/model.json and out_dir/train_log.csv.
SegModel train_segmentation(const TrainingSet& set, const SegConfig& cfg, const std::filesystem::path& out_dir,
                            SegTrainLog* log = nullptr);

// Scores every entry of the manifest; all entries must carry labels.
EvalResult evaluate(const SegModel& model, const Manifest& manifest);

// `model,miou,background,vegetation,hydro,roads,buildings`, values in percent.
inline constexpr const char* kResultsHeader = "model,miou,background,vegetation,hydro,roads,buildings";
void write_results_csv(const std::vector<std::pair<std::string, EvalResult>>& rows,
                       const std::filesystem::path& path);

}  // namespace styleadapt
