#include "styleadapt/seg_eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "epoch_stream.hpp"
#include "styleadapt/errors.hpp"
#include "styleadapt/networks.hpp"
#include "styleadapt/synth_data.hpp"

namespace styleadapt {
namespace fs = std::filesystem;
namespace nn = torch::nn;

void SegConfig::validate() const {
  if (!(lr_base > 0.0)) throw ConfigError("seg lr_base must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("seg weight_decay must be nonnegative");
  if (!(power > 0.0)) throw ConfigError("seg poly power must be positive");
  if (batch_size < 1) throw ConfigError("seg batch size must be at least 1");
  if (iter_max < 1) throw ConfigError("seg iter_max must be positive");
  if (num_classes != kNumClasses) throw ConfigError("segmentation uses exactly five classes");
  if (widths.size() != 3 || widths[0] < 1 || widths[1] < 1 || widths[2] < 1) {
    throw ConfigError("seg widths must list three positive block widths");
  }
  if (backbone != "compact_unet") throw ConfigError("unknown segmentation backbone '" + backbone + "'");
}

void to_json(nlohmann::json& j, const SegConfig& c) {
  j = nlohmann::json{{"lr_base", c.lr_base},         {"weight_decay", c.weight_decay},
                     {"power", c.power},             {"batch_size", c.batch_size},
                     {"iter_max", c.iter_max},       {"num_classes", c.num_classes},
                     {"backbone", c.backbone},       {"widths", c.widths},
                     {"seed", c.seed},               {"progress_every", c.progress_every}};
}

void from_json(const nlohmann::json& j, SegConfig& c) {
  c = SegConfig{};
  c.lr_base = j.value("lr_base", c.lr_base);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.power = j.value("power", c.power);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iter_max = j.value("iter_max", c.iter_max);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.backbone = j.value("backbone", c.backbone);
  if (j.contains("widths")) j.at("widths").get_to(c.widths);
  c.seed = j.value("seed", c.seed);
  c.progress_every = j.value("progress_every", c.progress_every);
}

double poly_lr(const SegConfig& cfg, std::int64_t iter) {
  if (iter < 0 || iter > cfg.iter_max) throw PreconditionError("poly_lr: iteration out of range");
  return cfg.lr_base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(cfg.iter_max), cfg.power);
}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> prediction) {
  if (truth.size() != prediction.size()) throw ShapeError("confusion: truth and prediction sizes differ");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= kSize || prediction[i] >= kSize) throw DataError("confusion: class id out of range");
    ++counts_[truth[i]][prediction[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (int r = 0; r < kSize; ++r) {
    for (int c = 0; c < kSize; ++c) counts_[r][c] += other.counts_[r][c];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (const auto& row : counts_) {
    for (auto v : row) sum += v;
  }
  return sum;
}

double ConfusionMatrix::iou(int k) const {
  std::uint64_t fp = 0, fn = 0;
  for (int i = 0; i < kSize; ++i) {
    if (i == k) continue;
    fn += counts_[k][i];
    fp += counts_[i][k];
  }
  const std::uint64_t tp = counts_[k][k];
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < kSize; ++k) {
    const double v = iou(k);
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
}

std::vector<double> compute_band_means(const Manifest& manifest) {
  std::vector<double> sums;
  std::uint64_t pixels = 0;
  for (const auto& e : manifest.entries) {
    ManifestEntry pixels_only = e;
    pixels_only.label_path.reset();
    Tile t = load_entry(pixels_only);
    if (t.dtype() == DType::kUInt8) t = normalize(t);
    if (sums.empty()) sums.assign(t.bands, 0.0);
    if (sums.size() != t.bands) throw ShapeError("band count differs across training tiles");
    auto px = t.f32();
    for (std::uint32_t b = 0; b < t.bands; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < t.plane_size(); ++i) s += px[b * t.plane_size() + i];
      sums[b] += s;
    }
    pixels += t.plane_size();
  }
  if (pixels == 0) throw ManifestError("cannot compute band means of an empty training set");
  for (double& s : sums) s /= static_cast<double>(pixels);
  return sums;
}

TrainingSet source_only_training_set(const Manifest& source_manifest) {
  TrainingSet set;
  for (const auto& e : source_manifest.select(Domain::kSource)) {
    if (!e.label_path) throw ManifestError("source tile without labels: " + e.tile_path.string());
    set.entries.entries.push_back(e);
  }
  if (set.entries.entries.empty()) throw ManifestError("no labelled source tiles");
  set.band_means = compute_band_means(set.entries);
  return set;
}

TrainingSet prepare_training_set(const Manifest& source_manifest, const fs::path& stylized_dir) {
  TrainingSet set;
  std::vector<ManifestEntry> stylized;
  for (const auto& e : source_manifest.select(Domain::kSource)) {
    if (!e.label_path) throw ManifestError("source tile without labels: " + e.tile_path.string());
    const fs::path counterpart = stylized_dir / "source" / e.tile_path.filename();
    if (!fs::exists(counterpart)) {
      throw ManifestError("missing stylized counterpart for " + e.tile_path.string() + " (expected " +
                          counterpart.string() + ")");
    }
    set.entries.entries.push_back(e);
    stylized.push_back({counterpart, Domain::kSource, e.split, e.label_path});
  }
  if (set.entries.entries.empty()) throw ManifestError("no labelled source tiles");
  set.entries.entries.insert(set.entries.entries.end(), stylized.begin(), stylized.end());
  set.band_means = compute_band_means(set.entries);
  return set;
}

namespace {

nn::Sequential seg_block(int in, int out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)), nn::BatchNorm2d(out), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)), nn::BatchNorm2d(out), nn::ReLU());
}

// Three-level encoder-decoder with skip concatenation.
class CompactUNetImpl : public SegmentationNetworkImpl {
 public:
  CompactUNetImpl(int in_channels, const std::vector<int>& w, int classes) {
    enc1_ = register_module("enc1", seg_block(in_channels, w[0]));
    enc2_ = register_module("enc2", seg_block(w[0], w[1]));
    enc3_ = register_module("enc3", seg_block(w[1], w[2]));
    dec2_ = register_module("dec2", seg_block(w[2] + w[1], w[1]));
    dec1_ = register_module("dec1", seg_block(w[1] + w[0], w[0]));
    head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(w[0], classes, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x) override {
    if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) throw ShapeError("segmentation input must be divisible by 4");
    auto e1 = enc1_->forward(x);
    auto e2 = enc2_->forward(torch::max_pool2d(e1, 2));
    auto e3 = enc3_->forward(torch::max_pool2d(e2, 2));
    auto up2 = torch::upsample_nearest2d(e3, std::vector<int64_t>{e2.size(2), e2.size(3)});
    auto d2 = dec2_->forward(torch::cat({up2, e2}, 1));
    auto up1 = torch::upsample_nearest2d(d2, std::vector<int64_t>{e1.size(2), e1.size(3)});
    auto d1 = dec1_->forward(torch::cat({up1, e1}, 1));
    return head_->forward(d1);
  }

 private:
  nn::Sequential enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  nn::Conv2d head_{nullptr};
};

torch::Tensor centered_input(const Tile& tile, const std::vector<double>& means) {
  auto x = tile_to_tensor(tile);
  if (static_cast<std::size_t>(x.size(1)) != means.size()) throw ShapeError("band means do not match tile bands");
  auto m = torch::tensor(means, torch::kFloat64).to(torch::kFloat32).view({1, -1, 1, 1});
  return x - m;
}

torch::Tensor label_tensor(const Tile& tile) {
  const auto& lab = *tile.labels;
  return torch::from_blob(const_cast<std::uint8_t*>(lab.data()),
                          {static_cast<int64_t>(tile.height), static_cast<int64_t>(tile.width)}, torch::kUInt8)
      .to(torch::kInt64);
}

}  // namespace

std::shared_ptr<SegmentationNetworkImpl> make_segmentation_network(const SegConfig& cfg, int in_channels) {
  cfg.validate();
  return std::make_shared<CompactUNetImpl>(in_channels, cfg.widths, cfg.num_classes);
}

void SegModel::save(const fs::path& dir) const {
  fs::create_directories(dir);
  torch::serialize::OutputArchive archive;
  network->save(archive);
  archive.save_to((dir / "model.pt").string());
  nlohmann::json meta{{"config", config}, {"band_means", band_means}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw DataError("cannot write segmentation model metadata in " + dir.string());
  out << meta.dump(2) << '\n';
}

SegModel SegModel::load(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw CheckpointError("missing segmentation model metadata in " + dir.string());
  SegModel m;
  try {
    auto meta = nlohmann::json::parse(in);
    m.config = meta.at("config").get<SegConfig>();
    m.band_means = meta.at("band_means").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed segmentation metadata: " + std::string(e.what()));
  }
  m.network = make_segmentation_network(m.config, static_cast<int>(m.band_means.size()));
  if (!fs::exists(dir / "model.pt")) throw CheckpointError("missing segmentation weights in " + dir.string());
  torch::serialize::InputArchive archive;
  archive.load_from((dir / "model.pt").string());
  m.network->load(archive);
  return m;
}

std::vector<std::uint8_t> SegModel::predict(const Tile& tile) const {
  torch::NoGradGuard no_grad;
  const bool was_training = network->is_training();
  network->eval();
  auto logits = network->forward(centered_input(tile, band_means));
  if (was_training) network->train();
  auto pred = logits.argmax(1).squeeze(0).to(torch::kUInt8).contiguous();
  return {pred.data_ptr<std::uint8_t>(), pred.data_ptr<std::uint8_t>() + pred.numel()};
}

SegModel train_segmentation(const TrainingSet& set, const SegConfig& cfg, const fs::path& out_dir,
                            SegTrainLog* log) {
  cfg.validate();
  if (set.entries.entries.empty()) throw ManifestError("empty segmentation training set");
  std::vector<torch::Tensor> inputs, targets;
  for (const auto& e : set.entries.entries) {
    if (!e.label_path) throw DataError("unlabelled entry in segmentation training set: " + e.tile_path.string());
    Tile t = load_entry(e);
    inputs.push_back(centered_input(t, set.band_means).squeeze(0));
    targets.push_back(label_tensor(t));
  }

  torch::manual_seed(cfg.seed);
  SegModel model{cfg, set.band_means, make_segmentation_network(cfg, static_cast<int>(set.band_means.size()))};
  model.network->train();
  torch::optim::Adam opt(model.network->parameters(),
                         torch::optim::AdamOptions(cfg.lr_base).weight_decay(cfg.weight_decay));

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "train_log.csv", std::ios::trunc);
  csv << "iter,lr,loss\n";
  detail::EpochStream stream(inputs.size(), cfg.seed * 2 + 7);
  for (std::int64_t iter = 0; iter < cfg.iter_max; ++iter) {
    const double lr = poly_lr(cfg, iter);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    std::vector<torch::Tensor> xb, yb;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto i = stream.next();
      xb.push_back(inputs[i]);
      yb.push_back(targets[i]);
    }
    auto logits = model.network->forward(torch::stack(xb));
    auto loss = torch::nn::functional::cross_entropy(logits, torch::stack(yb));
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite segmentation loss at iteration " + std::to_string(iter));
    }
    if (log) {
      log->loss.push_back(value);
      log->lr.push_back(lr);
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.9g\n", static_cast<long long>(iter), lr, value);
    csv << buf;
    if (cfg.progress_every > 0 && (iter + 1) % cfg.progress_every == 0) {
      std::cerr << "[train-seg] iter " << iter + 1 << "/" << cfg.iter_max << " loss " << value << '\n';
    }
  }
  model.network->eval();
  model.save(out_dir);
  return model;
}

EvalResult evaluate(const SegModel& model, const Manifest& manifest) {
  if (manifest.entries.empty()) throw ManifestError("evaluation manifest is empty");
  EvalResult result;
  for (const auto& e : manifest.entries) {
    if (!e.label_path) throw DataError("evaluation tile without labels: " + e.tile_path.string());
    Tile t = load_entry(e);
    result.confusion.add(*t.labels, model.predict(t));
  }
  for (int k = 0; k < kNumClasses; ++k) result.iou[k] = result.confusion.iou(k);
  result.miou = result.confusion.miou();
  return result;
}

void write_results_csv(const std::vector<std::pair<std::string, EvalResult>>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write results: " + path.string());
  auto pct = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", 100.0 * v);
    return std::string(buf);
  };
  out << kResultsHeader << '\n';
  for (const auto& [name, r] : rows) {
    out << name << ',' << pct(r.miou);
    for (double v : r.iou) out << ',' << pct(v);
    out << '\n';
  }
}

}  // namespace styleadapt
