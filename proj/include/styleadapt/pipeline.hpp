#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "styleadapt/da_trainer.hpp"
#include "styleadapt/raster_io.hpp"
#include "styleadapt/seg_eval.hpp"
#include "styleadapt/synth_data.hpp"

namespace styleadapt {

struct SynthSection {
  int n_scenes = 200;
  SceneSpec source;
  SceneSpec target;
};

struct PrepareSection {
  std::optional<double> source_smooth_sigma;
  std::optional<double> target_smooth_sigma;
};

struct SegSection {
  SegConfig config;
  bool train_baseline = true;
};

// One JSON document drives every subcommand. A top-level "seed" is folded
// into every stochastic component (see load_pipeline_config).
struct PipelineConfig {
  std::uint64_t seed = 0;
  SynthSection synth;
  PrepareSection prepare;
  TrainerConfig da;
  SegSection seg;

  void validate() const;
};

// Fixed layout of a pipeline working directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path raw() const { return root / "raw"; }
  std::filesystem::path prepared() const { return root / "prepared"; }
  std::filesystem::path da() const { return root / "da"; }
  std::filesystem::path checkpoint() const { return da() / "checkpoint"; }
  std::filesystem::path stylized() const { return root / "stylized"; }
  std::filesystem::path seg_adapted() const { return root / "seg" / "adapted"; }
  std::filesystem::path seg_baseline() const { return root / "seg" / "baseline"; }
  std::filesystem::path results() const { return root / "eval" / "results.csv"; }
  std::filesystem::path hist(const std::string& name) const { return root / "hist" / (name + ".csv"); }
  std::filesystem::path plots() const { return root / "plots"; }
};

PipelineConfig parse_pipeline_config(const nlohmann::json& j);
// Reads and validates the config. seed_override replaces the file's seed.
// The seed is added to both synthetic seed streams and becomes the trainer
// and segmentation seed. Throws ConfigError on any problem.
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt);

Manifest cmd_synth(const PipelineConfig& cfg, const Workspace& ws);
// Normalizes raw tiles to [-1, 1], smoothing each domain when configured, and
// exports per-domain histograms.
Manifest cmd_prepare(const PipelineConfig& cfg, const Workspace& ws,
                     const std::optional<std::filesystem::path>& raw_manifest = std::nullopt);
TrainOutputs cmd_train_da(const PipelineConfig& cfg, const Workspace& ws);
Manifest cmd_stylize(const PipelineConfig& cfg, const Workspace& ws,
                     const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                     const std::optional<std::filesystem::path>& manifest = std::nullopt);
void cmd_train_seg(const PipelineConfig& cfg, const Workspace& ws);
// Scores the adapted model and, when present, the no-adaptation baseline on
// every labelled target tile. Returns the results CSV path.
std::filesystem::path cmd_evaluate(const PipelineConfig& cfg, const Workspace& ws,
                                   const std::optional<std::filesystem::path>& model = std::nullopt,
                                   const std::optional<std::filesystem::path>& baseline = std::nullopt,
                                   const std::optional<std::filesystem::path>& manifest = std::nullopt);
// Renders available source/target/stylized histograms into an SVG figure.
std::filesystem::path cmd_plot(const Workspace& ws);

std::string render_distribution_svg(const std::vector<std::pair<std::string, std::vector<BandHistogram>>>& panels);

}  // namespace styleadapt
