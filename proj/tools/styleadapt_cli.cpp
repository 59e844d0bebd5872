#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "styleadapt/errors.hpp"
#include "styleadapt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace styleadapt;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const CorruptionError*>(&e) || dynamic_cast<const CheckpointError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"styleadapt: style-transfer domain adaptation for multispectral segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "pipeline config JSON")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out_dir, "working directory")->capture_default_str();

  std::string manifest, checkpoint, model, baseline;
  app.add_subcommand("synth", "generate the paired synthetic dataset");
  app.add_subcommand("prepare", "normalize and smooth tiles, export histograms")
      ->add_option("--manifest", manifest, "raw manifest (default <out>/raw/manifest.csv)");
  app.add_subcommand("train-da", "train the style-transfer networks");
  auto* stylize = app.add_subcommand("stylize", "stylize every source tile with the target style");
  stylize->add_option("--checkpoint", checkpoint, "checkpoint dir (default <out>/da/checkpoint)");
  stylize->add_option("--manifest", manifest, "input manifest");
  app.add_subcommand("train-seg", "train the adapted (and baseline) segmentation models");
  auto* evaluate = app.add_subcommand("evaluate", "score models on the target domain");
  evaluate->add_option("--model", model, "adapted model dir");
  evaluate->add_option("--baseline", baseline, "baseline model dir");
  evaluate->add_option("--manifest", manifest, "manifest holding labelled target tiles");
  app.add_subcommand("plot", "render the per-band distribution figure");

  CLI11_PARSE(app, argc, argv);

  try {
    const PipelineConfig cfg = load_pipeline_config(config_path, seed);
    const Workspace ws{out_dir};
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") {
      const auto m = cmd_synth(cfg, ws);
      std::cout << "wrote " << m.entries.size() << " tiles to " << ws.raw().string() << "\n";
    } else if (cmd == "prepare") {
      const auto m = cmd_prepare(cfg, ws, opt_path(manifest));
      std::cout << "prepared " << m.entries.size() << " tiles in " << ws.prepared().string() << "\n";
    } else if (cmd == "train-da") {
      const auto out = cmd_train_da(cfg, ws);
      std::cout << "checkpoint: " << out.checkpoint.string() << "\n";
    } else if (cmd == "stylize") {
      const auto m = cmd_stylize(cfg, ws, opt_path(checkpoint), opt_path(manifest));
      std::cout << "stylized " << m.entries.size() << " tiles in " << ws.stylized().string() << "\n";
    } else if (cmd == "train-seg") {
      cmd_train_seg(cfg, ws);
      std::cout << "models in " << (ws.root / "seg").string() << "\n";
    } else if (cmd == "evaluate") {
      std::cout << "results: " << cmd_evaluate(cfg, ws, opt_path(model), opt_path(baseline), opt_path(manifest)).string()
                << "\n";
    } else if (cmd == "plot") {
      std::cout << "figure: " << cmd_plot(ws).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
