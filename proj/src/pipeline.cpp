#include "styleadapt/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "styleadapt/errors.hpp"

namespace styleadapt {
namespace fs = std::filesystem;

namespace {

std::optional<double> optional_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::vector<BandHistogram> dataset_histogram(const Manifest& m, Domain d) {
  std::vector<Tile> tiles;
  for (const auto& e : m.select(d)) {
    ManifestEntry pixels_only = e;
    pixels_only.label_path.reset();
    Tile t = load_entry(pixels_only);
    tiles.push_back(t.dtype() == DType::kUInt8 ? t : denormalize(t));
  }
  return histogram(tiles);
}

// Later stages read the prepared tiles when `prepare` has run, otherwise the
// raw synthetic tiles (tile_to_tensor normalizes uint8 input on the fly).
fs::path input_manifest(const Workspace& ws) {
  const fs::path prepared = ws.prepared() / "manifest.csv";
  return fs::exists(prepared) ? prepared : ws.raw() / "manifest.csv";
}

}  // namespace

void PipelineConfig::validate() const {
  if (synth.n_scenes < 1) throw ConfigError("synth.n_scenes must be positive");
  try {
    synth.source.validate();
    synth.target.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  if (synth.source.class_proportions != synth.target.class_proportions ||
      synth.source.seed != synth.target.seed || synth.source.height != synth.target.height ||
      synth.source.width != synth.target.width) {
    throw ConfigError("synth: source and target must share proportions, layout seed and size");
  }
  for (const auto& s : {prepare.source_smooth_sigma, prepare.target_smooth_sigma}) {
    if (s && !(*s > 0.0)) throw ConfigError("prepare: smoothing sigma must be positive");
  }
  da.validate();
  const auto factor = static_cast<std::uint32_t>(da.generator.downsample_factor());
  if (synth.source.height % factor != 0 || synth.source.width % factor != 0 ||
      synth.source.height < static_cast<std::uint32_t>(da.discriminator.patch_stride())) {
    throw ConfigError("synth tile size incompatible with the generator/discriminator");
  }
  seg.config.validate();
}

PipelineConfig parse_pipeline_config(const nlohmann::json& j) {
  PipelineConfig cfg;
  try {
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      cfg.synth.n_scenes = s.value("n_scenes", cfg.synth.n_scenes);
      if (s.contains("source")) s.at("source").get_to(cfg.synth.source);
      if (s.contains("target")) s.at("target").get_to(cfg.synth.target);
    }
    if (j.contains("prepare")) {
      cfg.prepare.source_smooth_sigma = optional_double(j.at("prepare"), "source_smooth_sigma");
      cfg.prepare.target_smooth_sigma = optional_double(j.at("prepare"), "target_smooth_sigma");
    }
    if (j.contains("da")) j.at("da").get_to(cfg.da);
    if (j.contains("seg")) {
      j.at("seg").get_to(cfg.seg.config);
      cfg.seg.train_baseline = j.at("seg").value("train_baseline", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  if (path.empty()) throw ConfigError("no config file given");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  PipelineConfig cfg = parse_pipeline_config(j);
  if (seed_override) cfg.seed = *seed_override;
  for (SceneSpec* spec : {&cfg.synth.source, &cfg.synth.target}) {
    spec->seed += cfg.seed * 1000003ull;
    spec->noise_seed += cfg.seed * 1000003ull;
  }
  cfg.da.seed = cfg.seed;
  cfg.seg.config.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

Manifest cmd_synth(const PipelineConfig& cfg, const Workspace& ws) {
  Manifest m = generate_dataset(cfg.synth.n_scenes, cfg.synth.source, cfg.synth.target, ws.raw());
  write_histogram_csv(dataset_histogram(m, Domain::kSource), ws.hist("source"));
  write_histogram_csv(dataset_histogram(m, Domain::kTarget), ws.hist("target"));
  return m;
}

Manifest cmd_prepare(const PipelineConfig& cfg, const Workspace& ws, const std::optional<fs::path>& raw_manifest) {
  const Manifest raw = read_manifest(raw_manifest.value_or(ws.raw() / "manifest.csv"));
  Manifest out;
  for (const auto& e : raw.entries) {
    Tile t = load_entry(e);
    if (t.dtype() == DType::kUInt8) t = normalize(t);
    const auto sigma = e.domain == Domain::kSource ? cfg.prepare.source_smooth_sigma : cfg.prepare.target_smooth_sigma;
    if (sigma) t = gaussian_smooth(t, *sigma);
    const fs::path path = ws.prepared() / to_string(e.domain) / e.tile_path.filename();
    write_tile(t, path);
    out.entries.push_back({path, e.domain, e.split, t.labels ? std::optional(label_path_for(path)) : std::nullopt});
  }
  write_manifest(out, ws.prepared() / "manifest.csv");
  write_histogram_csv(dataset_histogram(out, Domain::kSource), ws.hist("source"));
  write_histogram_csv(dataset_histogram(out, Domain::kTarget), ws.hist("target"));
  return out;
}

TrainOutputs cmd_train_da(const PipelineConfig& cfg, const Workspace& ws) {
  return train(read_manifest(input_manifest(ws)), cfg.da, ws.da());
}

Manifest cmd_stylize(const PipelineConfig&, const Workspace& ws, const std::optional<fs::path>& checkpoint,
                     const std::optional<fs::path>& manifest) {
  const Manifest src = read_manifest(manifest.value_or(input_manifest(ws)));
  Manifest styled = stylize_manifest(checkpoint.value_or(ws.checkpoint()), src, ws.stylized());
  write_histogram_csv(dataset_histogram(styled, Domain::kSource), ws.hist("stylized"));
  return styled;
}

void cmd_train_seg(const PipelineConfig& cfg, const Workspace& ws) {
  const Manifest prepared = read_manifest(input_manifest(ws));
  train_segmentation(prepare_training_set(prepared, ws.stylized()), cfg.seg.config, ws.seg_adapted());
  if (cfg.seg.train_baseline) {
    train_segmentation(source_only_training_set(prepared), cfg.seg.config, ws.seg_baseline());
  }
}

fs::path cmd_evaluate(const PipelineConfig&, const Workspace& ws, const std::optional<fs::path>& model,
                      const std::optional<fs::path>& baseline, const std::optional<fs::path>& manifest) {
  const Manifest all = read_manifest(manifest.value_or(input_manifest(ws)));
  Manifest target{all.select(Domain::kTarget)};
  std::vector<std::pair<std::string, EvalResult>> rows;
  const fs::path baseline_dir = baseline.value_or(ws.seg_baseline());
  if (baseline || fs::exists(baseline_dir / "model.json")) {
    rows.emplace_back("baseline", evaluate(SegModel::load(baseline_dir), target));
  }
  rows.emplace_back("adapted", evaluate(SegModel::load(model.value_or(ws.seg_adapted())), target));
  write_results_csv(rows, ws.results());
  return ws.results();
}

std::string render_distribution_svg(const std::vector<std::pair<std::string, std::vector<BandHistogram>>>& panels) {
  constexpr int kWidth = 640, kPanelHeight = 200, kMargin = 40;
  constexpr const char* kBandColors[] = {"#1f4fd6", "#1a9a3a", "#d62728", "#000000"};
  constexpr const char* kBandNames[] = {"blue", "green", "red", "nir"};
  const int height = static_cast<int>(panels.size()) * (kPanelHeight + kMargin) + kMargin;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double plot_w = kWidth - 2.0 * kMargin;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& [title, hist] = panels[p];
    const double top = kMargin + p * (kPanelHeight + kMargin);
    const double bottom = top + kPanelHeight;
    svg << "<text x=\"" << kMargin << "\" y=\"" << top - 8 << "\">" << title << "</text>\n";
    svg << "<rect x=\"" << kMargin << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << kPanelHeight
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    double peak = 0.0;
    std::vector<std::array<double, 256>> frac(hist.size());
    for (std::size_t b = 0; b < hist.size(); ++b) {
      double total = 0.0;
      for (auto c : hist[b]) total += static_cast<double>(c);
      for (int v = 0; v < 256; ++v) {
        frac[b][v] = total > 0 ? static_cast<double>(hist[b][v]) / total : 0.0;
        peak = std::max(peak, frac[b][v]);
      }
    }
    for (std::size_t b = 0; b < hist.size(); ++b) {
      svg << "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" << kBandColors[b % 4] << "\" points=\"";
      for (int v = 0; v < 256; ++v) {
        char pt[48];
        std::snprintf(pt, sizeof(pt), "%.2f,%.2f ", kMargin + plot_w * v / 255.0,
                      bottom - (peak > 0 ? kPanelHeight * frac[b][v] / peak : 0.0));
        svg << pt;
      }
      svg << "\"/>\n";
      svg << "<text x=\"" << kWidth - kMargin - 60 << "\" y=\"" << top + 16 + 14 * b << "\" fill=\""
          << kBandColors[b % 4] << "\">" << kBandNames[b % 4] << "</text>\n";
    }
    for (int v : {0, 64, 128, 192, 255}) {
      svg << "<text x=\"" << kMargin + plot_w * v / 255.0 - 8 << "\" y=\"" << bottom + 14 << "\">" << v
          << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

fs::path cmd_plot(const Workspace& ws) {
  std::vector<std::pair<std::string, std::vector<BandHistogram>>> panels;
  for (const char* name : {"source", "target", "stylized"}) {
    if (fs::exists(ws.hist(name))) panels.emplace_back(name, read_histogram_csv(ws.hist(name)));
  }
  if (panels.empty()) throw DataError("no histogram CSVs found under " + (ws.root / "hist").string());
  fs::create_directories(ws.plots());
  const fs::path out = ws.plots() / "distributions.svg";
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw DataError("cannot write plot: " + out.string());
  f << render_distribution_svg(panels);
  return out;
}

}  // namespace styleadapt
