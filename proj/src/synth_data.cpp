#include "styleadapt/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "styleadapt/errors.hpp"

namespace styleadapt {
namespace fs = std::filesystem;

namespace {

// std distributions are implementation-defined; draw from the engine bits
// directly so scenes are byte-identical across standard libraries.
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform() * (hi - lo + 1));
  }
  double normal() {
    if (spare_) {
      double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class LabelCanvas {
 public:
  LabelCanvas(int h, int w) : h_(h), w_(w), ids_(static_cast<std::size_t>(h) * w, 0), counts_{} {
    counts_[0] = static_cast<std::size_t>(h) * w;
  }

  int height() const { return h_; }
  int width() const { return w_; }
  std::uint8_t at(int y, int x) const { return ids_[static_cast<std::size_t>(y) * w_ + x]; }
  std::size_t count(LandClass c) const { return counts_[static_cast<int>(c)]; }

  void set(int y, int x, LandClass c) {
    auto& cell = ids_[static_cast<std::size_t>(y) * w_ + x];
    --counts_[cell];
    cell = static_cast<std::uint8_t>(c);
    ++counts_[cell];
  }

  std::vector<std::uint8_t> release() && { return std::move(ids_); }

 private:
  int h_, w_;
  std::vector<std::uint8_t> ids_;
  std::array<std::size_t, kNumClasses> counts_;
};

bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double y, double x) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [yi, xi] = poly[i];
    const auto [yj, xj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

void paint_lakes(LabelCanvas& canvas, SceneRng& rng, std::size_t target) {
  const int h = canvas.height(), w = canvas.width();
  const double max_radius = std::min(h, w) / 4.0;
  for (int guard = 0; canvas.count(LandClass::kHydro) < target && guard < 200; ++guard) {
    const double remaining = static_cast<double>(target - canvas.count(LandClass::kHydro));
    const double radius =
        std::clamp(std::sqrt(remaining / std::numbers::pi) * rng.uniform(0.6, 1.0), 1.5, max_radius);
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const int n_vertices = rng.integer(6, 10);
    std::vector<std::array<double, 2>> poly;
    const double phase = rng.uniform(0, 2 * std::numbers::pi);
    for (int k = 0; k < n_vertices; ++k) {
      const double a = phase + 2 * std::numbers::pi * k / n_vertices;
      const double r = radius * rng.uniform(0.7, 1.3);
      poly.push_back({cy + r * std::sin(a), cx + r * std::cos(a)});
    }
    const int y0 = std::max(0, static_cast<int>(cy - 1.3 * radius) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(cy + 1.3 * radius) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - 1.3 * radius) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(cx + 1.3 * radius) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (inside_polygon(poly, y + 0.5, x + 0.5)) canvas.set(y, x, LandClass::kHydro);
      }
    }
  }
}

// Roads are polylines 1-3 px wide entering from a tile edge. Painting stops
// the moment the requested pixel count is reached.
void paint_roads(LabelCanvas& canvas, SceneRng& rng, std::size_t target) {
  const int h = canvas.height(), w = canvas.width();
  auto stamp = [&](double y, double x, int width) {
    const int half_lo = (width - 1) / 2, half_hi = width / 2;
    for (int dy = -half_lo; dy <= half_hi; ++dy) {
      for (int dx = -half_lo; dx <= half_hi; ++dx) {
        const int py = static_cast<int>(std::floor(y)) + dy, px = static_cast<int>(std::floor(x)) + dx;
        if (py < 0 || py >= h || px < 0 || px >= w) continue;
        const auto c = static_cast<LandClass>(canvas.at(py, px));
        if (c == LandClass::kHydro || c == LandClass::kRoads) continue;
        canvas.set(py, px, LandClass::kRoads);
        if (canvas.count(LandClass::kRoads) >= target) return true;
      }
    }
    return false;
  };
  for (int guard = 0; canvas.count(LandClass::kRoads) < target && guard < 50; ++guard) {
    const int width = rng.integer(1, 3);
    double y, x, heading;
    switch (rng.integer(0, 3)) {
      case 0: y = 0; x = rng.uniform(0, w); heading = std::numbers::pi / 2; break;
      case 1: y = h - 1e-3; x = rng.uniform(0, w); heading = -std::numbers::pi / 2; break;
      case 2: y = rng.uniform(0, h); x = 0; heading = 0; break;
      default: y = rng.uniform(0, h); x = w - 1e-3; heading = std::numbers::pi; break;
    }
    const int segments = rng.integer(2, 4);
    for (int s = 0; s < segments; ++s) {
      heading += rng.uniform(-0.6, 0.6);
      const double length = rng.uniform(0.25, 0.6) * std::max(h, w);
      for (double t = 0; t < length; t += 0.5) {
        if (stamp(y, x, width)) return;
        y += 0.5 * std::sin(heading);
        x += 0.5 * std::cos(heading);
        if (y < 0 || y >= h || x < 0 || x >= w) break;
      }
      if (y < 0 || y >= h || x < 0 || x >= w) break;
    }
  }
}

void paint_buildings(LabelCanvas& canvas, SceneRng& rng, std::size_t target) {
  const int h = canvas.height(), w = canvas.width();
  for (int guard = 0; canvas.count(LandClass::kBuildings) < target && guard < 2000; ++guard) {
    const int bh = rng.integer(2, 5), bw = rng.integer(2, 5);
    const int y0 = rng.integer(0, h - bh), x0 = rng.integer(0, w - bw);
    bool free = true;
    for (int y = y0; y < y0 + bh && free; ++y) {
      for (int x = x0; x < x0 + bw && free; ++x) {
        free = canvas.at(y, x) == static_cast<std::uint8_t>(LandClass::kBackground);
      }
    }
    if (!free) continue;
    for (int y = y0; y < y0 + bh; ++y) {
      for (int x = x0; x < x0 + bw; ++x) canvas.set(y, x, LandClass::kBuildings);
    }
  }
}

// Two octaves of bilinear value noise; vegetation takes the highest-valued
// background pixels so its share is hit exactly whenever room remains.
void paint_vegetation(LabelCanvas& canvas, SceneRng& rng, std::size_t target) {
  const int h = canvas.height(), w = canvas.width();
  std::vector<double> field(static_cast<std::size_t>(h) * w, 0.0);
  for (auto [cell, amp] : {std::pair{16, 1.0}, std::pair{6, 0.35}}) {
    const int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (double& g : grid) g = rng.uniform();
    for (int y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) / cell;
      const int iy = static_cast<int>(fy);
      const double ty = fy - iy;
      for (int x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / cell;
        const int ix = static_cast<int>(fx);
        const double tx = fx - ix;
        const double v00 = grid[iy * gw + ix], v01 = grid[iy * gw + ix + 1];
        const double v10 = grid[(iy + 1) * gw + ix], v11 = grid[(iy + 1) * gw + ix + 1];
        field[static_cast<std::size_t>(y) * w + x] +=
            amp * ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
      }
    }
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (canvas.at(static_cast<int>(i / w), static_cast<int>(i % w)) == 0) candidates.push_back(i);
  }
  const std::size_t take = std::min(target, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    [&](std::size_t a, std::size_t b) { return field[a] > field[b] || (field[a] == field[b] && a < b); });
  for (std::size_t k = 0; k < take; ++k) {
    canvas.set(static_cast<int>(candidates[k] / w), static_cast<int>(candidates[k] % w), LandClass::kVegetation);
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 32 || width < 32) throw PreconditionError("scene size must be at least 32x32");
  double sum = 0.0;
  for (double p : class_proportions) {
    if (!(p >= 0.0)) throw PreconditionError("class proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw PreconditionError("class proportions must sum to 1");
  for (double g : style.gain) {
    if (g == 0.0 || !std::isfinite(g)) throw PreconditionError("style gains must be finite and nonzero");
  }
  if (style.noise_std < 0.0) throw PreconditionError("noise std must be nonnegative");
  if (style.smooth_sigma && !(*style.smooth_sigma > 0.0)) throw PreconditionError("smooth sigma must be positive");
}

std::array<double, kNumClasses> class_shares(const Tile& labels) {
  std::array<double, kNumClasses> shares{};
  const auto& ids = labels.labels ? *labels.labels : std::get<std::vector<std::uint8_t>>(labels.pixels);
  for (auto v : ids) shares.at(v) += 1.0;
  for (double& s : shares) s /= static_cast<double>(ids.size());
  return shares;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = static_cast<int>(spec.height), w = static_cast<int>(spec.width);
  const double n = static_cast<double>(h) * w;
  auto want = [&](LandClass c) {
    return static_cast<std::size_t>(std::llround(spec.class_proportions[static_cast<int>(c)] * n));
  };

  std::optional<std::vector<std::uint8_t>> ids;
  std::array<double, kNumClasses> realized{};
  for (int attempt = 0; attempt < kLayoutAttempts && !ids; ++attempt) {
    SceneRng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(attempt)));
    LabelCanvas canvas(h, w);
    paint_lakes(canvas, rng, want(LandClass::kHydro));
    paint_roads(canvas, rng, want(LandClass::kRoads));
    paint_buildings(canvas, rng, want(LandClass::kBuildings));
    paint_vegetation(canvas, rng, want(LandClass::kVegetation));
    bool ok = true;
    for (int c = 0; c < kNumClasses; ++c) {
      realized[c] = static_cast<double>(canvas.count(static_cast<LandClass>(c))) / n;
      ok = ok && std::abs(realized[c] - spec.class_proportions[c]) <= kProportionTolerance;
    }
    if (ok) ids = std::move(canvas).release();
  }
  if (!ids) {
    std::ostringstream msg;
    msg << "could not realize class proportions within " << kProportionTolerance * 100 << " points after "
        << kLayoutAttempts << " layouts (last:";
    for (double r : realized) msg << ' ' << r;
    msg << ')';
    throw GenerationError(msg.str());
  }

  Scene scene;
  scene.labels = Tile{1, spec.height, spec.width, *ids, std::nullopt};
  std::vector<std::uint8_t> px(std::size_t{4} * h * w);
  SceneRng noise(mix_seed(spec.noise_seed, 0xC0FFEE));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto& base = kClassPalette[(*ids)[i]];
    for (int b = 0; b < 4; ++b) {
      double v = spec.style.gain[b] * base[b] + spec.style.bias[b];
      if (spec.style.noise_std > 0.0) v += spec.style.noise_std * noise.normal();
      px[b * plane + i] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
    }
  }
  scene.image = Tile{4, spec.height, spec.width, std::move(px), std::nullopt};
  if (spec.style.smooth_sigma) scene.image = gaussian_smooth(scene.image, *spec.style.smooth_sigma);
  return scene;
}

Manifest generate_dataset(int n_scenes, const SceneSpec& source, const SceneSpec& target, const fs::path& out_dir) {
  if (n_scenes < 1) throw ConfigError("n_scenes must be positive");
  source.validate();
  target.validate();
  if (source.class_proportions != target.class_proportions) {
    throw ConfigError("source and target specs must share class proportions");
  }
  if (source.seed != target.seed || source.height != target.height || source.width != target.width) {
    throw ConfigError("source and target specs must share the layout seed stream and scene size");
  }
  Manifest manifest;
  for (auto [spec, domain] : {std::pair{&source, Domain::kSource}, std::pair{&target, Domain::kTarget}}) {
    for (int i = 0; i < n_scenes; ++i) {
      SceneSpec s = *spec;
      s.seed = spec->seed + static_cast<std::uint64_t>(i);
      s.noise_seed = spec->noise_seed + static_cast<std::uint64_t>(i);
      Scene scene = generate_scene(s);
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%05d.mbt", i);
      const fs::path tile_path = out_dir / to_string(domain) / name;
      scene.image.labels = std::get<std::vector<std::uint8_t>>(scene.labels.pixels);
      write_tile(scene.image, tile_path);
      manifest.entries.push_back({tile_path, domain, Split::kTrain, label_path_for(tile_path)});
    }
  }
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

void to_json(nlohmann::json& j, const RenderStyle& s) {
  j = nlohmann::json{{"gain", s.gain}, {"bias", s.bias}, {"noise_std", s.noise_std}};
  j["smooth_sigma"] = s.smooth_sigma ? nlohmann::json(*s.smooth_sigma) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RenderStyle& s) {
  s = RenderStyle{};
  if (j.contains("gain")) j.at("gain").get_to(s.gain);
  if (j.contains("bias")) j.at("bias").get_to(s.bias);
  s.noise_std = j.value("noise_std", 0.0);
  if (j.contains("smooth_sigma") && !j.at("smooth_sigma").is_null()) s.smooth_sigma = j.at("smooth_sigma").get<double>();
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"seed", s.seed},     {"noise_seed", s.noise_seed},
                     {"height", s.height}, {"width", s.width},
                     {"class_proportions", s.class_proportions}, {"style", s.style}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s = SceneSpec{};
  s.seed = j.value("seed", std::uint64_t{0});
  s.noise_seed = j.value("noise_seed", s.seed);
  s.height = j.value("height", 64u);
  s.width = j.value("width", 64u);
  if (j.contains("class_proportions")) j.at("class_proportions").get_to(s.class_proportions);
  if (j.contains("style")) j.at("style").get_to(s.style);
}

}  // namespace styleadapt
