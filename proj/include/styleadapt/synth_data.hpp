#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "styleadapt/raster_io.hpp"

namespace styleadapt {

enum class LandClass : std::uint8_t { kBackground = 0, kVegetation = 1, kHydro = 2, kRoads = 3, kBuildings = 4 };

inline constexpr std::array<const char*, kNumClasses> kClassNames{"background", "vegetation", "hydro", "roads",
                                                                  "buildings"};

// Base reflectance per class in (blue, green, red, near-infrared) order.
// Vegetation is bright in NIR, water is dark in NIR, man-made surfaces are
// flat and bright across the visible bands.
inline constexpr std::array<std::array<double, 4>, kNumClasses> kClassPalette{{
    {45.0, 55.0, 65.0, 95.0},     // background
    {30.0, 60.0, 40.0, 150.0},    // vegetation
    {55.0, 45.0, 30.0, 20.0},     // hydro
    {110.0, 110.0, 110.0, 90.0},  // roads
    {150.0, 130.0, 110.0, 85.0},  // buildings
}};

// Label mix of the labelled aerial source imagery the generator imitates.
inline constexpr std::array<double, kNumClasses> kSourceClassProfile{0.487, 0.382, 0.093, 0.018, 0.020};

struct RenderStyle {
  std::array<double, 4> gain{1.0, 1.0, 1.0, 1.0};
  std::array<double, 4> bias{0.0, 0.0, 0.0, 0.0};
  double noise_std = 0.0;
  std::optional<double> smooth_sigma;
};

struct SceneSpec {
  std::uint64_t seed = 0;        // layout stream
  std::uint64_t noise_seed = 0;  // pixel-noise stream
  std::uint32_t height = 64;
  std::uint32_t width = 64;
  std::array<double, kNumClasses> class_proportions = kSourceClassProfile;
  RenderStyle style;

  void validate() const;
};

struct Scene {
  Tile labels;  // 1 band, class ids
  Tile image;   // 4 band uint8
};

// Maximum allowed gap, in share of pixels, between requested and realized
// class proportions before a layout is rejected.
inline constexpr double kProportionTolerance = 0.05;
inline constexpr int kLayoutAttempts = 10;

std::array<double, kNumClasses> class_shares(const Tile& labels);

Scene generate_scene(const SceneSpec& spec);

// Writes n scenes per domain under out_dir/{source,target}/ plus
// out_dir/manifest.csv. Scene i of both domains shares layout seed
// source.seed + i; pixel noise uses each spec's noise_seed + i.
Manifest generate_dataset(int n_scenes, const SceneSpec& source, const SceneSpec& target,
                          const std::filesystem::path& out_dir);

void to_json(nlohmann::json& j, const RenderStyle& s);
void from_json(const nlohmann::json& j, RenderStyle& s);
void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

}  // namespace styleadapt
