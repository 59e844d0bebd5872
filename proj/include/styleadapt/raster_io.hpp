#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace styleadapt {

inline constexpr int kNumClasses = 5;

enum class DType : std::uint32_t { kUInt8 = 0, kFloat32 = 1 };

// A multi-band raster sample. Pixels are stored band-major
// (band, row, column); labels, when present, are one class id per pixel.
struct Tile {
  std::uint32_t bands = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::variant<std::vector<std::uint8_t>, std::vector<float>> pixels;
  std::optional<std::vector<std::uint8_t>> labels;

  static Tile zeros_u8(std::uint32_t bands, std::uint32_t height, std::uint32_t width);
  static Tile zeros_f32(std::uint32_t bands, std::uint32_t height, std::uint32_t width);

  DType dtype() const noexcept {
    return std::holds_alternative<std::vector<float>>(pixels) ? DType::kFloat32 : DType::kUInt8;
  }
  std::size_t plane_size() const noexcept { return std::size_t{height} * width; }
  std::size_t size() const noexcept { return std::size_t{bands} * plane_size(); }

  std::span<const std::uint8_t> u8() const;
  std::span<std::uint8_t> u8();
  std::span<const float> f32() const;
  std::span<float> f32();

  // Throws ShapeError/PreconditionError when the tile breaks its invariants.
  void validate() const;
  bool is_normalized() const;

  bool operator==(const Tile&) const = default;
};

// Binary container: "MBT1" followed by u32 bands, height, width, dtype code
// (all little-endian) and the band-major payload.
inline constexpr std::array<char, 4> kTileMagic{'M', 'B', 'T', '1'};
inline constexpr std::size_t kTileHeaderBytes = 20;

// Labels live next to the pixel file as a single-band uint8 tile.
std::filesystem::path label_path_for(const std::filesystem::path& tile_path);

std::vector<std::uint8_t> encode_tile_bytes(const Tile& tile);
Tile decode_tile_bytes(std::span<const std::uint8_t> bytes);

void write_tile(const Tile& tile, const std::filesystem::path& path);
Tile read_tile(const std::filesystem::path& path);

Tile normalize(const Tile& tile);
Tile denormalize(const Tile& tile);

// Separable Gaussian blur applied to every band independently. Kernel radius
// is ceil(4 sigma); borders use symmetric reflection (the edge sample is
// repeated: d c b a | a b c d).
Tile gaussian_smooth(const Tile& tile, double sigma);
std::vector<double> gaussian_kernel_1d(double sigma);

using BandHistogram = std::array<std::uint64_t, 256>;
std::vector<BandHistogram> histogram(std::span<const Tile> tiles);

void write_histogram_csv(const std::vector<BandHistogram>& hist, const std::filesystem::path& path);
std::vector<BandHistogram> read_histogram_csv(const std::filesystem::path& path);

enum class Domain { kSource, kTarget };
enum class Split { kTrain, kVal };

std::string to_string(Domain d);
std::string to_string(Split s);

struct ManifestEntry {
  std::filesystem::path tile_path;
  Domain domain = Domain::kSource;
  Split split = Split::kTrain;
  std::optional<std::filesystem::path> label_path;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Domain domain, std::optional<Split> split = std::nullopt) const;
  bool operator==(const Manifest&) const = default;
};

// CSV with header `path,domain,split,label_path`. Relative paths are resolved
// against the manifest's directory on read and written relative to it.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Loads the pixel tile and, if the entry names one, its label raster.
Tile load_entry(const ManifestEntry& entry);

}  // namespace styleadapt
