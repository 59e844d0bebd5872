#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "styleadapt/errors.hpp"
#include "styleadapt/raster_io.hpp"
#include "temp_dir.hpp"

using namespace styleadapt;
using styleadapt::test::TempDir;

namespace {

Tile random_u8(std::uint32_t bands, std::uint32_t h, std::uint32_t w, std::uint32_t seed, bool labels = false) {
  std::mt19937 rng(seed);
  Tile t = Tile::zeros_u8(bands, h, w);
  for (auto& v : t.u8()) v = static_cast<std::uint8_t>(rng() % 256);
  if (labels) {
    std::vector<std::uint8_t> l(t.plane_size());
    for (auto& v : l) v = static_cast<std::uint8_t>(rng() % kNumClasses);
    t.labels = l;
  }
  return t;
}

// exp(-x^2 / 2 sigma^2) on [-ceil(4 sigma), ceil(4 sigma)], unit mass.
std::vector<double> kernel_oracle(double sigma) {
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k;
  for (int x = -r; x <= r; ++x) k.push_back(std::exp(-0.5 * x * x / (sigma * sigma)));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& v : k) v /= s;
  return k;
}

}  // namespace

TEST(RasterIo, RoundtripU8WithLabels) {
  TempDir dir;
  const Tile t = random_u8(4, 9, 7, 1, true);
  write_tile(t, dir / "a.mbt");
  EXPECT_TRUE(std::filesystem::exists(dir / "a.label.mbt"));
  EXPECT_EQ(read_tile(dir / "a.mbt"), t);
}

TEST(RasterIo, RoundtripFloatBytes) {
  Tile t = Tile::zeros_f32(3, 5, 4);
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : t.f32()) v = u(rng);
  EXPECT_EQ(decode_tile_bytes(encode_tile_bytes(t)), t);
}

TEST(RasterIo, FloatTileByteCount) {
  TempDir dir;
  write_tile(Tile::zeros_f32(4, 2, 2), dir / "f.mbt");
  EXPECT_EQ(std::filesystem::file_size(dir / "f.mbt"), 20u + 4u * 2u * 2u * 4u);
  EXPECT_EQ(encode_tile_bytes(Tile::zeros_f32(4, 2, 2)).size(), 84u);
}

TEST(RasterIo, HeaderIsLittleEndian) {
  const auto bytes = encode_tile_bytes(Tile::zeros_u8(4, 258, 3));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MBT1");
  EXPECT_EQ(bytes[4], 4);
  EXPECT_EQ(bytes[8], 2);  // 258 = 0x0102
  EXPECT_EQ(bytes[9], 1);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(bytes[16], 0);
}

TEST(RasterIo, BadMagicIsFormatError) {
  auto bytes = encode_tile_bytes(Tile::zeros_u8(1, 2, 2));
  bytes[0] = bytes[1] = bytes[2] = bytes[3] = 'X';
  EXPECT_THROW(decode_tile_bytes(bytes), FormatError);

  TempDir dir;
  std::ofstream(dir / "x.mbt", std::ios::binary) << "XXXX0000000000000000";
  EXPECT_THROW(read_tile(dir / "x.mbt"), FormatError);
}

TEST(RasterIo, TruncatedPayloadIsCorruption) {
  auto bytes = encode_tile_bytes(Tile::zeros_u8(4, 3, 3));
  bytes.pop_back();
  EXPECT_THROW(decode_tile_bytes(bytes), CorruptionError);
  bytes.push_back(0);
  bytes.push_back(0);
  EXPECT_THROW(decode_tile_bytes(bytes), CorruptionError);
}

TEST(RasterIo, MissingFileThrows) {
  TempDir dir;
  EXPECT_THROW(read_tile(dir / "nope.mbt"), Error);
}

TEST(RasterIo, NormalizeEndpoints) {
  Tile t = Tile::zeros_u8(1, 1, 3);
  t.u8()[0] = 0;
  t.u8()[1] = 255;
  t.u8()[2] = 102;
  const Tile n = normalize(t);
  EXPECT_FLOAT_EQ(n.f32()[0], -1.0f);
  EXPECT_FLOAT_EQ(n.f32()[1], 1.0f);
  EXPECT_NEAR(n.f32()[2], -0.2f, 1e-6);
  EXPECT_TRUE(n.is_normalized());
}

TEST(RasterIo, DenormalizeInvertsNormalize) {
  const Tile t = random_u8(4, 8, 8, 9, true);
  EXPECT_EQ(denormalize(normalize(t)), t);
}

TEST(RasterIo, NormalizeKeepsLabels) {
  const Tile t = random_u8(2, 4, 4, 11, true);
  EXPECT_EQ(normalize(t).labels, t.labels);
}

TEST(RasterIo, GaussianKernelMatchesOracle) {
  for (double sigma : {0.5, 1.0, 2.0, 3.3}) {
    const auto k = gaussian_kernel_1d(sigma);
    const auto o = kernel_oracle(sigma);
    ASSERT_EQ(k.size(), o.size());
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], o[i], 1e-12);
  }
}

TEST(RasterIo, GaussianConstantBandUnchanged) {
  Tile t = Tile::zeros_f32(2, 12, 10);
  for (auto& v : t.f32()) v = 0.37f;
  const Tile s = gaussian_smooth(t, 1.5);
  for (float v : s.f32()) EXPECT_NEAR(v, 0.37f, 1e-6);

  Tile u = Tile::zeros_u8(1, 9, 9);
  for (auto& v : u.u8()) v = 200;
  EXPECT_EQ(gaussian_smooth(u, 2.0), u);
}

TEST(RasterIo, GaussianImpulseGivesKernel) {
  const double sigma = 1.5;
  const int n = 41, c = 20;
  Tile t = Tile::zeros_f32(1, n, n);
  t.f32()[c * n + c] = 1.0f;
  const Tile s = gaussian_smooth(t, sigma);
  const auto k = kernel_oracle(sigma);
  const int r = static_cast<int>(k.size() / 2);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      EXPECT_NEAR(s.f32()[(c + dy) * n + (c + dx)], k[dy + r] * k[dx + r], 1e-7);
    }
  }
}

TEST(RasterIo, GaussianPreservesInteriorMean) {
  // Content away from the border: reflection never folds mass back in.
  const int n = 48;
  Tile t = Tile::zeros_f32(4, n, n);
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (std::uint32_t b = 0; b < 4; ++b)
    for (int y = 12; y < 36; ++y)
      for (int x = 12; x < 36; ++x) t.f32()[b * n * n + y * n + x] = u(rng);
  const Tile s = gaussian_smooth(t, 1.0);
  for (std::uint32_t b = 0; b < 4; ++b) {
    double a = 0, c = 0;
    for (int i = 0; i < n * n; ++i) {
      a += t.f32()[b * n * n + i];
      c += s.f32()[b * n * n + i];
    }
    EXPECT_NEAR(a / (n * n), c / (n * n), 1e-6);
  }
}

TEST(RasterIo, GaussianRejectsBadSigma) {
  EXPECT_THROW(gaussian_smooth(Tile::zeros_f32(1, 4, 4), 0.0), Error);
  EXPECT_THROW(gaussian_smooth(Tile::zeros_f32(1, 4, 4), -1.0), Error);
}

TEST(RasterIo, HistogramConstantTile) {
  Tile t = Tile::zeros_u8(4, 2, 2);
  for (auto& v : t.u8()) v = 7;
  const std::vector<Tile> one{t};
  const auto h = histogram(one);
  ASSERT_EQ(h.size(), 4u);
  for (const auto& band : h) {
    for (int v = 0; v < 256; ++v) EXPECT_EQ(band[v], v == 7 ? 4u : 0u);
  }
}

TEST(RasterIo, HistogramEmptyIsZero) {
  const auto h = histogram(std::span<const Tile>{});
  for (const auto& band : h)
    for (auto c : band) EXPECT_EQ(c, 0u);
}

TEST(RasterIo, HistogramAdditive) {
  const Tile t = random_u8(4, 6, 6, 21);
  const std::vector<Tile> one{t}, two{t, t};
  const auto h1 = histogram(one), h2 = histogram(two);
  for (std::size_t b = 0; b < 4; ++b)
    for (int v = 0; v < 256; ++v) EXPECT_EQ(h2[b][v], 2 * h1[b][v]);
}

TEST(RasterIo, HistogramRejectsMixedBands) {
  const std::vector<Tile> mixed{Tile::zeros_u8(4, 2, 2), Tile::zeros_u8(3, 2, 2)};
  EXPECT_THROW(histogram(mixed), ShapeError);
}

TEST(RasterIo, HistogramCsvRoundtrip) {
  TempDir dir;
  const std::vector<Tile> tiles{random_u8(4, 16, 16, 2), random_u8(4, 16, 16, 3)};
  const auto h = histogram(tiles);
  write_histogram_csv(h, dir / "h.csv");
  EXPECT_EQ(read_histogram_csv(dir / "h.csv"), h);
}

TEST(RasterIo, ManifestRoundtripRelativePaths) {
  TempDir dir;
  Manifest m;
  m.entries.push_back({dir / "source" / "a.mbt", Domain::kSource, Split::kTrain, dir / "source" / "a.label.mbt"});
  m.entries.push_back({dir / "target" / "b.mbt", Domain::kTarget, Split::kVal, std::nullopt});
  write_manifest(m, dir / "manifest.csv");
  std::ifstream in(dir / "manifest.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "path,domain,split,label_path");
  EXPECT_EQ(first, "source/a.mbt,source,train,source/a.label.mbt");
  EXPECT_EQ(read_manifest(dir / "manifest.csv"), m);
  EXPECT_EQ(m.select(Domain::kTarget).size(), 1u);
  EXPECT_EQ(m.select(Domain::kSource, Split::kVal).size(), 0u);
}

TEST(RasterIo, ManifestBadDomainIsManifestError) {
  TempDir dir;
  std::ofstream(dir / "m.csv") << "path,domain,split,label_path\na.mbt,moon,train,\n";
  EXPECT_THROW(read_manifest(dir / "m.csv"), ManifestError);
}

TEST(RasterIo, LoadEntryAttachesLabels) {
  TempDir dir;
  const Tile t = random_u8(4, 5, 5, 8, true);
  write_tile(t, dir / "a.mbt");
  const Tile loaded = load_entry({dir / "a.mbt", Domain::kSource, Split::kTrain, label_path_for(dir / "a.mbt")});
  EXPECT_EQ(loaded.labels, t.labels);
}
