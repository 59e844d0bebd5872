#include "styleadapt/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "styleadapt/errors.hpp"

namespace styleadapt {
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[offset + i]} << (8 * i);
  return v;
}

// Symmetric reflection into [0, n): ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tile file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

Tile Tile::zeros_u8(std::uint32_t bands, std::uint32_t height, std::uint32_t width) {
  Tile t{bands, height, width, std::vector<std::uint8_t>(std::size_t{bands} * height * width, 0), std::nullopt};
  return t;
}

Tile Tile::zeros_f32(std::uint32_t bands, std::uint32_t height, std::uint32_t width) {
  Tile t{bands, height, width, std::vector<float>(std::size_t{bands} * height * width, 0.0f), std::nullopt};
  return t;
}

std::span<const std::uint8_t> Tile::u8() const {
  if (dtype() != DType::kUInt8) throw PreconditionError("tile is not uint8");
  return std::get<std::vector<std::uint8_t>>(pixels);
}
std::span<std::uint8_t> Tile::u8() {
  if (dtype() != DType::kUInt8) throw PreconditionError("tile is not uint8");
  return std::get<std::vector<std::uint8_t>>(pixels);
}
std::span<const float> Tile::f32() const {
  if (dtype() != DType::kFloat32) throw PreconditionError("tile is not float32");
  return std::get<std::vector<float>>(pixels);
}
std::span<float> Tile::f32() {
  if (dtype() != DType::kFloat32) throw PreconditionError("tile is not float32");
  return std::get<std::vector<float>>(pixels);
}

void Tile::validate() const {
  if (bands == 0 || height == 0 || width == 0) throw ShapeError("tile dimensions must be positive");
  const std::size_t n = std::visit([](const auto& v) { return v.size(); }, pixels);
  if (n != size()) {
    std::ostringstream msg;
    msg << "tile payload has " << n << " values, expected " << bands << "x" << height << "x" << width;
    throw ShapeError(msg.str());
  }
  if (dtype() == DType::kFloat32) {
    for (float v : f32()) {
      if (!std::isfinite(v)) throw PreconditionError("tile contains non-finite values");
    }
  }
  if (labels) {
    if (labels->size() != plane_size()) throw ShapeError("label raster does not match tile extent");
    for (auto v : *labels) {
      if (v >= kNumClasses) throw PreconditionError("label id out of range: " + std::to_string(v));
    }
  }
}

bool Tile::is_normalized() const {
  if (dtype() != DType::kFloat32) return false;
  return std::ranges::all_of(f32(), [](float v) { return v >= -1.0f && v <= 1.0f; });
}

fs::path label_path_for(const fs::path& tile_path) {
  fs::path p = tile_path;
  p.replace_extension(".label.mbt");
  return p;
}

std::vector<std::uint8_t> encode_tile_bytes(const Tile& tile) {
  tile.validate();
  std::vector<std::uint8_t> out;
  const std::size_t elem = tile.dtype() == DType::kUInt8 ? 1 : 4;
  out.reserve(kTileHeaderBytes + tile.size() * elem);
  out.insert(out.end(), kTileMagic.begin(), kTileMagic.end());
  put_u32(out, tile.bands);
  put_u32(out, tile.height);
  put_u32(out, tile.width);
  put_u32(out, static_cast<std::uint32_t>(tile.dtype()));
  if (tile.dtype() == DType::kUInt8) {
    auto px = tile.u8();
    out.insert(out.end(), px.begin(), px.end());
  } else {
    for (float v : tile.f32()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Tile decode_tile_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTileMagic.size() ||
      !std::equal(kTileMagic.begin(), kTileMagic.end(), bytes.begin())) {
    throw FormatError("bad tile magic");
  }
  if (bytes.size() < kTileHeaderBytes) throw CorruptionError("truncated tile header");
  Tile t;
  t.bands = get_u32(bytes, 4);
  t.height = get_u32(bytes, 8);
  t.width = get_u32(bytes, 12);
  const std::uint32_t code = get_u32(bytes, 16);
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
  if (t.bands == 0 || t.height == 0 || t.width == 0) throw FormatError("zero tile dimension in header");
  const std::size_t elem = code == 0 ? 1 : 4;
  const std::size_t expected = kTileHeaderBytes + t.size() * elem;
  if (bytes.size() < expected) throw CorruptionError("truncated tile payload");
  if (bytes.size() > expected) throw CorruptionError("trailing bytes after tile payload");
  auto payload = bytes.subspan(kTileHeaderBytes);
  if (code == 0) {
    t.pixels = std::vector<std::uint8_t>(payload.begin(), payload.end());
  } else {
    std::vector<float> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(get_u32(payload, 4 * i));
    t.pixels = std::move(v);
  }
  return t;
}

namespace {

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write tile file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing tile file: " + path.string());
}

}  // namespace

void write_tile(const Tile& tile, const fs::path& path) {
  tile.validate();
  Tile pixels_only{tile.bands, tile.height, tile.width, tile.pixels, std::nullopt};
  write_bytes(encode_tile_bytes(pixels_only), path);
  const fs::path lp = label_path_for(path);
  if (tile.labels) {
    Tile lab{1, tile.height, tile.width, *tile.labels, std::nullopt};
    write_bytes(encode_tile_bytes(lab), lp);
  } else if (fs::exists(lp)) {
    fs::remove(lp);
  }
}

Tile read_tile(const fs::path& path) {
  Tile t = decode_tile_bytes(read_file(path));
  const fs::path lp = label_path_for(path);
  if (lp != path && fs::exists(lp)) {
    Tile lab = decode_tile_bytes(read_file(lp));
    if (lab.bands != 1 || lab.dtype() != DType::kUInt8 || lab.height != t.height || lab.width != t.width) {
      throw FormatError("label raster does not match tile: " + lp.string());
    }
    t.labels = std::get<std::vector<std::uint8_t>>(std::move(lab.pixels));
  }
  t.validate();
  return t;
}

Tile normalize(const Tile& tile) {
  if (tile.dtype() != DType::kUInt8) throw PreconditionError("normalize expects a uint8 tile");
  auto src = tile.u8();
  std::vector<float> out(src.size());
  std::ranges::transform(src, out.begin(), [](std::uint8_t v) { return static_cast<float>(v / 127.5 - 1.0); });
  return Tile{tile.bands, tile.height, tile.width, std::move(out), tile.labels};
}

Tile denormalize(const Tile& tile) {
  if (tile.dtype() != DType::kFloat32) throw PreconditionError("denormalize expects a float32 tile");
  auto src = tile.f32();
  std::vector<std::uint8_t> out(src.size());
  std::ranges::transform(src, out.begin(), [](float v) {
    const double x = std::round((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
  });
  return Tile{tile.bands, tile.height, tile.width, std::move(out), tile.labels};
}

std::vector<double> gaussian_kernel_1d(double sigma) {
  if (!(sigma > 0.0)) throw PreconditionError("gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

Tile gaussian_smooth(const Tile& tile, double sigma) {
  tile.validate();
  const auto kernel = gaussian_kernel_1d(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto h = static_cast<std::ptrdiff_t>(tile.height);
  const auto w = static_cast<std::ptrdiff_t>(tile.width);

  std::vector<double> plane(tile.plane_size()), tmp(tile.plane_size());
  Tile out = tile;
  for (std::uint32_t b = 0; b < tile.bands; ++b) {
    const std::size_t off = b * tile.plane_size();
    if (tile.dtype() == DType::kUInt8) {
      auto px = tile.u8();
      std::copy(px.begin() + off, px.begin() + off + plane.size(), plane.begin());
    } else {
      auto px = tile.f32();
      std::copy(px.begin() + off, px.begin() + off + plane.size(), plane.begin());
    }
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * plane[y * w + reflect_index(x + k, w)];
        }
        tmp[y * w + x] = acc;
      }
    }
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp[reflect_index(y + k, h) * w + x];
        }
        plane[y * w + x] = acc;
      }
    }
    if (out.dtype() == DType::kUInt8) {
      auto dst = out.u8();
      for (std::size_t i = 0; i < plane.size(); ++i) {
        dst[off + i] = static_cast<std::uint8_t>(std::clamp(std::round(plane[i]), 0.0, 255.0));
      }
    } else {
      auto dst = out.f32();
      for (std::size_t i = 0; i < plane.size(); ++i) dst[off + i] = static_cast<float>(plane[i]);
    }
  }
  return out;
}

std::vector<BandHistogram> histogram(std::span<const Tile> tiles) {
  std::vector<BandHistogram> counts;
  if (tiles.empty()) {
    counts.resize(4);
    for (auto& c : counts) c.fill(0);
    return counts;
  }
  const std::uint32_t bands = tiles.front().bands;
  counts.resize(bands);
  for (auto& c : counts) c.fill(0);
  for (const Tile& t : tiles) {
    if (t.bands != bands) throw ShapeError("histogram over tiles with differing band counts");
    auto px = t.u8();
    for (std::uint32_t b = 0; b < bands; ++b) {
      auto plane = px.subspan(b * t.plane_size(), t.plane_size());
      for (auto v : plane) ++counts[b][v];
    }
  }
  return counts;
}

void write_histogram_csv(const std::vector<BandHistogram>& hist, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write histogram: " + path.string());
  out << "band,value,count\n";
  for (std::size_t b = 0; b < hist.size(); ++b) {
    for (int v = 0; v < 256; ++v) out << b << ',' << v << ',' << hist[b][v] << '\n';
  }
}

std::vector<BandHistogram> read_histogram_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open histogram: " + path.string());
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "band,value,count") throw FormatError("unexpected histogram header in " + path.string());
  std::vector<BandHistogram> hist;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) throw FormatError("malformed histogram row: " + line);
    const auto band = std::stoul(f[0]);
    const auto value = std::stoul(f[1]);
    if (value > 255) throw FormatError("histogram value out of range: " + line);
    while (hist.size() <= band) {
      hist.emplace_back();
      hist.back().fill(0);
    }
    hist[band][value] = std::stoull(f[2]);
  }
  return hist;
}

std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }
std::string to_string(Split s) { return s == Split::kTrain ? "train" : "val"; }

std::vector<ManifestEntry> Manifest::select(Domain domain, std::optional<Split> split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.domain == domain && (!split || e.split == *split)) out.push_back(e);
  }
  return out;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto rel = [&](const fs::path& p) {
    return p.is_absolute() ? p.lexically_relative(fs::absolute(base)).generic_string()
                           : p.lexically_relative(base).generic_string();
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << "path,domain,split,label_path\n";
  for (const auto& e : manifest.entries) {
    out << rel(e.tile_path) << ',' << to_string(e.domain) << ',' << to_string(e.split) << ','
        << (e.label_path ? rel(*e.label_path) : std::string{}) << '\n';
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "path,domain,split,label_path") {
    throw ManifestError("unexpected manifest header in " + path.string());
  }
  Manifest m;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) throw ManifestError("malformed manifest row: " + line);
    ManifestEntry e;
    e.tile_path = (base / f[0]).lexically_normal();
    if (f[1] == "source") {
      e.domain = Domain::kSource;
    } else if (f[1] == "target") {
      e.domain = Domain::kTarget;
    } else {
      throw ManifestError("unknown domain '" + f[1] + "'");
    }
    if (f[2] == "train") {
      e.split = Split::kTrain;
    } else if (f[2] == "val") {
      e.split = Split::kVal;
    } else {
      throw ManifestError("unknown split '" + f[2] + "'");
    }
    if (!f[3].empty()) e.label_path = (base / f[3]).lexically_normal();
    m.entries.push_back(std::move(e));
  }
  return m;
}

Tile load_entry(const ManifestEntry& entry) {
  Tile t = decode_tile_bytes(read_file(entry.tile_path));
  if (entry.label_path) {
    Tile lab = decode_tile_bytes(read_file(*entry.label_path));
    if (lab.bands != 1 || lab.dtype() != DType::kUInt8 || lab.height != t.height || lab.width != t.width) {
      throw DataError("label raster does not match tile: " + entry.label_path->string());
    }
    t.labels = std::get<std::vector<std::uint8_t>>(std::move(lab.pixels));
  }
  t.validate();
  return t;
}

}  // namespace styleadapt
