#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsci/metrics.hpp"
#include "wsci/tensor.hpp"

namespace wsci {

// ---- Little-endian binary helpers ---------------------------------------

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_i32(std::string& out, int32_t v) { put_u32(out, uint32_t(v)); }
inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}
inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& what)
      : data_(data), what_(what) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  int32_t i32() { return int32_t(u32()); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void f32_block(float* dst, size_t n) {
    need(4 * n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int k = 0; k < 4; ++k)
        bits |= uint32_t(uint8_t(data_[pos_ + 4 * i + k])) << (8 * k);
      std::memcpy(dst + i, &bits, 4);
    }
    pos_ += 4 * n;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > data_.size())
      throw error("corrupt", "truncated " + what_ + " (needed " + std::to_string(n) +
                                 " bytes at offset " + std::to_string(pos_) + ")");
  }
  const std::string& data_;
  std::string what_;
  size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error("io", "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

// Write-to-temp plus atomic rename; prior outputs are never left half-written.
inline void write_file_atomic(const std::string& path, const std::string& data) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw error("io", "cannot write " + tmp);
    f.write(data.data(), std::streamsize(data.size()));
    if (!f) throw error("io", "short write to " + tmp);
  }
  fs::rename(tmp, path);
}

// ---- Geometry ------------------------------------------------------------

// Flat desk-scale world: positions in meters, converted to pseudo lon/lat by
// a fixed linear map anchored at (0, 0). No geodesy.
constexpr double kMetersPerDegree = 111320.0;
constexpr double kPixelSize = 25.0;       // m
constexpr int kChipSize = 40;             // pixels (1x1 km)
constexpr int kChipCore = 32;             // after 4-pixel border crop
constexpr double kBlockSize = 80000.0;    // m, spatial split blocks
constexpr int kMinValidTargetPixels = 16; // of 1600
constexpr int kMaxChipsPerBlock = 300;

inline double meters_to_lon(double x_m) { return x_m / kMetersPerDegree; }
inline double meters_to_lat(double y_m) { return y_m / kMetersPerDegree; }
inline double lon_to_meters(double lon) { return lon * kMetersPerDegree; }
inline double lat_to_meters(double lat) { return lat * kMetersPerDegree; }

// ---- Raster --------------------------------------------------------------

// Band-sequential raster, row-major within a band, NaN as NODATA.
struct Raster {
  int width = 0, height = 0;
  double origin_x = 0.0, origin_y = 0.0;  // meters of pixel (0,0) corner
  double pixel_size = kPixelSize;
  std::vector<std::string> band_names;
  std::vector<std::vector<float>> bands;

  void add_band(const std::string& name) {
    band_names.push_back(name);
    bands.emplace_back(size_t(width) * height,
                       std::numeric_limits<float>::quiet_NaN());
  }
  float& at(int band, int y, int x) { return bands[band][size_t(y) * width + x]; }
  float at(int band, int y, int x) const { return bands[band][size_t(y) * width + x]; }
  int find_band(const std::string& name) const {
    for (size_t i = 0; i < band_names.size(); ++i)
      if (band_names[i] == name) return int(i);
    throw error("raster", "missing band '" + name + "'");
  }
};

inline void write_raster(const std::string& path, const Raster& r) {
  std::string data;
  data.reserve(size_t(r.width) * r.height * r.bands.size() * 4);
  for (const auto& band : r.bands)
    for (float v : band) put_f32(data, v);
  write_file_atomic(path, data);
  nlohmann::json side = {{"width", r.width},
                         {"height", r.height},
                         {"origin_x", r.origin_x},
                         {"origin_y", r.origin_y},
                         {"pixel_size", r.pixel_size},
                         {"nodata", "nan"},
                         {"bands", r.band_names}};
  write_file_atomic(path + ".json", side.dump(2) + "\n");
}

inline Raster read_raster(const std::string& path) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw error("corrupt", "bad raster sidecar " + path + ".json: " + e.what());
  }
  Raster r;
  r.width = side.at("width");
  r.height = side.at("height");
  r.origin_x = side.at("origin_x");
  r.origin_y = side.at("origin_y");
  r.pixel_size = side.at("pixel_size");
  r.band_names = side.at("bands").get<std::vector<std::string>>();
  const std::string data = read_file(path);
  const size_t per_band = size_t(r.width) * r.height;
  if (data.size() != per_band * r.band_names.size() * 4)
    throw error("corrupt", "raster " + path + " size does not match sidecar");
  ByteReader br(data, "raster " + path);
  for (size_t b = 0; b < r.band_names.size(); ++b) {
    r.bands.emplace_back(per_band);
    br.f32_block(r.bands.back().data(), per_band);
  }
  return r;
}

// ---- Footprints ----------------------------------------------------------

struct FootprintRecord {
  double lon = 0.0, lat = 0.0;
  int quarter = 0;
  double wsci = 0.0;
  bool valid = true;  // stands in for the L4C quality filtering
};

inline void write_footprints_csv(const std::string& path,
                                 const std::vector<FootprintRecord>& records) {
  std::string out = "lon,lat,quarter,wsci\n";
  char buf[128];
  for (const auto& f : records) {
    if (!f.valid) continue;
    // %.17g survives the text round trip bit-exactly, so gridding a CSV of
    // footprints reproduces the raster they were sampled from
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%.17g\n", f.lon, f.lat, f.quarter,
                  f.wsci);
    out += buf;
  }
  write_file_atomic(path, out);
}

inline std::vector<FootprintRecord> read_footprints_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error("io", "cannot open " + path);
  std::vector<FootprintRecord> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    FootprintRecord r;
    if (std::sscanf(line.c_str(), "%lf,%lf,%d,%lf", &r.lon, &r.lat, &r.quarter,
                    &r.wsci) != 4)
      throw error("corrupt", "bad footprint line: " + line);
    out.push_back(r);
  }
  return out;
}

// Mean of footprint WSCI values per 25 m cell; half-open cells [x, x+pixel)
// so boundary footprints are assigned by floor of the pixel index.
inline Raster grid_footprints(const std::vector<FootprintRecord>& records,
                              int width, int height, double origin_x, double origin_y,
                              int quarter) {
  Raster r;
  r.width = width;
  r.height = height;
  r.origin_x = origin_x;
  r.origin_y = origin_y;
  r.add_band("wsci");
  std::vector<double> sum(size_t(width) * height, 0.0);
  std::vector<int> count(size_t(width) * height, 0);
  for (const auto& f : records) {
    if (!f.valid || f.quarter != quarter) continue;
    const int px = int(std::floor((lon_to_meters(f.lon) - origin_x) / r.pixel_size));
    const int py = int(std::floor((lat_to_meters(f.lat) - origin_y) / r.pixel_size));
    if (px < 0 || px >= width || py < 0 || py >= height) continue;
    sum[size_t(py) * width + px] += f.wsci;
    count[size_t(py) * width + px] += 1;
  }
  for (size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0) r.bands[0][i] = float(sum[i] / count[i]);
  return r;
}

// ---- Coordinate channels -------------------------------------------------

// Longitude is cyclic (sin/cos); latitude does not wrap and is scaled
// linearly by 1/90.
struct CoordinateChannels {
  double sin_lon, cos_lon, lat_scaled;
};

inline CoordinateChannels encode_coordinates(double lon, double lat) {
  const double rad = lon * M_PI / 180.0;
  return {std::sin(rad), std::cos(rad), lat / 90.0};
}

// ---- Chips ---------------------------------------------------------------

constexpr int kInputChannels = 10;  // 7 SAR-like layers + 3 coordinate layers
inline const std::vector<std::string> kSarLayerNames = {
    "HH", "HV", "VV", "VH", "inc_palsar", "inc_sentinel", "dem"};

struct Chip {
  uint64_t id = 0;
  double center_lon = 0.0, center_lat = 0.0;
  int32_t quarter = 0;
  uint64_t block_id = 0;
  std::vector<float> input;   // 10 * 40 * 40, channel-major
  std::vector<float> target;  // 40 * 40, NaN as NODATA

  float input_at(int c, int y, int x) const {
    return input[(size_t(c) * kChipSize + y) * kChipSize + x];
  }
  int valid_target_count() const {
    int n = 0;
    for (float v : target)
      if (target_valid(v)) ++n;
    return n;
  }
};

enum class Split { Train, Test };

inline uint64_t block_id_for(double x_m, double y_m) {
  const int32_t bx = int32_t(std::floor(x_m / kBlockSize));
  const int32_t by = int32_t(std::floor(y_m / kBlockSize));
  return (uint64_t(uint32_t(bx)) << 32) | uint64_t(uint32_t(by));
}

// Deterministic hash split: every chip in a block lands on the same side.
inline Split split_for_block(uint64_t block_id, uint64_t seed,
                             double test_fraction = 0.2) {
  const uint64_t h = splitmix64(block_id ^ splitmix64(seed ^ 0x5350'4c49'5421ULL));
  const double u = (h >> 11) * 0x1.0p-53;
  return u < test_fraction ? Split::Test : Split::Train;
}

// Chip extraction from a 7-band SAR stack plus 1-band target raster.
// Rejects chips with any NODATA input pixel or fewer than 16 valid target
// pixels. Returns nullopt on rejection.
inline std::optional<Chip> extract_chip(const Raster& sar, const Raster& target,
                                        int y0, int x0, int quarter, uint64_t id) {
  Chip chip;
  chip.id = id;
  chip.quarter = quarter;
  const double cx = sar.origin_x + (x0 + kChipSize / 2.0) * sar.pixel_size;
  const double cy = sar.origin_y + (y0 + kChipSize / 2.0) * sar.pixel_size;
  chip.center_lon = meters_to_lon(cx);
  chip.center_lat = meters_to_lat(cy);
  chip.block_id = block_id_for(cx, cy);
  chip.input.resize(size_t(kInputChannels) * kChipSize * kChipSize);
  chip.target.resize(size_t(kChipSize) * kChipSize);

  for (int c = 0; c < 7; ++c)
    for (int y = 0; y < kChipSize; ++y)
      for (int x = 0; x < kChipSize; ++x) {
        const float v = sar.at(c, y0 + y, x0 + x);
        if (!std::isfinite(v)) return std::nullopt;  // incomplete input stack
        chip.input[(size_t(c) * kChipSize + y) * kChipSize + x] = v;
      }
  const CoordinateChannels cc = encode_coordinates(chip.center_lon, chip.center_lat);
  const float coord[3] = {float(cc.sin_lon), float(cc.cos_lon), float(cc.lat_scaled)};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < kChipSize * kChipSize; ++i)
      chip.input[(size_t(7 + c) * kChipSize * kChipSize) + i] = coord[c];

  int valid = 0;
  for (int y = 0; y < kChipSize; ++y)
    for (int x = 0; x < kChipSize; ++x) {
      const float v = target.at(0, y0 + y, x0 + x);
      chip.target[size_t(y) * kChipSize + x] = v;
      if (target_valid(v)) ++valid;
    }
  if (valid < kMinValidTargetPixels) return std::nullopt;
  return chip;
}

// Non-overlapping 40x40 chips on a stride-40 grid, capped at 300 per 80 km
// block by seeded reservoir sampling.
inline std::vector<Chip> sample_chips(const Raster& sar, const Raster& target,
                                      int quarter, uint64_t seed) {
  if (sar.width != target.width || sar.height != target.height)
    throw error("shape", "input stack and target raster disagree in extent");
  std::map<uint64_t, std::vector<Chip>> per_block;
  std::map<uint64_t, int64_t> seen;
  uint64_t next_id = 0;
  for (int y0 = 0; y0 + kChipSize <= sar.height; y0 += kChipSize)
    for (int x0 = 0; x0 + kChipSize <= sar.width; x0 += kChipSize) {
      auto chip = extract_chip(sar, target, y0, x0, quarter, next_id++);
      if (!chip) continue;
      auto& bucket = per_block[chip->block_id];
      int64_t& n_seen = seen[chip->block_id];
      if ((int)bucket.size() < kMaxChipsPerBlock) {
        bucket.push_back(std::move(*chip));
      } else {
        RngStream rs(seed, chip->block_id);
        const uint64_t j = rs.at(uint64_t(n_seen)) % uint64_t(n_seen + 1);
        if (j < uint64_t(kMaxChipsPerBlock)) bucket[size_t(j)] = std::move(*chip);
      }
      ++n_seen;
    }
  std::vector<Chip> out;
  for (auto& [_, bucket] : per_block)
    for (auto& c : bucket) out.push_back(std::move(c));
  return out;
}

// ---- Chip set file (WSCF) ------------------------------------------------

constexpr uint32_t kChipFormatVersion = 1;

inline void write_chip_file(const std::string& path, const std::vector<Chip>& chips) {
  std::string out;
  out += "WSCF";
  put_u32(out, kChipFormatVersion);
  put_u64(out, chips.size());
  for (const auto& c : chips) {
    put_u64(out, c.id);
    put_f64(out, c.center_lon);
    put_f64(out, c.center_lat);
    put_i32(out, c.quarter);
    put_u64(out, c.block_id);
    for (float v : c.input) put_f32(out, v);
    for (float v : c.target) put_f32(out, v);
  }
  write_file_atomic(path, out);
}

inline std::vector<Chip> read_chip_file(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader br(data, "chip file " + path);
  if (br.bytes(4) != "WSCF") throw error("corrupt", path + " is not a chip file");
  const uint32_t version = br.u32();
  if (version != kChipFormatVersion)
    throw error("corrupt", "unsupported chip file version " + std::to_string(version));
  const uint64_t count = br.u64();
  std::vector<Chip> chips(count);
  for (auto& c : chips) {
    c.id = br.u64();
    c.center_lon = br.f64();
    c.center_lat = br.f64();
    c.quarter = br.i32();
    c.block_id = br.u64();
    c.input.resize(size_t(kInputChannels) * kChipSize * kChipSize);
    br.f32_block(c.input.data(), c.input.size());
    c.target.resize(size_t(kChipSize) * kChipSize);
    br.f32_block(c.target.data(), c.target.size());
  }
  if (!br.at_end()) throw error("corrupt", path + " has trailing bytes");
  return chips;
}

// ---- Normalization constants --------------------------------------------

// Streaming per-channel mean/std over training chips only. A constant
// channel gets std clamped to 1 with a warning on stderr.
inline void compute_norm_constants(const std::vector<Chip>& train_chips,
                                   std::vector<double>& mean_out,
                                   std::vector<double>& std_out) {
  mean_out.assign(kInputChannels, 0.0);
  std_out.assign(kInputChannels, 1.0);
  std::vector<double> mean(kInputChannels, 0.0), m2(kInputChannels, 0.0);
  std::vector<int64_t> n(kInputChannels, 0);
  for (const auto& chip : train_chips)
    for (int c = 0; c < kInputChannels; ++c)
      for (int i = 0; i < kChipSize * kChipSize; ++i) {
        const double v = chip.input[(size_t(c) * kChipSize * kChipSize) + i];
        ++n[c];
        const double d = v - mean[c];
        mean[c] += d / double(n[c]);
        m2[c] += d * (v - mean[c]);
      }
  for (int c = 0; c < kInputChannels; ++c) {
    if (n[c] == 0) continue;
    mean_out[c] = mean[c];
    const double var = n[c] > 1 ? m2[c] / double(n[c] - 1) : 0.0;
    if (var <= 0.0) {
      std::cerr << "warning: channel " << c << " is constant; std clamped to 1\n";
      std_out[c] = 1.0;
    } else {
      std_out[c] = std::sqrt(var);
    }
  }
}

// ---- Synthetic world -----------------------------------------------------

// Smooth lattice value noise in [0, 1), a pure function of (seed, x, y).
inline double lattice_value(uint64_t seed, int64_t ix, int64_t iy) {
  const uint64_t h = splitmix64(seed ^ splitmix64(uint64_t(ix) * 0x9e3779b97f4a7c15ULL ^
                                                 splitmix64(uint64_t(iy))));
  return (h >> 11) * 0x1.0p-53;
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

inline double value_noise(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int64_t ix = int64_t(fx), iy = int64_t(fy);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double v00 = lattice_value(seed, ix, iy);
  const double v10 = lattice_value(seed, ix + 1, iy);
  const double v01 = lattice_value(seed, ix, iy + 1);
  const double v11 = lattice_value(seed, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

// Three octaves, wavelengths halving from base_wavelength, normalized to [0,1].
inline double octave_noise(uint64_t seed, double x, double y, double base_wavelength,
                           int octaves = 3) {
  double sum = 0.0, norm = 0.0, amp = 1.0, freq = 1.0 / base_wavelength;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(splitmix64(seed + uint64_t(o) * 0x517c'c1b7ULL), x * freq,
                             y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

// Deterministic procedural ground truth. The latent complexity field L is
// dense (known at every cell); pseudo-SAR layers are fixed nonlinear
// responses of L with additive noise; the DEM is an independent smooth field
// that additively modulates L before layer generation.
struct SyntheticWorld {
  uint64_t seed = 42;
  int extent = 512;                // cells per side at 25 m
  double origin_x = 0.0, origin_y = 0.0;
  double footprint_density = 80.0; // footprints per km^2 per quarter
  double base_wavelength = 128.0;  // cells
  double sar_noise = 0.05;

  double cell_probability() const {
    // 1600 cells per km^2 at 25 m
    return std::min(1.0, footprint_density / 1600.0);
  }
};

struct SyntheticRasters {
  Raster sar;     // 7 bands in the fixed layer order
  Raster truth;   // dense latent complexity field (WSCI-like, [6, 12])
  Raster target;  // truth masked by the Bernoulli footprint sampler
};

inline double synth_truth_at(const SyntheticWorld& w, int y, int x) {
  const double base = octave_noise(splitmix64(w.seed ^ 0x4c41'54454e54ULL), x, y,
                                   w.base_wavelength, 3);
  const double dem = octave_noise(splitmix64(w.seed ^ 0x44454dULL), x, y,
                                  w.base_wavelength * 2.0, 2);
  return 6.0 + 6.0 * (0.75 * base + 0.25 * dem);
}

inline double synth_dem_at(const SyntheticWorld& w, int y, int x) {
  return 500.0 * octave_noise(splitmix64(w.seed ^ 0x44454dULL), x, y,
                              w.base_wavelength * 2.0, 2);
}

inline SyntheticRasters synth_generate(const SyntheticWorld& w, int quarter) {
  SyntheticRasters out;
  auto init = [&](Raster& r) {
    r.width = w.extent;
    r.height = w.extent;
    r.origin_x = w.origin_x;
    r.origin_y = w.origin_y;
  };
  init(out.sar);
  init(out.truth);
  init(out.target);
  for (const auto& name : kSarLayerNames) out.sar.add_band(name);
  out.truth.add_band("truth");
  out.target.add_band("wsci");

  const int year = quarter / 4;
  // PALSAR-like layers are annual mosaics; Sentinel-like layers vary per
  // quarter, mirroring the mixed temporal resolution of the real stack.
  RngStream palsar_noise(w.seed, 0x504cULL * 1000 + uint64_t(year));
  RngStream sentinel_noise(w.seed, 0x5331ULL * 1000 + uint64_t(quarter));
  RngStream sampler(w.seed, 0xf00dULL * 1000 + uint64_t(quarter));

  for (int y = 0; y < w.extent; ++y)
    for (int x = 0; x < w.extent; ++x) {
      const double L = synth_truth_at(w, y, x);
      out.truth.at(0, y, x) = float(L);
      const double dem = synth_dem_at(w, y, x);
      // backscatter-like responses, saturating in L
      const double hh = std::tanh((L - 6.0) / 3.0) + w.sar_noise * palsar_noise.next_normal();
      const double hv = 0.8 * std::tanh((L - 7.0) / 2.5) + w.sar_noise * palsar_noise.next_normal();
      const double vv = 0.9 * std::tanh((L - 6.5) / 3.0) + 1.6 * w.sar_noise * sentinel_noise.next_normal();
      const double vh = L / (L + 3.0) + 2.0 * w.sar_noise * sentinel_noise.next_normal();
      const double inc_p = 34.0 + 8.0 * octave_noise(splitmix64(w.seed ^ 0x494e'4350ULL + year), x, y, w.base_wavelength * 2.0, 1);
      const double inc_s = 30.0 + 16.0 * octave_noise(splitmix64(w.seed ^ 0x494e'4353ULL + quarter), x, y, w.base_wavelength * 2.0, 1);
      out.sar.at(0, y, x) = float(hh);
      out.sar.at(1, y, x) = float(hv);
      out.sar.at(2, y, x) = float(vv);
      out.sar.at(3, y, x) = float(vh);
      out.sar.at(4, y, x) = float(inc_p);
      out.sar.at(5, y, x) = float(inc_s);
      out.sar.at(6, y, x) = float(dem);
      if (sampler.next_uniform() < w.cell_probability())
        out.target.at(0, y, x) = float(L);
    }
  return out;
}

// Footprints at sampled cell centers; gridding them back reproduces the
// sparse target raster exactly (sampling is masking, not noising).
inline std::vector<FootprintRecord> synth_footprints(const SyntheticWorld& w,
                                                     int quarter) {
  RngStream sampler(w.seed, 0xf00dULL * 1000 + uint64_t(quarter));
  std::vector<FootprintRecord> out;
  for (int y = 0; y < w.extent; ++y)
    for (int x = 0; x < w.extent; ++x) {
      // consumed in the same order as synth_generate's sampler
      if (sampler.next_uniform() >= w.cell_probability()) continue;
      FootprintRecord f;
      f.lon = meters_to_lon(w.origin_x + (x + 0.5) * kPixelSize);
      f.lat = meters_to_lat(w.origin_y + (y + 0.5) * kPixelSize);
      f.quarter = quarter;
      f.wsci = synth_truth_at(w, y, x);
      out.push_back(f);
    }
  return out;
}

}  // namespace wsci
