#pragma once

#include <atomic>
#include <chrono>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "wsci/data.hpp"
#include "wsci/network.hpp"

namespace wsci {

// Diagonal window-grid shifts spreading phases across the 32-pixel core
// stride, so seams from different offsets never line up.
inline const std::vector<int> kDefaultOffsets = {0, 6, 13, 19, 26};

struct TileJob {
  uint64_t tile_id = 0;
  int origin_y = 0, origin_x = 0;  // pixel window in the target raster
  int size = 1600;                 // 40x40 km at 25 m
  int quarter = 0;
};

// Per-pixel ensemble summary for one tile. sigma_total obeys
// sigma_total^2 = sigma_data^2 + sigma_model^2 everywhere.
struct PredictionTile {
  uint64_t tile_id = 0;
  int origin_y = 0, origin_x = 0;
  int size = 0;
  int pass_count = 0;  // offsets x mc passes per offset
  std::vector<double> mean, sigma_data, sigma_model, sigma_total;
  std::vector<int> contributions;

  size_t idx(int y, int x) const { return size_t(y) * size + x; }
};

// Builds the 10-channel input window at pixel origin (y0, x0): 7 raster
// layers plus coordinate channels from the window center. nullopt if the
// window leaves the raster or touches NODATA.
inline std::optional<Tensor> window_input(const Raster& sar, int y0, int x0) {
  if (y0 < 0 || x0 < 0 || y0 + kChipSize > sar.height || x0 + kChipSize > sar.width)
    return std::nullopt;
  Tensor in(1, kInputChannels, kChipSize, kChipSize);
  for (int c = 0; c < 7; ++c)
    for (int y = 0; y < kChipSize; ++y)
      for (int x = 0; x < kChipSize; ++x) {
        const float v = sar.at(c, y0 + y, x0 + x);
        if (!std::isfinite(v)) return std::nullopt;
        in.at(0, c, y, x) = v;
      }
  const double cx = sar.origin_x + (x0 + kChipSize / 2.0) * sar.pixel_size;
  const double cy = sar.origin_y + (y0 + kChipSize / 2.0) * sar.pixel_size;
  const CoordinateChannels cc =
      encode_coordinates(meters_to_lon(cx), meters_to_lat(cy));
  const float coord[3] = {float(cc.sin_lon), float(cc.cos_lon), float(cc.lat_scaled)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kChipSize; ++y)
      for (int x = 0; x < kChipSize; ++x) in.at(0, 7 + c, y, x) = coord[c];
  return in;
}

// Single stochastic pass: mc-mode forward plus border crop (the crop is part
// of the network head). Output (1, 2, 32, 32): mean and aleatoric variance.
inline Tensor predict_window(ModelState& model, const Tensor& input, RngStream& rng) {
  Network net(model);
  return net.forward(input, Mode::MC, &rng);
}

// Shifted-window MC ensemble over one tile. For each offset the tile is
// covered by 40x40 windows whose 32x32 cores tile on a 32-pixel stride; per
// pixel across the covering passes: mean of mean channels, sample std of
// mean channels (epistemic), root-mean of variance channels (aleatoric).
// Window RNG is derived from (seed, tile id, offset, window), so results do
// not depend on scheduling.
inline PredictionTile ensemble_predict(ModelState& model, const Raster& sar,
                                       const TileJob& job,
                                       const std::vector<int>& offsets = kDefaultOffsets,
                                       int mc_passes = 1, uint64_t seed = 0) {
  if (offsets.empty()) throw error("config", "need at least one ensemble offset");
  PredictionTile tile;
  tile.tile_id = job.tile_id;
  tile.origin_y = job.origin_y;
  tile.origin_x = job.origin_x;
  tile.size = job.size;
  tile.pass_count = int(offsets.size()) * mc_passes;
  const size_t n = size_t(job.size) * job.size;
  std::vector<double> sum_mean(n, 0.0), sum_mean_sq(n, 0.0), sum_var(n, 0.0);
  std::vector<int> count(n, 0);

  Network net(model);
  const int margin = model.spec.border_margin;
  for (size_t oi = 0; oi < offsets.size(); ++oi) {
    const int d = offsets[oi];
    // core origins on the global grid d + 32k covering the tile window
    const int ky0 = int(std::floor(double(job.origin_y - d) / kChipCore));
    const int ky1 = int(std::floor(double(job.origin_y + job.size - 1 - d) / kChipCore));
    const int kx0 = int(std::floor(double(job.origin_x - d) / kChipCore));
    const int kx1 = int(std::floor(double(job.origin_x + job.size - 1 - d) / kChipCore));
    for (int ky = ky0; ky <= ky1; ++ky)
      for (int kx = kx0; kx <= kx1; ++kx) {
        const int core_y = d + ky * kChipCore, core_x = d + kx * kChipCore;
        auto input = window_input(sar, core_y - margin, core_x - margin);
        if (!input) continue;  // outside the raster or incomplete stack
        for (int pass = 0; pass < mc_passes; ++pass) {
          RngStream rng(seed, splitmix64(job.tile_id * 0x10001ULL + oi * 0x101ULL +
                                         uint64_t(pass) +
                                         splitmix64(uint64_t(uint32_t(ky)) << 32 |
                                                    uint64_t(uint32_t(kx)))));
          Tensor pred = net.forward(*input, Mode::MC, &rng);
          for (int y = 0; y < kChipCore; ++y) {
            const int gy = core_y + y;
            if (gy < job.origin_y || gy >= job.origin_y + job.size) continue;
            for (int x = 0; x < kChipCore; ++x) {
              const int gx = core_x + x;
              if (gx < job.origin_x || gx >= job.origin_x + job.size) continue;
              const size_t i = size_t(gy - job.origin_y) * job.size + (gx - job.origin_x);
              const double m = pred.at(0, 0, y, x);
              sum_mean[i] += m;
              sum_mean_sq[i] += m * m;
              sum_var[i] += pred.at(0, 1, y, x);
              count[i] += 1;
            }
          }
        }
      }
  }

  tile.mean.assign(n, kNoData);
  tile.sigma_data.assign(n, kNoData);
  tile.sigma_model.assign(n, kNoData);
  tile.sigma_total.assign(n, kNoData);
  tile.contributions = count;
  for (size_t i = 0; i < n; ++i) {
    if (count[i] == 0) continue;
    const double m = sum_mean[i] / count[i];
    tile.mean[i] = m;
    tile.sigma_data[i] = std::sqrt(sum_var[i] / count[i]);
    if (count[i] >= 2) {
      const double ss = std::max(0.0, (sum_mean_sq[i] - count[i] * m * m) /
                                          double(count[i] - 1));
      tile.sigma_model[i] = std::sqrt(ss);
      tile.sigma_total[i] = total_std(tile.sigma_data[i], tile.sigma_model[i]);
    }
  }
  return tile;
}

// Weighted average of overlapping tile pixels by contributing-window count.
// Band order: mean, sigma_total, sigma_data, sigma_model.
inline Raster stitch_mosaic(std::vector<PredictionTile> tiles, int width, int height,
                            double origin_x, double origin_y) {
  std::sort(tiles.begin(), tiles.end(),
            [](const PredictionTile& a, const PredictionTile& b) {
              return a.tile_id < b.tile_id;
            });
  Raster out;
  out.width = width;
  out.height = height;
  out.origin_x = origin_x;
  out.origin_y = origin_y;
  for (const char* name : {"mean", "sigma_total", "sigma_data", "sigma_model"})
    out.add_band(name);
  const size_t n = size_t(width) * height;
  std::vector<double> acc[4];
  for (auto& a : acc) a.assign(n, 0.0);
  std::vector<int64_t> weight(n, 0);
  for (const auto& t : tiles) {
    for (int y = 0; y < t.size; ++y) {
      const int gy = t.origin_y + y;
      if (gy < 0 || gy >= height) continue;
      for (int x = 0; x < t.size; ++x) {
        const int gx = t.origin_x + x;
        if (gx < 0 || gx >= width) continue;
        const size_t ti = t.idx(y, x);
        if (t.contributions[ti] == 0 || is_nodata(t.mean[ti])) continue;
        const size_t gi = size_t(gy) * width + gx;
        const int w = t.contributions[ti];
        acc[0][gi] += w * t.mean[ti];
        acc[1][gi] += w * (is_nodata(t.sigma_total[ti]) ? 0.0 : t.sigma_total[ti]);
        acc[2][gi] += w * t.sigma_data[ti];
        acc[3][gi] += w * (is_nodata(t.sigma_model[ti]) ? 0.0 : t.sigma_model[ti]);
        weight[gi] += w;
      }
    }
  }
  for (size_t i = 0; i < n; ++i) {
    if (weight[i] == 0) continue;
    for (int b = 0; b < 4; ++b) out.bands[b][i] = float(acc[b][i] / double(weight[i]));
  }
  return out;
}

struct InferenceReport {
  int64_t pixels = 0;
  double seconds = 0.0;
  double pixels_per_second = 0.0;
  std::vector<uint64_t> failed_tiles;
};

// Embarrassingly parallel map over tile jobs. Per-tile RNG is derived from
// (seed, tile id) and the mosaic is stitched in tile-id order, so the result
// is invariant to worker count and job order. A failing tile is retried once
// and then excluded, leaving a hole.
inline Raster run_tiles(ModelState& model, const Raster& sar,
                        const std::vector<TileJob>& jobs, int workers,
                        int mosaic_width, int mosaic_height, InferenceReport* report,
                        const std::vector<int>& offsets = kDefaultOffsets,
                        int mc_passes = 1, uint64_t seed = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<PredictionTile> tiles;
  std::vector<uint64_t> failed;
  std::mutex mu;
  std::atomic<size_t> next{0};
  auto work = [&]() {
    // each worker gets a private copy so concurrent forwards never share
    // mutable state (mc mode still reads running stats only)
    ModelState local = model;
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      PredictionTile tile;
      bool ok = false;
      for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        try {
          tile = ensemble_predict(local, sar, jobs[i], offsets, mc_passes, seed);
          ok = true;
        } catch (const std::exception&) {
        }
      }
      std::lock_guard<std::mutex> lock(mu);
      if (ok)
        tiles.push_back(std::move(tile));
      else
        failed.push_back(jobs[i].tile_id);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  Raster mosaic =
      stitch_mosaic(std::move(tiles), mosaic_width, mosaic_height, sar.origin_x,
                    sar.origin_y);
  if (report) {
    report->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report->pixels = 0;
    for (const auto& j : jobs) report->pixels += int64_t(j.size) * j.size;
    report->pixels_per_second =
        report->seconds > 0 ? double(report->pixels) / report->seconds : 0.0;
    std::sort(failed.begin(), failed.end());
    report->failed_tiles = std::move(failed);
  }
  return mosaic;
}

// FNV-1a over the serialized parameters, echoed into output sidecars.
inline uint64_t model_hash(const ModelState& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : m.params) {
    mix(name.data(), name.size());
    mix(p.value.data.data(), p.value.data.size() * sizeof(float));
  }
  for (const auto& [name, b] : m.buffers) {
    mix(name.data(), name.size());
    mix(b.data(), b.size() * sizeof(float));
  }
  return h;
}

}  // namespace wsci
