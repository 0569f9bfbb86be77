#pragma once

#include <atomic>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wsci/data.hpp"
#include "wsci/network.hpp"

namespace wsci {

// Occlusion importance: replace part of the input with a background baseline
// and measure |delta| of the target-pixel mean prediction. Deterministic in
// eval mode. This is occlusion attribution, not SHAP.

// Per-channel mean over a seeded reference sample of chips (default 100).
inline std::vector<double> attribution_background(const std::vector<Chip>& chips,
                                                  uint64_t seed, int sample = 100) {
  if (chips.empty()) throw error("empty", "background requires at least one chip");
  std::vector<size_t> ids(chips.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  RngStream rng(seed, 0xba5eULL);
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.next_u64() % i]);
  const size_t n = std::min(size_t(sample), ids.size());
  std::vector<double> bg(kInputChannels, 0.0);
  const size_t per_ch = size_t(kChipSize) * kChipSize;
  for (size_t i = 0; i < n; ++i) {
    const Chip& c = chips[ids[i]];
    for (int ch = 0; ch < kInputChannels; ++ch)
      for (size_t k = 0; k < per_ch; ++k) bg[ch] += c.input[ch * per_ch + k];
  }
  for (auto& v : bg) v /= double(n) * per_ch;
  return bg;
}

struct AttributionReport {
  int target_row = 0, target_col = 0;  // in 32x32 output coordinates
  std::vector<double> channel_importance;  // 10 values, |delta prediction|
  std::vector<double> influence;           // 40x40 grid of |delta prediction|
  std::vector<double> decay_curve;         // ring mean by Chebyshev distance
  double base_prediction = 0.0;

  nlohmann::json to_json() const {
    return {{"method", "occlusion"},
            {"target_row", target_row},
            {"target_col", target_col},
            {"base_prediction", base_prediction},
            {"channel_importance", channel_importance},
            {"influence_grid_size", kChipSize},
            {"influence", influence},
            {"decay_curve", decay_curve}};
  }
};

inline Tensor chip_input_tensor(const Chip& chip) {
  Tensor in(1, kInputChannels, kChipSize, kChipSize);
  std::copy(chip.input.begin(), chip.input.end(), in.data.begin());
  return in;
}

inline double predict_pixel(Network& net, const Tensor& input, int row, int col) {
  Tensor pred = net.forward(input, Mode::Eval);
  return double(pred.at(0, 0, row, col));
}

// importance_c = |f(chip) - f(chip with channel c replaced by background)|
// at the target pixel's mean channel.
inline std::vector<double> channel_importance(ModelState& model, const Chip& chip,
                                              const std::vector<double>& background,
                                              int target_row, int target_col) {
  Network net(model);
  const Tensor base_input = chip_input_tensor(chip);
  const double base = predict_pixel(net, base_input, target_row, target_col);
  std::vector<double> importance(kInputChannels, 0.0);
  const size_t per_ch = size_t(kChipSize) * kChipSize;
  for (int c = 0; c < kInputChannels; ++c) {
    Tensor occluded = base_input;
    for (size_t k = 0; k < per_ch; ++k) occluded.data[c * per_ch + k] = float(background[c]);
    importance[c] = std::abs(predict_pixel(net, occluded, target_row, target_col) - base);
  }
  return importance;
}

// Occludes a (2r+1)^2 patch around every input pixel (all channels replaced
// by the background) and records |delta| of the target-pixel mean
// prediction. For SE-free models the delta beyond the receptive-field radius
// is exactly zero by convolutional locality.
inline AttributionReport spatial_influence(ModelState& model, const Chip& chip,
                                           const std::vector<double>& background,
                                           int target_row, int target_col,
                                           int patch_radius = 1, int workers = 1) {
  AttributionReport rep;
  rep.target_row = target_row;
  rep.target_col = target_col;
  const Tensor base_input = chip_input_tensor(chip);
  {
    Network net(model);
    rep.base_prediction = predict_pixel(net, base_input, target_row, target_col);
  }
  rep.influence.assign(size_t(kChipSize) * kChipSize, 0.0);
  const size_t per_ch = size_t(kChipSize) * kChipSize;

  auto occlude_at = [&](Network& net, int py, int px) {
    Tensor occ = base_input;
    for (int c = 0; c < kInputChannels; ++c)
      for (int dy = -patch_radius; dy <= patch_radius; ++dy)
        for (int dx = -patch_radius; dx <= patch_radius; ++dx) {
          const int y = py + dy, x = px + dx;
          if (y < 0 || y >= kChipSize || x < 0 || x >= kChipSize) continue;
          occ.data[c * per_ch + size_t(y) * kChipSize + x] = float(background[c]);
        }
    return std::abs(predict_pixel(net, occ, target_row, target_col) -
                    rep.base_prediction);
  };

  // The target output pixel sits at (row + margin, col + margin) in input
  // coordinates. Without squeeze-excitation gates, pixels farther than
  // radius + patch_radius cannot touch it and are skipped; SE pooling is
  // global, so models with SE measure every pixel.
  const int margin = model.spec.border_margin;
  const int ty = target_row + margin, tx = target_col + margin;
  const int reach = model.spec.spatially_local()
                        ? model.spec.receptive_field_radius() + patch_radius
                        : 2 * kChipSize;

  std::atomic<int> next{0};
  auto work = [&]() {
    ModelState local = model;
    Network net(local);
    while (true) {
      const int py = next.fetch_add(1);
      if (py >= kChipSize) break;
      for (int px = 0; px < kChipSize; ++px) {
        if (std::max(std::abs(py - ty), std::abs(px - tx)) > reach) continue;
        rep.influence[size_t(py) * kChipSize + px] = occlude_at(net, py, px);
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  int max_dist = 0;
  for (int py = 0; py < kChipSize; ++py)
    for (int px = 0; px < kChipSize; ++px)
      max_dist = std::max(max_dist, std::max(std::abs(py - ty), std::abs(px - tx)));
  rep.decay_curve.assign(size_t(max_dist) + 1, 0.0);
  std::vector<int> ring_n(size_t(max_dist) + 1, 0);
  for (int py = 0; py < kChipSize; ++py)
    for (int px = 0; px < kChipSize; ++px) {
      const int d = std::max(std::abs(py - ty), std::abs(px - tx));
      rep.decay_curve[d] += rep.influence[size_t(py) * kChipSize + px];
      ring_n[d] += 1;
    }
  for (size_t d = 0; d < rep.decay_curve.size(); ++d)
    if (ring_n[d]) rep.decay_curve[d] /= ring_n[d];
  return rep;
}

}  // namespace wsci
