#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "test_helpers.hpp"
#include "wsci/infer.hpp"
#include "wsci/train.hpp"

using namespace wsci;

namespace {

ArchitectureSpec infer_spec() {
  ArchitectureSpec s = ArchitectureSpec::reduced();
  s.norm_mean.assign(10, 0.0);
  s.norm_std.assign(10, 1.0);
  return s;
}

// Constant-valued 7-band stack over the full extent.
Raster constant_sar(int extent, float value) {
  Raster r;
  r.width = r.height = extent;
  for (const auto& name : kSarLayerNames) r.add_band(name);
  for (auto& band : r.bands)
    for (auto& v : band) v = value;
  return r;
}

bool same_band_bits(const Raster& a, const Raster& b) {
  if (a.bands.size() != b.bands.size()) return false;
  for (size_t i = 0; i < a.bands.size(); ++i)
    if (a.bands[i].size() != b.bands[i].size() ||
        std::memcmp(a.bands[i].data(), b.bands[i].data(), 4 * a.bands[i].size()) != 0)
      return false;
  return true;
}

// Largest prediction discontinuity across the window-core grid lines of the
// unshifted pass (x or y divisible by the 32-pixel core stride).
double seam_metric(const Raster& mosaic, int y0, int x0, int size) {
  const int band = mosaic.find_band("mean");
  double worst = 0.0;
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0 + 1; x < x0 + size; ++x) {
      if (x % kChipCore == 0)
        worst = std::max(worst, std::abs(double(mosaic.at(band, y, x)) -
                                         mosaic.at(band, y, x - 1)));
      if (y % kChipCore == 0 && y > y0)
        worst = std::max(worst, std::abs(double(mosaic.at(band, y, x)) -
                                         mosaic.at(band, y - 1, x)));
    }
  return worst;
}

}  // namespace

TEST_CASE("input windows carry the raster stack plus center coordinates") {
  SyntheticWorld w;
  w.extent = 64;
  auto r = synth_generate(w, 0);
  auto in = window_input(r.sar, 8, 12);
  REQUIRE(in.has_value());
  CHECK(in->at(0, 0, 0, 0) == r.sar.at(0, 8, 12));
  CHECK(in->at(0, 6, 39, 39) == r.sar.at(6, 47, 51));
  const double cx = (12 + 20.0) * kPixelSize, cy = (8 + 20.0) * kPixelSize;
  const auto cc = encode_coordinates(meters_to_lon(cx), meters_to_lat(cy));
  CHECK(in->at(0, 7, 5, 5) == float(cc.sin_lon));
  CHECK(in->at(0, 9, 0, 0) == float(cc.lat_scaled));
  // out of bounds or incomplete input: no window
  CHECK_FALSE(window_input(r.sar, -1, 0).has_value());
  CHECK_FALSE(window_input(r.sar, 30, 30).has_value());  // spills past 64
  r.sar.at(2, 20, 20) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(window_input(r.sar, 0, 0).has_value());
}

TEST_CASE("constant input with dropout disabled gives zero epistemic spread") {
  auto spec = infer_spec();
  spec.dropout_rate = 0.0;
  // coordinate channels vary per window; an (effectively) infinite norm std
  // zeroes them exactly so every window sees the identical normalized input
  for (int c = 7; c < 10; ++c) spec.norm_std[c] = 1e300;
  auto model = build_model<float>(spec, RngStream(31, 0));
  Raster sar = constant_sar(160, 0.0f);

  TileJob job{0, 32, 32, 96, 0};
  auto tile = ensemble_predict(model, sar, job, kDefaultOffsets, 1, 7);
  CHECK(tile.pass_count == 5);
  const double expected_mean = tile.mean[tile.idx(48, 48)];
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      const size_t i = tile.idx(y, x);
      if (tile.contributions[i] < 2) continue;
      REQUIRE(tile.sigma_model[i] == 0.0);       // all passes identical
      REQUIRE(tile.mean[i] == expected_mean);    // position-invariant
      REQUIRE(tile.sigma_total[i] == tile.sigma_data[i]);
    }
  // fresh-model head bias puts the mean near 9 and sigma_data near 1
  CHECK(expected_mean == Catch::Approx(9.0).margin(1e-3));
  CHECK(tile.sigma_data[tile.idx(48, 48)] == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("uncertainty composition obeys the quadrature identity per pixel") {
  auto model = build_model<float>(infer_spec(), RngStream(32, 0));
  SyntheticWorld w;
  w.extent = 160;
  auto r = synth_generate(w, 0);
  TileJob job{3, 32, 32, 64, 0};
  auto tile = ensemble_predict(model, r.sar, job, kDefaultOffsets, 1, 9);
  int checked = 0;
  for (size_t i = 0; i < tile.sigma_total.size(); ++i) {
    if (is_nodata(tile.sigma_total[i])) continue;
    const double lhs = tile.sigma_total[i] * tile.sigma_total[i];
    const double rhs = tile.sigma_data[i] * tile.sigma_data[i] +
                       tile.sigma_model[i] * tile.sigma_model[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked > 1000);
  // with real (varying) input the epistemic spread is genuinely nonzero
  double max_sm = 0.0;
  for (double v : tile.sigma_model)
    if (!is_nodata(v)) max_sm = std::max(max_sm, v);
  CHECK(max_sm > 0.0);
}

TEST_CASE("interior pixels receive exactly offsets x passes contributions") {
  auto model = build_model<float>(infer_spec(), RngStream(33, 0));
  Raster sar = constant_sar(192, 0.25f);
  TileJob job{1, 64, 64, 64, 0};
  const int passes = 2;
  auto tile = ensemble_predict(model, sar, job, kDefaultOffsets, passes, 3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      REQUIRE(tile.contributions[tile.idx(y, x)] ==
              int(kDefaultOffsets.size()) * passes);
}

TEST_CASE("ensemble mean of identical passes reproduces the single pass exactly") {
  auto spec = infer_spec();
  spec.dropout_rate = 0.0;  // passes differ only through dropout; disable it
  auto model = build_model<float>(spec, RngStream(34, 0));
  SyntheticWorld w;
  w.extent = 160;
  auto r = synth_generate(w, 1);
  TileJob job{2, 48, 48, 32, 1};
  auto once = ensemble_predict(model, r.sar, job, {0}, 1, 5);
  auto four = ensemble_predict(model, r.sar, job, {0}, 4, 5);
  for (size_t i = 0; i < once.mean.size(); ++i) {
    if (is_nodata(once.mean[i])) continue;
    REQUIRE(four.mean[i] == once.mean[i]);
    REQUIRE(four.sigma_model[i] == 0.0);
  }
  // a single covering pass cannot form a std: flagged as NODATA
  CHECK(once.contributions[once.idx(16, 16)] == 1);
  CHECK(is_nodata(once.sigma_model[once.idx(16, 16)]));
  CHECK(is_nodata(once.sigma_total[once.idx(16, 16)]));
}

TEST_CASE("stitching a single tile reproduces the tile") {
  PredictionTile t;
  t.tile_id = 5;
  t.origin_y = 2;
  t.origin_x = 3;
  t.size = 4;
  const size_t n = 16;
  for (size_t i = 0; i < n; ++i) {
    t.mean.push_back(5.0 + double(i));
    t.sigma_data.push_back(1.0);
    t.sigma_model.push_back(0.5);
    t.sigma_total.push_back(total_std(1.0, 0.5));
    t.contributions.push_back(5);
  }
  Raster m = stitch_mosaic({t}, 10, 10, 0.0, 0.0);
  CHECK(m.at(0, 2, 3) == 5.0f);
  CHECK(m.at(0, 5, 6) == float(5.0 + 15.0));
  CHECK(m.at(2, 3, 4) == 1.0f);
  CHECK(is_nodata(m.at(0, 0, 0)));  // outside the tile
}

TEST_CASE("overlapping tiles with identical predictions leave the strip unchanged") {
  auto make = [](uint64_t id, int ox) {
    PredictionTile t;
    t.tile_id = id;
    t.origin_y = 0;
    t.origin_x = ox;
    t.size = 4;
    for (int i = 0; i < 16; ++i) {
      const int gx = ox + (i % 4);
      t.mean.push_back(double(gx));  // value depends only on global position
      t.sigma_data.push_back(2.0);
      t.sigma_model.push_back(0.0);
      t.sigma_total.push_back(2.0);
      t.contributions.push_back(3);
    }
    return t;
  };
  // overlap on columns 2..3
  Raster m = stitch_mosaic({make(1, 0), make(2, 2)}, 6, 4, 0.0, 0.0);
  for (int x = 0; x < 6; ++x) CHECK(m.at(0, 1, x) == float(x));
  CHECK(m.at(1, 0, 2) == 2.0f);
}

TEST_CASE("the mosaic is byte-identical for one worker and eight") {
  auto model = build_model<float>(infer_spec(), RngStream(35, 0));
  SyntheticWorld w;
  w.extent = 192;
  auto r = synth_generate(w, 0);
  std::vector<TileJob> jobs = {{10, 32, 32, 64, 0}, {11, 32, 96, 64, 0},
                               {12, 96, 32, 64, 0}, {13, 96, 96, 64, 0}};
  InferenceReport rep1, rep8;
  Raster m1 = run_tiles(model, r.sar, jobs, 1, 192, 192, &rep1);
  Raster m8 = run_tiles(model, r.sar, jobs, 8, 192, 192, &rep8);
  CHECK(same_band_bits(m1, m8));
  CHECK(rep1.pixels == 4 * 64 * 64);
  CHECK(rep1.failed_tiles.empty());
  CHECK(rep8.failed_tiles.empty());
  // job order must not matter either
  std::vector<TileJob> shuffled = {jobs[2], jobs[0], jobs[3], jobs[1]};
  Raster m_shuffled = run_tiles(model, r.sar, shuffled, 3, 192, 192, nullptr);
  CHECK(same_band_bits(m1, m_shuffled));
}

TEST_CASE("an empty job set yields an all-NODATA mosaic and a zero report") {
  auto model = build_model<float>(infer_spec(), RngStream(36, 0));
  Raster sar = constant_sar(64, 0.0f);
  InferenceReport rep;
  Raster m = run_tiles(model, sar, {}, 2, 64, 64, &rep);
  CHECK(rep.pixels == 0);
  CHECK(rep.pixels_per_second == 0.0);
  for (const auto& band : m.bands)
    for (float v : band) CHECK(is_nodata(v));
}

TEST_CASE("a tile that keeps failing is excluded and reported as a hole") {
  auto model = build_model<float>(infer_spec(), RngStream(37, 0));
  model.params.erase("stem.conv.weight");  // every forward now throws
  Raster sar = constant_sar(160, 0.0f);
  std::vector<TileJob> jobs = {{21, 32, 32, 64, 0}};
  InferenceReport rep;
  Raster m = run_tiles(model, sar, jobs, 1, 160, 160, &rep);
  REQUIRE(rep.failed_tiles.size() == 1);
  CHECK(rep.failed_tiles[0] == 21);
  for (float v : m.bands[0]) CHECK(is_nodata(v));
}

TEST_CASE("five shifted offsets produce smaller seams than a single grid") {
  // brief training gives the model real spatial structure so single-grid
  // window boundaries show up as discontinuities
  SyntheticWorld w;
  w.extent = 192;
  auto r = synth_generate(w, 0);
  auto spec = infer_spec();
  spec.dropout_rate = 0.1;
  auto model = build_model<float>(spec, RngStream(38, 0));
  auto chips = sample_chips(r.sar, r.target, 0, 5);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  cfg.initial_lr = 2e-3;
  cfg.seed = 2;
  train(model, chips, cfg);

  std::vector<TileJob> jobs = {{0, 32, 32, 128, 0}};
  Raster m1 = run_tiles(model, r.sar, jobs, 2, 192, 192, nullptr, {0}, 1, 3);
  Raster m5 = run_tiles(model, r.sar, jobs, 2, 192, 192, nullptr, kDefaultOffsets, 1, 3);
  const double seam1 = seam_metric(m1, 33, 33, 126);
  const double seam5 = seam_metric(m5, 33, 33, 126);
  INFO("seam1 " << seam1 << " seam5 " << seam5);
  CHECK(seam5 < seam1);
}

TEST_CASE("model hash tracks parameter content") {
  auto a = build_model<float>(infer_spec(), RngStream(39, 0));
  auto b = a;
  CHECK(model_hash(a) == model_hash(b));
  b.params.at("head.conv.bias").value.data[0] += 1.0f;
  CHECK(model_hash(a) != model_hash(b));
  b = a;
  b.buffers.at("stem.bn.mean")[0] += 1.0f;
  CHECK(model_hash(a) != model_hash(b));
}
