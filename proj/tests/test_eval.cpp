#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_helpers.hpp"
#include "wsci/eval.hpp"

using namespace wsci;

namespace {

ArchitectureSpec eval_spec() {
  ArchitectureSpec s;
  s.stem_width = 6;
  s.blocks = {{BlockSpec::Kind::Fused, 6, 2, 3, 0.0},
              {BlockSpec::Kind::MBConv, 8, 2, 3, 0.25}};
  s.dropout_rate = 0.0;  // MC passes become identical: exact-zero sigma_model
  s.norm_mean.assign(10, 0.0);
  s.norm_std.assign(10, 1.0);
  return s;
}

// Chip with constant inputs and a caller-controlled valid-pixel pattern in the
// 32x32 core (border target pixels stay NODATA and must be ignored).
Chip make_chip(uint64_t id, int n_valid_core, float target_value) {
  Chip c;
  c.id = id;
  const size_t per_ch = size_t(kChipSize) * kChipSize;
  c.input.assign(size_t(kInputChannels) * per_ch, 0.0f);
  RngStream rng(id, 77);
  for (auto& v : c.input) v = float(rng.next_uniform() - 0.5);
  c.target.assign(per_ch, std::numeric_limits<float>::quiet_NaN());
  int placed = 0;
  for (int y = 4; y < kChipSize - 4 && placed < n_valid_core; ++y)
    for (int x = 4; x < kChipSize - 4 && placed < n_valid_core; ++x) {
      c.target[size_t(y) * kChipSize + x] = target_value;
      ++placed;
    }
  return c;
}

Raster blank_raster(int size, const std::vector<std::string>& bands) {
  Raster r;
  r.width = size;
  r.height = size;
  for (const auto& b : bands) r.add_band(b);
  return r;
}

double naive_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

TEST_CASE("pearson correlation matches a naive two-pass computation") {
  std::vector<double> a = {1.0, 2.5, -0.5, 4.0, 3.0, 0.25};
  std::vector<double> b = {0.5, 1.0, 2.0, -1.5, 0.75, 3.25};
  double am = 0.0, bm = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    am += a[i];
    bm += b[i];
  }
  am /= double(a.size());
  bm /= double(b.size());
  double sab = 0.0, sa = 0.0, sb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - am) * (b[i] - bm);
    sa += (a[i] - am) * (a[i] - am);
    sb += (b[i] - bm) * (b[i] - bm);
  }
  CHECK(pearson_r(a, b) == Catch::Approx(sab / std::sqrt(sa * sb)).margin(1e-14));

  // exact +-1 for affine relations, sign carried by the slope
  std::vector<double> c(a.size()), d(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    c[i] = 3.0 * a[i] - 2.0;
    d[i] = -0.5 * a[i] + 7.0;
  }
  CHECK(pearson_r(a, c) == Catch::Approx(1.0).margin(1e-12));
  CHECK(pearson_r(a, d) == Catch::Approx(-1.0).margin(1e-12));

  // degenerate inputs report NODATA instead of dividing by zero
  CHECK(is_nodata(pearson_r({1.0, 1.0, 1.0}, a)));
  CHECK(is_nodata(pearson_r({1.0}, {2.0})));
  CHECK(is_nodata(pearson_r(a, {1.0, 2.0})));
}

TEST_CASE("chip ensemble reduces pass statistics exactly") {
  auto model = build_model<float>(eval_spec(), RngStream(11, 0));
  Chip chip = make_chip(5, 100, 8.0f);

  CHECK_THROWS_AS(ensemble_predict_chip(model, chip, 1, 0), error);

  // dropout 0: all passes identical; with 4 passes the mean of four equal
  // doubles is exact, so the across-pass std is exactly zero
  auto cp = ensemble_predict_chip(model, chip, 4, 123);
  const int core = kChipSize - 2 * model.spec.border_margin;
  REQUIRE(cp.mean.size() == size_t(core) * core);
  Network net(model);
  Tensor pred = net.forward(chip_input_tensor(chip), Mode::Eval);
  for (int y = 0; y < core; ++y)
    for (int x = 0; x < core; ++x) {
      const size_t i = size_t(y) * core + x;
      CHECK(cp.mean[i] == double(pred.at(0, 0, y, x)));
      CHECK(cp.sigma_model[i] == 0.0);
      CHECK(cp.sigma_data[i] ==
            Catch::Approx(std::sqrt(double(pred.at(0, 1, y, x)))).margin(1e-12));
      CHECK(cp.sigma_total[i] ==
            Catch::Approx(total_std(cp.sigma_data[i], cp.sigma_model[i])).margin(1e-15));
      CHECK(cp.sigma_total[i] >= cp.sigma_data[i]);
    }

  // with dropout the passes differ and the spread shows up
  ArchitectureSpec s = eval_spec();
  s.dropout_rate = 0.3;
  auto mc_model = build_model<float>(s, RngStream(11, 0));
  auto mc = ensemble_predict_chip(mc_model, chip, 6, 123);
  double max_sm = 0.0;
  for (double v : mc.sigma_model) max_sm = std::max(max_sm, v);
  CHECK(max_sm > 0.0);
  // deterministic in the seed, sensitive to it
  auto mc2 = ensemble_predict_chip(mc_model, chip, 6, 123);
  CHECK(mc.mean == mc2.mean);
  auto mc3 = ensemble_predict_chip(mc_model, chip, 6, 124);
  CHECK(mc.mean != mc3.mean);
}

TEST_CASE("sparse validation walks exactly the valid core pixels") {
  auto model = build_model<float>(eval_spec(), RngStream(12, 0));
  std::vector<Chip> chips = {make_chip(1, 400, 8.0f), make_chip(2, 250, 9.0f),
                             make_chip(3, 40, 7.0f)};
  auto sv = validate_sparse(model, chips, 4, 9);
  CHECK(sv.run.checkpoint_hash == model_hash(model));
  CHECK(sv.run.rows.size() == 400 + 250 + 40);
  CHECK(sv.overall.n == 690);
  CHECK(sv.overall.rmse >= 0.0);
  CHECK(sv.overall.coverage_1sd >= 0.0);
  CHECK(sv.overall.coverage_2sd >= sv.overall.coverage_1sd);
  CHECK(sv.by_category.empty());

  // row payloads match an independent ensemble of the same chip
  auto cp = ensemble_predict_chip(model, chips[0], 4, 9);
  CHECK(sv.run.rows[0].pred == cp.mean[0]);
  CHECK(sv.run.rows[0].obs == 8.0);
  CHECK(sv.run.rows[0].sigma_total == cp.sigma_total[0]);
}

TEST_CASE("thin validation strata are merged into an 'other' bucket") {
  auto model = build_model<float>(eval_spec(), RngStream(13, 0));
  std::vector<Chip> chips = {make_chip(1, 400, 8.0f), make_chip(2, 250, 9.0f),
                             make_chip(3, 40, 7.0f), make_chip(4, 30, 10.0f)};
  auto category = [](const Chip& c) -> std::string {
    switch (c.id) {
      case 1: return "lowland";
      case 2: return "upland";
      case 3: return "scree";   // 40 px, below the merge floor
      default: return "marsh";  // 30 px, also below it
    }
  };
  auto sv = validate_sparse(model, chips, 4, 9, category);
  REQUIRE(sv.by_category.size() == 3);
  CHECK(sv.by_category.count("lowland") == 1);
  CHECK(sv.by_category.count("upland") == 1);
  CHECK(sv.by_category.count("other") == 1);
  CHECK(sv.by_category.at("lowland").n == 400);
  CHECK(sv.by_category.at("upland").n == 250);
  CHECK(sv.by_category.at("other").n == 70);
  int64_t total = 0;
  for (const auto& [name, rep] : sv.by_category) total += rep.n;
  CHECK(total == sv.overall.n);
}

TEST_CASE("coverage of an exactly Gaussian predictor hits the normal fractions") {
  // obs = pred + sigma * eps with standard-normal eps: |Z| < 1 should cover
  // 68.27% and |Z| < 2 95.45%, up to binomial noise
  const size_t n = 50000;
  RngStream rng(2024, 3);
  ValidationRun run;
  std::vector<double> sig(n), absres(n);
  for (size_t i = 0; i < n; ++i) {
    const double pred = 8.0 + 2.0 * rng.next_uniform();
    const double sigma = 0.5 + 1.5 * rng.next_uniform();
    const double obs = pred + sigma * rng.next_normal();
    run.rows.push_back({pred, obs, sigma, ""});
  }
  auto rep = calibration_report(run, {});
  const auto margin = [&](double p) { return 3.0 * std::sqrt(p * (1 - p) / double(n)); };
  CHECK(rep.coverage_1sd == Catch::Approx(0.6827).margin(margin(0.6827)));
  CHECK(rep.coverage_2sd == Catch::Approx(0.9545).margin(margin(0.9545)));
  // wider sigma -> larger typical |residual|: positive correlation
  CHECK(rep.residual_sigma_r > 0.2);

  // halving every sigma doubles Z; |Z| < 1 now covers P(|N| < 0.5) = 38.29%
  ValidationRun tight;
  for (const auto& r : run.rows) tight.rows.push_back({r.pred, r.obs, r.sigma_total / 2.0, ""});
  auto rep2 = calibration_report(tight, {});
  CHECK(rep2.coverage_1sd == Catch::Approx(0.3829).margin(margin(0.3829)));
}

TEST_CASE("calibration bins partition rows by observed value") {
  ValidationRun run;
  RngStream rng(7, 1);
  for (int i = 0; i < 2000; ++i) {
    const double obs = 6.0 + 6.0 * rng.next_uniform();
    run.rows.push_back({obs + 0.3 * rng.next_normal(), obs, 0.3, ""});
  }
  const std::vector<double> edges = {6.0, 8.0, 10.0, 12.0, 14.0};
  auto rep = calibration_report(run, edges);
  REQUIRE(rep.bins.size() == 4);
  int64_t total = 0;
  for (size_t b = 0; b < rep.bins.size(); ++b) {
    CHECK(rep.bins[b].lo == edges[b]);
    CHECK(rep.bins[b].hi == edges[b + 1]);
    int64_t expect = 0;
    std::vector<double> z;
    for (const auto& r : run.rows)
      if (r.obs >= edges[b] && r.obs < edges[b + 1]) {
        ++expect;
        z.push_back((r.obs - r.pred) / r.sigma_total);
      }
    CHECK(rep.bins[b].n == expect);
    if (expect > 0) {
      const auto c = coverage(z);
      CHECK(rep.bins[b].coverage_1sd == Catch::Approx(c[0]).margin(1e-12));
      CHECK(rep.bins[b].coverage_2sd == Catch::Approx(c[1]).margin(1e-12));
    }
    total += rep.bins[b].n;
  }
  // obs > 12 never happens, so the last bin is empty and reports NODATA
  CHECK(rep.bins[3].n == 0);
  CHECK(is_nodata(rep.bins[3].coverage_1sd));
  CHECK(total == int64_t(run.rows.size()));

  const auto j = rep.to_json();
  CHECK(j.at("bins").size() == 4);
  CHECK(j.at("coverage_1sd").get<double>() == rep.coverage_1sd);
}

TEST_CASE("a perfect mosaic scores r2 = 1 with structured cross-correlation") {
  const int size = 24;
  Raster truth = blank_raster(size, {"truth"});
  Raster mosaic = blank_raster(size, {"mean", "sigma_data", "sigma_model", "sigma_total"});
  Raster sparse = blank_raster(size, {"target"});
  RngStream rng(3, 5);
  const int mean_band = mosaic.find_band("mean");
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      // smooth field: neighboring pixels are alike, so Moran's I is positive
      const float v = float(9.0 + 2.0 * std::sin(0.3 * y) * std::cos(0.25 * x));
      truth.at(0, y, x) = v;
      mosaic.at(mean_band, y, x) = v;
      if (rng.next_uniform() < 0.3) sparse.at(0, y, x) = v;  // "observed" pixels
    }
  SiteWindow site{"siteA", 0, 0, size};
  auto rep = evaluate_site(mosaic, truth, sparse, site);
  CHECK(rep.site_id == "siteA");
  CHECK(rep.accuracy_all.n == int64_t(size) * size);
  CHECK(rep.accuracy_all.r2 == Catch::Approx(1.0).margin(1e-12));
  CHECK(rep.accuracy_all.rmse == Catch::Approx(0.0).margin(1e-12));
  CHECK(rep.accuracy_observed.n + rep.accuracy_unobserved.n == rep.accuracy_all.n);
  CHECK(rep.accuracy_observed.n > 0);
  CHECK(rep.accuracy_unobserved.n > 0);
  CHECK(rep.cross_moran_i > 0.5);  // smooth field, queen contiguity
  // zero residuals everywhere: degenerate for Moran, reported as NODATA
  CHECK(is_nodata(rep.residual_moran_i));

  // truth_std against a naive two-pass oracle
  std::vector<double> tv;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) tv.push_back(truth.at(0, y, x));
  CHECK(rep.truth_std == Catch::Approx(naive_std(tv)).margin(1e-12));
}

TEST_CASE("site evaluation skips NODATA pixels and matches a direct Moran call") {
  const int size = 20;
  Raster truth = blank_raster(size, {"truth"});
  Raster mosaic = blank_raster(size, {"mean"});
  Raster sparse = blank_raster(size, {"target"});
  RngStream rng(17, 2);
  std::vector<double> pg(size_t(size) * size, kNoData), tg(size_t(size) * size, kNoData);
  std::vector<double> rg(size_t(size) * size, kNoData);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if ((y * size + x) % 7 == 0) continue;  // punch NODATA holes
      const double t = 8.0 + std::sin(0.4 * (y + x)) + 0.1 * rng.next_normal();
      const double p = t + 0.5 * rng.next_normal();
      truth.at(0, y, x) = float(t);
      mosaic.at(0, y, x) = float(p);
      const size_t i = size_t(y) * size + x;
      tg[i] = double(truth.at(0, y, x));
      pg[i] = double(mosaic.at(0, y, x));
      rg[i] = pg[i] - tg[i];
    }
  SiteWindow site{"holes", 0, 0, size};
  auto rep = evaluate_site(mosaic, truth, sparse, site);
  const int64_t expect = int64_t(size) * size - (size * size + 6) / 7;
  CHECK(rep.accuracy_all.n == expect);
  // nothing is "observed" when the sparse target raster is all NODATA
  CHECK(rep.accuracy_observed.n == 0);
  CHECK(rep.accuracy_unobserved.n == expect);
  CHECK(rep.cross_moran_i ==
        morans_i(pg, tg, size, size, Contiguity::Queen, true));
  CHECK(rep.residual_moran_i ==
        morans_i(rg, rg, size, size, Contiguity::Queen, true));
  CHECK(!is_nodata(rep.residual_moran_i));

  const auto j = rep.to_json();
  CHECK(j.at("site_id") == "holes");
  CHECK(j.at("accuracy_all").at("n") == expect);
}

TEST_CASE("site windows crop the requested sub-region only") {
  const int full = 30, size = 10;
  Raster truth = blank_raster(full, {"truth"});
  Raster mosaic = blank_raster(full, {"mean"});
  Raster sparse = blank_raster(full, {"target"});
  for (int y = 0; y < full; ++y)
    for (int x = 0; x < full; ++x) {
      truth.at(0, y, x) = float(6 + (y + x) % 7);
      // perfect inside the window, wildly wrong outside it
      const bool inside = y >= 12 && y < 22 && x >= 5 && x < 15;
      mosaic.at(0, y, x) = inside ? truth.at(0, y, x) : 999.0f;
    }
  auto rep = evaluate_site(mosaic, truth, sparse, SiteWindow{"w", 12, 5, size});
  CHECK(rep.accuracy_all.n == int64_t(size) * size);
  CHECK(rep.accuracy_all.rmse == Catch::Approx(0.0).margin(1e-12));
}
