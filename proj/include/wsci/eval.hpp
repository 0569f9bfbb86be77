#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsci/attribution.hpp"
#include "wsci/infer.hpp"
#include "wsci/metrics.hpp"
#include "wsci/network.hpp"
#include "wsci/train.hpp"

namespace wsci {

struct PixelRow {
  double pred = 0.0, obs = 0.0, sigma_total = 0.0;
  std::string category;
};

struct ValidationRun {
  uint64_t checkpoint_hash = 0;
  std::vector<PixelRow> rows;
};

// Strata below this pixel count are merged into "other".
constexpr int64_t kMinStratumPixels = 100;

// MC-ensemble a single chip: `passes` stochastic forwards; per core pixel
// mean of means, sample std across passes, root-mean of variance channels.
struct ChipPrediction {
  std::vector<double> mean, sigma_data, sigma_model, sigma_total;  // 32x32
};

inline ChipPrediction ensemble_predict_chip(ModelState& model, const Chip& chip,
                                            int passes, uint64_t seed) {
  if (passes < 2) throw error("config", "chip ensemble needs >= 2 passes");
  Network net(model);
  Tensor input = chip_input_tensor(chip);
  const int core = kChipSize - 2 * model.spec.border_margin;
  const size_t n = size_t(core) * core;
  std::vector<double> sum(n, 0.0), sumsq(n, 0.0), var(n, 0.0);
  for (int p = 0; p < passes; ++p) {
    RngStream rng(seed, splitmix64(chip.id * 0x9e37ULL + uint64_t(p)));
    Tensor pred = net.forward(input, Mode::MC, &rng);
    for (size_t i = 0; i < n; ++i) {
      const double m = pred.data[i];
      sum[i] += m;
      sumsq[i] += m * m;
      var[i] += pred.data[n + i];
    }
  }
  ChipPrediction out;
  out.mean.resize(n);
  out.sigma_data.resize(n);
  out.sigma_model.resize(n);
  out.sigma_total.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double m = sum[i] / passes;
    out.mean[i] = m;
    out.sigma_data[i] = std::sqrt(var[i] / passes);
    out.sigma_model[i] =
        std::sqrt(std::max(0.0, (sumsq[i] - passes * m * m) / double(passes - 1)));
    out.sigma_total[i] = total_std(out.sigma_data[i], out.sigma_model[i]);
  }
  return out;
}

struct SparseValidation {
  EvalReport overall;
  std::map<std::string, EvalReport> by_category;
  ValidationRun run;
};

// Held-out accuracy and coverage against sparse targets, pixel by pixel at
// valid target pixels only. The optional category key groups the metrics by
// stratum (biome, season, site — whatever the caller assigns).
inline SparseValidation validate_sparse(
    ModelState& model, const std::vector<Chip>& test_chips, int passes = 5,
    uint64_t seed = 0,
    const std::function<std::string(const Chip&)>& category = nullptr) {
  SparseValidation out;
  out.run.checkpoint_hash = model_hash(model);
  const int border = model.spec.border_margin;
  const int core = kChipSize - 2 * border;
  for (const Chip& chip : test_chips) {
    ChipPrediction cp = ensemble_predict_chip(model, chip, passes, seed);
    const std::string cat = category ? category(chip) : "";
    for (int y = 0; y < core; ++y)
      for (int x = 0; x < core; ++x) {
        const double obs = chip.target[size_t(y + border) * kChipSize + (x + border)];
        if (!target_valid(obs)) continue;
        const size_t i = size_t(y) * core + x;
        out.run.rows.push_back({cp.mean[i], obs, cp.sigma_total[i], cat});
      }
  }
  std::vector<double> pred, obs, sigma;
  for (const auto& r : out.run.rows) {
    pred.push_back(r.pred);
    obs.push_back(r.obs);
    sigma.push_back(r.sigma_total);
  }
  out.overall = accuracy(pred, obs);
  const auto cov = coverage(z_scores(pred, obs, sigma));
  out.overall.coverage_1sd = cov[0];
  out.overall.coverage_2sd = cov[1];

  if (category) {
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < out.run.rows.size(); ++i)
      groups[out.run.rows[i].category].push_back(i);
    // merge thin strata
    std::vector<size_t> other;
    for (auto it = groups.begin(); it != groups.end();) {
      if (int64_t(it->second.size()) < kMinStratumPixels) {
        other.insert(other.end(), it->second.begin(), it->second.end());
        it = groups.erase(it);
      } else {
        ++it;
      }
    }
    if (!other.empty()) groups["other"] = std::move(other);
    for (const auto& [name, ids] : groups) {
      std::vector<double> p, o, s;
      for (size_t i : ids) {
        p.push_back(out.run.rows[i].pred);
        o.push_back(out.run.rows[i].obs);
        s.push_back(out.run.rows[i].sigma_total);
      }
      EvalReport rep = accuracy(p, o);
      const auto c = coverage(z_scores(p, o, s));
      rep.coverage_1sd = c[0];
      rep.coverage_2sd = c[1];
      out.by_category[name] = rep;
    }
  }
  return out;
}

// ---- Dense-truth (ALS-analog) validation --------------------------------

struct SiteWindow {
  std::string site_id;
  int origin_y = 0, origin_x = 0;
  int size = 0;
};

struct SiteReport {
  std::string site_id;
  EvalReport accuracy_all;        // every pixel with prediction + truth
  EvalReport accuracy_observed;   // pixels with a sparse observation
  EvalReport accuracy_unobserved; // gap-filled pixels only
  double cross_moran_i = kNoData;     // prediction vs truth
  double residual_moran_i = kNoData;  // autocorrelation of residuals
  double truth_std = kNoData;         // structural heterogeneity

  nlohmann::json to_json() const {
    return {{"site_id", site_id},
            {"accuracy_all", accuracy_all.to_json()},
            {"accuracy_observed", accuracy_observed.to_json()},
            {"accuracy_unobserved", accuracy_unobserved.to_json()},
            {"cross_moran_i", is_nodata(cross_moran_i) ? nlohmann::json() : nlohmann::json(cross_moran_i)},
            {"residual_moran_i", is_nodata(residual_moran_i) ? nlohmann::json() : nlohmann::json(residual_moran_i)},
            {"truth_std", is_nodata(truth_std) ? nlohmann::json() : nlohmann::json(truth_std)}};
  }
};

// Compare a stitched mosaic against the dense truth raster over one site
// window. The sparse target raster separates observed from gap-filled
// pixels. Moran's I uses queen contiguity at 25 m.
inline SiteReport evaluate_site(const Raster& mosaic, const Raster& truth,
                                const Raster& sparse_target, const SiteWindow& site) {
  SiteReport rep;
  rep.site_id = site.site_id;
  std::vector<double> pred_grid(size_t(site.size) * site.size, kNoData);
  std::vector<double> truth_grid(size_t(site.size) * site.size, kNoData);
  std::vector<double> resid_grid(size_t(site.size) * site.size, kNoData);
  std::vector<double> p_all, o_all, p_obs, o_obs, p_gap, o_gap, tvals;
  const int mean_band = mosaic.find_band("mean");
  for (int y = 0; y < site.size; ++y)
    for (int x = 0; x < site.size; ++x) {
      const int gy = site.origin_y + y, gx = site.origin_x + x;
      const double p = mosaic.at(mean_band, gy, gx);
      const double t = truth.at(0, gy, gx);
      if (is_nodata(p) || is_nodata(t)) continue;
      const size_t i = size_t(y) * site.size + x;
      pred_grid[i] = p;
      truth_grid[i] = t;
      resid_grid[i] = p - t;
      p_all.push_back(p);
      o_all.push_back(t);
      tvals.push_back(t);
      if (target_valid(sparse_target.at(0, gy, gx))) {
        p_obs.push_back(p);
        o_obs.push_back(t);
      } else {
        p_gap.push_back(p);
        o_gap.push_back(t);
      }
    }
  rep.accuracy_all = accuracy(p_all, o_all);
  rep.accuracy_observed = accuracy(p_obs, o_obs);
  rep.accuracy_unobserved = accuracy(p_gap, o_gap);
  if (tvals.size() >= 2) {
    const double m = pairwise_sum(tvals) / double(tvals.size());
    std::vector<double> sq(tvals.size());
    for (size_t i = 0; i < tvals.size(); ++i) sq[i] = (tvals[i] - m) * (tvals[i] - m);
    rep.truth_std = std::sqrt(pairwise_sum(sq) / double(tvals.size() - 1));
  }
  try {
    rep.cross_moran_i =
        morans_i(pred_grid, truth_grid, site.size, site.size, Contiguity::Queen, true);
  } catch (const error&) {
  }
  try {
    rep.residual_moran_i =
        morans_i(resid_grid, resid_grid, site.size, site.size, Contiguity::Queen, true);
  } catch (const error&) {
  }
  return rep;
}

// ---- Calibration ---------------------------------------------------------

struct CalibrationBin {
  double lo = 0.0, hi = 0.0;
  int64_t n = 0;
  double coverage_1sd = kNoData, coverage_2sd = kNoData;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double coverage_1sd = kNoData, coverage_2sd = kNoData;
  double residual_sigma_r = kNoData;  // Pearson r of (|residual|, sigma_total)

  nlohmann::json to_json() const {
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& b : bins)
      jb.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"n", b.n},
                    {"coverage_1sd", b.coverage_1sd},
                    {"coverage_2sd", b.coverage_2sd}});
    return {{"bins", jb},
            {"coverage_1sd", coverage_1sd},
            {"coverage_2sd", coverage_2sd},
            {"residual_sigma_r", residual_sigma_r}};
  }
};

inline double pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return kNoData;
  const size_t n = a.size();
  const double am = pairwise_sum(a) / double(n), bm = pairwise_sum(b) / double(n);
  std::vector<double> cov(n), av(n), bv(n);
  for (size_t i = 0; i < n; ++i) {
    cov[i] = (a[i] - am) * (b[i] - bm);
    av[i] = (a[i] - am) * (a[i] - am);
    bv[i] = (b[i] - bm) * (b[i] - bm);
  }
  const double sa = pairwise_sum(av), sb = pairwise_sum(bv);
  if (sa == 0.0 || sb == 0.0) return kNoData;
  return pairwise_sum(cov) / std::sqrt(sa * sb);
}

// Coverage by observed-value interval plus the residual-vs-sigma correlation.
inline CalibrationReport calibration_report(const ValidationRun& run,
                                            const std::vector<double>& bin_edges) {
  CalibrationReport rep;
  std::vector<double> pred, obs, sigma, absres;
  for (const auto& r : run.rows) {
    pred.push_back(r.pred);
    obs.push_back(r.obs);
    sigma.push_back(r.sigma_total);
    absres.push_back(std::abs(r.pred - r.obs));
  }
  const auto cov = coverage(z_scores(pred, obs, sigma));
  rep.coverage_1sd = cov[0];
  rep.coverage_2sd = cov[1];
  rep.residual_sigma_r = pearson_r(absres, sigma);
  for (size_t b = 0; b + 1 < bin_edges.size(); ++b) {
    CalibrationBin bin;
    bin.lo = bin_edges[b];
    bin.hi = bin_edges[b + 1];
    std::vector<double> z;
    for (const auto& r : run.rows)
      if (r.obs >= bin.lo && r.obs < bin.hi)
        z.push_back(z_score(r.pred, r.obs, r.sigma_total));
    bin.n = int64_t(z.size());
    if (!z.empty()) {
      const auto c = coverage(z);
      bin.coverage_1sd = c[0];
      bin.coverage_2sd = c[1];
    }
    rep.bins.push_back(bin);
  }
  return rep;
}

}  // namespace wsci
