#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

#include "wsci/tensor.hpp"

namespace wsci {

constexpr double kNoData = std::numeric_limits<double>::quiet_NaN();

inline bool is_nodata(double v) { return !std::isfinite(v); }

// Target pixels are valid iff finite and strictly positive.
inline bool target_valid(double mu) { return std::isfinite(mu) && mu > 0.0; }

// Fixed-order pairwise summation: run-to-run identical and better conditioned
// than sequential accumulation on long vectors.
inline double pairwise_sum(const double* v, size_t n) {
  if (n <= 8) {
    double s = 0;
    for (size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), v.size());
}

// NLL = 1/2 log(2*pi*sigma2) + (y - mu)^2 / (2*sigma2)
inline double gaussian_nll(double y, double sigma2, double mu) {
  if (!(sigma2 > 0.0))
    throw error("nll", "variance must be positive, got " + std::to_string(sigma2));
  const double r = y - mu;
  return 0.5 * std::log(2.0 * M_PI * sigma2) + r * r / (2.0 * sigma2);
}

// Mean NLL over valid target pixels only. pred: (B, 2, H, W) with channel 0 =
// mean, channel 1 = variance; target: (B, 1, H, W) with NaN or <= 0 invalid.
// grad, if given, receives d(loss)/d(pred); it is exactly zero at invalid
// pixels.
template <class T>
double masked_loss(const TensorT<T>& pred, const TensorT<T>& target,
                   TensorT<T>* grad = nullptr, int64_t* n_valid_out = nullptr) {
  if (pred.batch() != target.batch() || pred.height() != target.height() ||
      pred.width() != target.width() || pred.channels() != 2)
    throw error("shape", "masked_loss expects (B,2,H,W) predictions and (B,1,H,W) targets");
  const int B = pred.batch(), H = pred.height(), W = pred.width();
  std::vector<double> terms;
  terms.reserve(size_t(B) * H * W);
  int64_t n = 0;
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double mu = double(target.at(b, 0, y, x));
        if (!target_valid(mu)) continue;
        const double yv = double(pred.at(b, 0, y, x));
        const double s2 = double(pred.at(b, 1, y, x));
        terms.push_back(gaussian_nll(yv, s2, mu));
        ++n;
      }
  if (n_valid_out) *n_valid_out = n;
  if (n == 0) throw error("empty_batch", "no valid target pixels in batch");
  const double loss = pairwise_sum(terms) / double(n);
  if (grad) {
    *grad = TensorT<T>(B, 2, H, W);
    const double inv_n = 1.0 / double(n);
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double mu = double(target.at(b, 0, y, x));
          if (!target_valid(mu)) continue;
          const double yv = double(pred.at(b, 0, y, x));
          const double s2 = double(pred.at(b, 1, y, x));
          const double r = yv - mu;
          grad->at(b, 0, y, x) = T(inv_n * r / s2);
          grad->at(b, 1, y, x) = T(inv_n * 0.5 * (1.0 / s2 - r * r / (s2 * s2)));
        }
  }
  return loss;
}

// sigma_total = sqrt(sigma_data^2 + sigma_model^2)
inline double total_std(double sigma_data, double sigma_model) {
  return std::hypot(sigma_data, sigma_model);
}

// Z = (y - mu) / sigma_total. NODATA in any operand propagates.
inline double z_score(double y, double mu, double sigma_total) {
  if (is_nodata(y) || is_nodata(mu) || is_nodata(sigma_total)) return kNoData;
  if (!(sigma_total > 0.0)) throw error("zscore", "sigma_total must be positive");
  return (y - mu) / sigma_total;
}

inline std::vector<double> z_scores(const std::vector<double>& pred,
                                    const std::vector<double>& obs,
                                    const std::vector<double>& sigma_total) {
  std::vector<double> z(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) z[i] = z_score(pred[i], obs[i], sigma_total[i]);
  return z;
}

// Fraction of finite |Z| below each threshold.
inline std::vector<double> coverage(const std::vector<double>& z,
                                    const std::vector<double>& thresholds = {1.0, 2.0}) {
  std::vector<double> out(thresholds.size(), 0.0);
  size_t n = 0;
  for (double v : z) {
    if (is_nodata(v)) continue;
    ++n;
    for (size_t t = 0; t < thresholds.size(); ++t)
      if (std::abs(v) < thresholds[t]) out[t] += 1.0;
  }
  if (n > 0)
    for (auto& v : out) v /= double(n);
  return out;
}

struct EvalReport {
  double r2 = kNoData;
  double rmse = kNoData;
  double bias = kNoData;
  int64_t n = 0;
  double coverage_1sd = kNoData;
  double coverage_2sd = kNoData;

  nlohmann::json to_json() const {
    auto num = [](double v) {
      return is_nodata(v) ? nlohmann::json() : nlohmann::json(v);
    };
    return {{"r2", num(r2)},       {"rmse", num(rmse)},
            {"bias", num(bias)},   {"n", n},
            {"coverage_1sd", num(coverage_1sd)}, {"coverage_2sd", num(coverage_2sd)}};
  }
};

// r2 = 1 - SS_res/SS_tot (coefficient of determination). squared_pearson
// switches to the squared correlation reading instead.
inline EvalReport accuracy(const std::vector<double>& pred, const std::vector<double>& obs,
                           bool squared_pearson = false) {
  if (pred.size() != obs.size()) throw error("shape", "accuracy input length mismatch");
  std::vector<double> dp, dr, dsq;
  std::vector<double> ps, os;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (is_nodata(pred[i]) || is_nodata(obs[i])) continue;
    ps.push_back(pred[i]);
    os.push_back(obs[i]);
  }
  EvalReport rep;
  rep.n = int64_t(ps.size());
  if (rep.n == 0) return rep;
  std::vector<double> diffs(ps.size()), sq(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    diffs[i] = ps[i] - os[i];
    sq[i] = diffs[i] * diffs[i];
  }
  rep.bias = pairwise_sum(diffs) / double(rep.n);
  rep.rmse = std::sqrt(pairwise_sum(sq) / double(rep.n));
  const double obs_mean = pairwise_sum(os) / double(rep.n);
  std::vector<double> tot(ps.size());
  for (size_t i = 0; i < os.size(); ++i) {
    const double d = os[i] - obs_mean;
    tot[i] = d * d;
  }
  const double ss_tot = pairwise_sum(tot);
  if (rep.n < 2 || ss_tot == 0.0) {
    rep.r2 = kNoData;  // constant observations
    return rep;
  }
  if (squared_pearson) {
    const double pm = pairwise_sum(ps) / double(rep.n);
    std::vector<double> cov(ps.size()), pv(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
      cov[i] = (ps[i] - pm) * (os[i] - obs_mean);
      pv[i] = (ps[i] - pm) * (ps[i] - pm);
    }
    const double sp = pairwise_sum(pv);
    rep.r2 = sp == 0.0 ? kNoData
                       : (pairwise_sum(cov) * pairwise_sum(cov)) / (sp * ss_tot);
  } else {
    rep.r2 = 1.0 - pairwise_sum(sq) / ss_tot;
  }
  return rep;
}

enum class Contiguity { Queen, Rook };

// Bivariate Moran's I over a grid with NODATA holes:
//   I = (n / sum W) * sum_ij w_ij (a_i - abar)(b_j - bbar)
//       / sqrt(sum (a - abar)^2 * sum (b - bbar)^2)
// The symmetric denominator makes cross-I order-symmetric. With a == b this
// is the usual autocorrelation. NODATA cells are excluded from sums and
// neighborhoods. Row standardization uses the symmetrized form
// w_ij = (1/deg_i + 1/deg_j) / 2, so w_ij = w_ji holds exactly and cross-I
// is order-symmetric even at grid borders where degrees differ.
inline double morans_i(const std::vector<double>& field_a,
                       const std::vector<double>& field_b, int height, int width,
                       Contiguity weights = Contiguity::Queen,
                       bool row_standardized = true) {
  if ((int64_t)field_a.size() != int64_t(height) * width ||
      field_a.size() != field_b.size())
    throw error("shape", "morans_i field size mismatch");
  auto valid = [&](int y, int x) {
    const size_t i = size_t(y) * width + x;
    return !is_nodata(field_a[i]) && !is_nodata(field_b[i]);
  };
  std::vector<double> avals, bvals;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (valid(y, x)) {
        avals.push_back(field_a[size_t(y) * width + x]);
        bvals.push_back(field_b[size_t(y) * width + x]);
      }
  const size_t n = avals.size();
  if (n < 2) throw error("degenerate", "need at least 2 valid cells");
  const double amean = pairwise_sum(avals) / double(n);
  const double bmean = pairwise_sum(bvals) / double(n);
  std::vector<double> da2(n), db2(n);
  for (size_t i = 0; i < n; ++i) {
    da2[i] = (avals[i] - amean) * (avals[i] - amean);
    db2[i] = (bvals[i] - bmean) * (bvals[i] - bmean);
  }
  const double var_a = pairwise_sum(da2), var_b = pairwise_sum(db2);
  if (var_a == 0.0 || var_b == 0.0) throw error("degenerate", "degenerate field");

  const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
  const int dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  const int dy4[] = {-1, 0, 0, 1};
  const int dx4[] = {0, -1, 1, 0};
  const int* dys = weights == Contiguity::Queen ? dy8 : dy4;
  const int* dxs = weights == Contiguity::Queen ? dx8 : dx4;
  const int nn = weights == Contiguity::Queen ? 8 : 4;

  std::vector<int> degree(size_t(height) * width, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!valid(y, x)) continue;
      int deg = 0;
      for (int k = 0; k < nn; ++k) {
        const int ny = y + dys[k], nx = x + dxs[k];
        if (ny < 0 || ny >= height || nx < 0 || nx >= width || !valid(ny, nx)) continue;
        ++deg;
      }
      degree[size_t(y) * width + x] = deg;
    }

  double num = 0.0, wsum = 0.0;
  bool any_pair = false;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!valid(y, x)) continue;
      const size_t i = size_t(y) * width + x;
      if (degree[i] == 0) continue;
      const double da = field_a[i] - amean;
      for (int k = 0; k < nn; ++k) {
        const int ny = y + dys[k], nx = x + dxs[k];
        if (ny < 0 || ny >= height || nx < 0 || nx >= width || !valid(ny, nx)) continue;
        const size_t j = size_t(ny) * width + nx;
        const double w =
            row_standardized ? 0.5 * (1.0 / degree[i] + 1.0 / degree[j]) : 1.0;
        num += w * da * (field_b[j] - bmean);
        wsum += w;
        any_pair = true;
      }
    }
  if (!any_pair) throw error("degenerate", "no valid neighbor pairs");
  return (double(n) / wsum) * num / std::sqrt(var_a * var_b);
}

}  // namespace wsci
