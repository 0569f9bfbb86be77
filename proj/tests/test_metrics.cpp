#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_helpers.hpp"
#include "wsci/metrics.hpp"

using namespace wsci;
using namespace wsci::test;

namespace {

// Independent O(n^2) Moran's I: builds the full weight matrix explicitly and
// evaluates the definition with plain double loops.
double morans_i_bruteforce(const std::vector<double>& fa, const std::vector<double>& fb,
                           int h, int w, Contiguity cont, bool row_std) {
  const int n_cells = h * w;
  auto valid = [&](int i) { return !is_nodata(fa[i]) && !is_nodata(fb[i]); };
  auto adjacent = [&](int i, int j) {
    const int yi = i / w, xi = i % w, yj = j / w, xj = j % w;
    const int dy = std::abs(yi - yj), dx = std::abs(xi - xj);
    if (i == j) return false;
    if (cont == Contiguity::Queen) return dy <= 1 && dx <= 1;
    return dy + dx == 1;
  };
  std::vector<double> deg(n_cells, 0.0);
  for (int i = 0; i < n_cells; ++i) {
    if (!valid(i)) continue;
    for (int j = 0; j < n_cells; ++j)
      if (valid(j) && adjacent(i, j)) deg[i] += 1.0;
  }
  std::vector<std::vector<double>> W(n_cells, std::vector<double>(n_cells, 0.0));
  for (int i = 0; i < n_cells; ++i)
    for (int j = 0; j < n_cells; ++j) {
      if (!valid(i) || !valid(j) || !adjacent(i, j)) continue;
      W[i][j] = row_std ? 0.5 * (1.0 / deg[i] + 1.0 / deg[j]) : 1.0;
    }
  double amean = 0.0, bmean = 0.0;
  int n = 0;
  for (int i = 0; i < n_cells; ++i)
    if (valid(i)) {
      amean += fa[i];
      bmean += fb[i];
      ++n;
    }
  amean /= n;
  bmean /= n;
  double num = 0.0, wsum = 0.0, va = 0.0, vb = 0.0;
  for (int i = 0; i < n_cells; ++i) {
    if (!valid(i)) continue;
    va += (fa[i] - amean) * (fa[i] - amean);
    vb += (fb[i] - bmean) * (fb[i] - bmean);
    for (int j = 0; j < n_cells; ++j) {
      if (W[i][j] == 0.0) continue;
      num += W[i][j] * (fa[i] - amean) * (fb[j] - bmean);
      wsum += W[i][j];
    }
  }
  return (double(n) / wsum) * num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("gaussian NLL closed-form fixtures") {
  // residual 0, unit variance: 1/2 log(2 pi)
  CHECK(gaussian_nll(5.0, 1.0, 5.0) == Catch::Approx(0.9189385332046727).epsilon(1e-14));
  // residual 1, unit variance: above + 1/2
  CHECK(gaussian_nll(6.0, 1.0, 5.0) == Catch::Approx(1.4189385332046727).epsilon(1e-14));
  // general point checked against the formula written out longhand
  const double y = 2.5, s2 = 0.7, mu = 1.1;
  const double expect = 0.5 * std::log(2.0 * M_PI * s2) + (y - mu) * (y - mu) / (2.0 * s2);
  CHECK(gaussian_nll(y, s2, mu) == Catch::Approx(expect).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_nll(1.0, 0.0, 1.0), error);
  CHECK_THROWS_AS(gaussian_nll(1.0, -2.0, 1.0), error);
}

TEST_CASE("gaussian NLL is minimized at variance equal to squared residual") {
  const double y = 3.0, mu = 1.0;
  const double r2 = (y - mu) * (y - mu);
  const double at_min = gaussian_nll(y, r2, mu);
  for (double f : {0.5, 0.8, 0.99, 1.01, 1.3, 2.0})
    if (f != 1.0) CHECK(gaussian_nll(y, r2 * f, mu) > at_min);
  // derivative w.r.t. sigma2 vanishes at the minimum (finite differences)
  const double h = 1e-6;
  const double d = (gaussian_nll(y, r2 + h, mu) - gaussian_nll(y, r2 - h, mu)) / (2 * h);
  CHECK(std::abs(d) < 1e-6);
}

TEST_CASE("masked loss matches a naive per-pixel oracle") {
  RngStream rng(101, 0);
  const int B = 3, H = 5, W = 7;
  DTensor pred(B, 2, H, W), target(B, 1, H, W);
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        pred.at(b, 0, y, x) = 8.0 + rng.next_normal();
        pred.at(b, 1, y, x) = 1.0 + std::abs(rng.next_normal());
        const double u = rng.next_uniform();
        if (u < 0.2)
          target.at(b, 0, y, x) = kNoData;
        else if (u < 0.3)
          target.at(b, 0, y, x) = -1.0;  // non-positive is also invalid
        else if (u < 0.35)
          target.at(b, 0, y, x) = 0.0;
        else
          target.at(b, 0, y, x) = 8.0 + rng.next_normal();
      }

  double naive = 0.0;
  int64_t n = 0;
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double mu = target.at(b, 0, y, x);
        if (!std::isfinite(mu) || mu <= 0.0) continue;
        naive += gaussian_nll(pred.at(b, 0, y, x), pred.at(b, 1, y, x), mu);
        ++n;
      }
  naive /= double(n);

  int64_t n_valid = 0;
  const double loss = masked_loss(pred, target, (DTensor*)nullptr, &n_valid);
  CHECK(n_valid == n);
  CHECK(loss == Catch::Approx(naive).epsilon(1e-12));
}

TEST_CASE("masked loss gradient matches finite differences and is zero at invalid pixels") {
  RngStream rng(102, 0);
  const int B = 2, H = 4, W = 4;
  DTensor pred(B, 2, H, W), target(B, 1, H, W);
  for (auto& v : target.data) v = rng.next_uniform() < 0.4 ? kNoData : 5.0 + rng.next_normal();
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        pred.at(b, 0, y, x) = 5.0 + rng.next_normal();
        pred.at(b, 1, y, x) = 0.5 + std::abs(rng.next_normal());
      }
  DTensor grad;
  masked_loss(pred, target, &grad);
  const DTensor fd = finite_difference(
      [&](const DTensor& p) { return masked_loss(p, target); }, pred, 1e-5);
  CHECK(max_relative_error(grad, fd) < 1e-6);
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (!target_valid(target.at(b, 0, y, x))) {
          CHECK(grad.at(b, 0, y, x) == 0.0);
          CHECK(grad.at(b, 1, y, x) == 0.0);
        }
}

TEST_CASE("masked loss rejects an all-invalid batch and bad shapes") {
  DTensor pred(1, 2, 2, 2), target(1, 1, 2, 2);
  for (auto& v : pred.data) v = 1.0;
  for (auto& v : target.data) v = kNoData;
  CHECK_THROWS_AS(masked_loss(pred, target), error);
  try {
    masked_loss(pred, target);
    FAIL("expected throw");
  } catch (const error& e) {
    CHECK(std::string(e.what()).find("empty_batch") != std::string::npos);
  }
  DTensor bad(1, 3, 2, 2);
  CHECK_THROWS_AS(masked_loss(bad, target), error);
}

TEST_CASE("total standard deviation combines in quadrature") {
  CHECK(total_std(3.0, 4.0) == Catch::Approx(5.0).epsilon(1e-15));
  CHECK(total_std(0.0, 2.0) == 2.0);
  CHECK(total_std(2.0, 0.0) == 2.0);
  // hypot survives magnitudes whose squares overflow
  CHECK(std::isfinite(total_std(1e200, 1e200)));
}

TEST_CASE("z-score fixtures and NODATA propagation") {
  CHECK(z_score(12.0, 10.0, 2.0) == 1.0);
  CHECK(z_score(8.0, 10.0, 2.0) == -1.0);
  CHECK(is_nodata(z_score(kNoData, 10.0, 2.0)));
  CHECK(is_nodata(z_score(10.0, kNoData, 2.0)));
  CHECK(is_nodata(z_score(10.0, 10.0, kNoData)));
  CHECK_THROWS_AS(z_score(1.0, 1.0, 0.0), error);
  CHECK_THROWS_AS(z_score(1.0, 1.0, -1.0), error);
}

TEST_CASE("coverage of standard normal draws matches the 68/95 rule") {
  RngStream rng(7, 3);
  std::vector<double> z(200000);
  for (auto& v : z) v = rng.next_normal();
  const auto cov = coverage(z);
  CHECK(cov[0] == Catch::Approx(0.6827).margin(0.005));
  CHECK(cov[1] == Catch::Approx(0.9545).margin(0.003));
}

TEST_CASE("coverage is monotone in the threshold and skips NODATA") {
  RngStream rng(8, 0);
  std::vector<double> z(5000);
  for (auto& v : z) v = rng.next_normal() * 1.7;
  const auto cov = coverage(z, {0.5, 1.0, 2.0, 3.0});
  for (size_t i = 1; i < cov.size(); ++i) CHECK(cov[i] >= cov[i - 1]);
  // half the entries NODATA: coverage computed over the finite half only
  std::vector<double> z2 = {0.5, kNoData, 0.5, kNoData};
  CHECK(coverage(z2, {1.0})[0] == 1.0);
}

TEST_CASE("accuracy matches a sequential two-pass oracle") {
  RngStream rng(20, 1);
  std::vector<double> pred(400), obs(400);
  for (size_t i = 0; i < pred.size(); ++i) {
    obs[i] = 10.0 + 3.0 * rng.next_normal();
    pred[i] = obs[i] + rng.next_normal();
  }
  // plain sequential oracle
  double om = std::accumulate(obs.begin(), obs.end(), 0.0) / obs.size();
  double ss_res = 0.0, ss_tot = 0.0, bias = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    ss_res += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    ss_tot += (obs[i] - om) * (obs[i] - om);
    bias += pred[i] - obs[i];
  }
  const EvalReport rep = accuracy(pred, obs);
  CHECK(rep.n == 400);
  CHECK(rep.r2 == Catch::Approx(1.0 - ss_res / ss_tot).epsilon(1e-12));
  CHECK(rep.rmse == Catch::Approx(std::sqrt(ss_res / 400.0)).epsilon(1e-12));
  CHECK(rep.bias == Catch::Approx(bias / 400.0).epsilon(1e-10));
}

TEST_CASE("accuracy edge cases") {
  // perfect prediction
  std::vector<double> obs = {1.0, 2.0, 3.0, 4.0};
  EvalReport rep = accuracy(obs, obs);
  CHECK(rep.r2 == Catch::Approx(1.0).margin(1e-15));
  CHECK(rep.rmse == 0.0);
  CHECK(rep.bias == 0.0);
  // predicting the observed mean scores exactly zero
  std::vector<double> mean_pred(4, 2.5);
  CHECK(accuracy(mean_pred, obs).r2 == Catch::Approx(0.0).margin(1e-15));
  // a worse-than-mean predictor goes negative
  std::vector<double> bad = {4.0, 3.0, 2.0, 1.0};
  CHECK(accuracy(bad, obs).r2 < 0.0);
  // constant observations: undefined
  std::vector<double> const_obs(4, 2.0);
  CHECK(is_nodata(accuracy(obs, const_obs).r2));
  // NODATA pairs are dropped, not counted
  std::vector<double> p2 = {1.0, kNoData, 3.0}, o2 = {1.0, 2.0, 3.0};
  CHECK(accuracy(p2, o2).n == 2);
  CHECK_THROWS_AS(accuracy({1.0}, {1.0, 2.0}), error);
}

TEST_CASE("squared-pearson accuracy ignores affine miscalibration") {
  RngStream rng(21, 0);
  std::vector<double> obs(200), pred(200);
  for (size_t i = 0; i < obs.size(); ++i) {
    obs[i] = 5.0 + rng.next_normal();
    pred[i] = 2.0 * obs[i] + 7.0;  // perfectly correlated, badly biased
  }
  CHECK(accuracy(pred, obs, true).r2 == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(accuracy(pred, obs, false).r2 < 0.0);
}

TEST_CASE("Moran's I matches the O(n^2) weight-matrix oracle") {
  RngStream rng(30, 0);
  for (Contiguity cont : {Contiguity::Queen, Contiguity::Rook}) {
    for (bool row_std : {true, false}) {
      for (int trial = 0; trial < 3; ++trial) {
        const int h = 9, w = 11;
        std::vector<double> fa(size_t(h) * w), fb(fa.size());
        for (size_t i = 0; i < fa.size(); ++i) {
          if (rng.next_uniform() < 0.15) {
            fa[i] = kNoData;  // punch holes
            fb[i] = 1.0;
          } else {
            fa[i] = rng.next_normal();
            fb[i] = 0.5 * fa[i] + 0.5 * rng.next_normal();
          }
        }
        const double fast = morans_i(fa, fb, h, w, cont, row_std);
        const double slow = morans_i_bruteforce(fa, fb, h, w, cont, row_std);
        CHECK(fast == Catch::Approx(slow).margin(1e-10));
      }
    }
  }
}

TEST_CASE("checkerboard has rook autocorrelation exactly -1") {
  const int h = 8, w = 8;
  std::vector<double> f(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f[size_t(y) * w + x] = ((y + x) % 2) ? 1.0 : -1.0;
  CHECK(morans_i(f, f, h, w, Contiguity::Rook, true) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("cross Moran's I is symmetric in its arguments") {
  RngStream rng(31, 0);
  const int h = 12, w = 12;
  std::vector<double> fa(size_t(h) * w), fb(fa.size());
  for (size_t i = 0; i < fa.size(); ++i) {
    fa[i] = rng.next_normal();
    fb[i] = rng.next_normal();
  }
  fa[5] = kNoData;  // asymmetric hole position
  fa[77] = kNoData;
  const double ab = morans_i(fa, fb, h, w, Contiguity::Queen, true);
  const double ba = morans_i(fb, fa, h, w, Contiguity::Queen, true);
  CHECK(ab == Catch::Approx(ba).margin(1e-13));
}

TEST_CASE("Moran's I is invariant to mean shifts and positive scaling") {
  RngStream rng(32, 0);
  const int h = 10, w = 10;
  std::vector<double> f(size_t(h) * w);
  for (auto& v : f) v = rng.next_normal();
  const double base = morans_i(f, f, h, w, Contiguity::Queen, true);
  std::vector<double> shifted = f, scaled = f;
  for (auto& v : shifted) v += 42.0;
  for (auto& v : scaled) v *= 3.5;
  CHECK(morans_i(shifted, shifted, h, w, Contiguity::Queen, true) ==
        Catch::Approx(base).margin(1e-10));
  CHECK(morans_i(scaled, scaled, h, w, Contiguity::Queen, true) ==
        Catch::Approx(base).margin(1e-12));
}

TEST_CASE("Moran's I sign behavior: smooth fields positive, white noise near zero") {
  const int h = 24, w = 24;
  std::vector<double> smooth(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      smooth[size_t(y) * w + x] = std::sin(y * 0.3) + std::cos(x * 0.25);
  CHECK(morans_i(smooth, smooth, h, w, Contiguity::Queen, true) > 0.5);
  RngStream rng(33, 0);
  std::vector<double> noise(size_t(h) * w);
  for (auto& v : noise) v = rng.next_normal();
  CHECK(std::abs(morans_i(noise, noise, h, w, Contiguity::Queen, true)) < 0.15);
}

TEST_CASE("Moran's I degenerate inputs throw") {
  const int h = 4, w = 4;
  std::vector<double> constant(size_t(h) * w, 3.0);
  CHECK_THROWS_AS(morans_i(constant, constant, h, w), error);
  std::vector<double> empty_field(size_t(h) * w, kNoData);
  CHECK_THROWS_AS(morans_i(empty_field, empty_field, h, w), error);
  std::vector<double> wrong(5, 1.0);
  CHECK_THROWS_AS(morans_i(wrong, wrong, h, w), error);
}

TEST_CASE("pairwise sum agrees with sequential sum") {
  RngStream rng(40, 0);
  std::vector<double> v(12345);
  for (auto& x : v) x = rng.next_normal();
  const double seq = std::accumulate(v.begin(), v.end(), 0.0);
  CHECK(pairwise_sum(v) == Catch::Approx(seq).epsilon(1e-12));
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}
