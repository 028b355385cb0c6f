// Shared test utilities: independent oracles (kept free of the library's
// estimation code paths) and random-input generators.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "etdid/effective.hpp"
#include "etdid/panel.hpp"
#include "etdid/rng.hpp"

namespace testsupport {

// --------------------------------------------------------------------------
// Dense linear solve by explicit Gaussian elimination with partial pivoting.
// Oracle for the normal equations (X'X) gamma = X'y.
inline std::vector<double> solve_gaussian(std::vector<std::vector<double>> a,
                                          std::vector<double> b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t row = col + 1; row < n; ++row)
      if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    if (a[col][col] == 0.0) throw std::runtime_error("oracle: singular system");
    for (std::size_t row = col + 1; row < n; ++row) {
      const double f = a[row][col] / a[col][col];
      for (std::size_t k = col; k < n; ++k) a[row][k] -= f * a[col][k];
      b[row] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t row = n; row-- > 0;) {
    double acc = b[row];
    for (std::size_t k = row + 1; k < n; ++k) acc -= a[row][k] * x[k];
    x[row] = acc / a[row][row];
  }
  return x;
}

// OLS coefficients via explicit normal equations over rows with use[i] = 1.
inline std::vector<double> ols_normal_equations(const std::vector<std::vector<double>>& rows,
                                                const std::vector<double>& y,
                                                const std::vector<std::uint8_t>& use) {
  const std::size_t p = rows.front().size();
  std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
  std::vector<double> xty(p, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!use[i]) continue;
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += rows[i][a] * y[i];
      for (std::size_t b = 0; b < p; ++b) xtx[a][b] += rows[i][a] * rows[i][b];
    }
  }
  return solve_gaussian(std::move(xtx), std::move(xty));
}

// --------------------------------------------------------------------------
// Logit MLE oracle: dense grid refinement over a 2-d coefficient box.
// Returns the best mean log-likelihood found.
inline double logit_mean_loglik(const std::vector<double>& x, const std::vector<double>& y,
                                double b0, double b1) {
  double ll = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double eta = b0 + b1 * x[i];
    const double softplus =
        eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += y[i] * eta - softplus;
  }
  return ll / static_cast<double>(x.size());
}

inline double logit_grid_mle(const std::vector<double>& x, const std::vector<double>& y,
                             double half_width = 6.0, int points = 41, int refinements = 7) {
  double c0 = 0.0, c1 = 0.0, w = half_width;
  double best = -1e300;
  for (int level = 0; level < refinements; ++level) {
    double best0 = c0, best1 = c1;
    for (int a = 0; a < points; ++a) {
      const double b0 = c0 - w + 2.0 * w * a / (points - 1);
      for (int b = 0; b < points; ++b) {
        const double b1 = c1 - w + 2.0 * w * b / (points - 1);
        const double ll = logit_mean_loglik(x, y, b0, b1);
        if (ll > best) {
          best = ll;
          best0 = b0;
          best1 = b1;
        }
      }
    }
    c0 = best0;
    c1 = best1;
    w = 4.0 * w / (points - 1);  // keep a couple of old grid steps around the argmax
  }
  return best;
}

// --------------------------------------------------------------------------
// Naive re-derivation of effective treatments straight from the defining
// formulas (window t + delta, clipped at T), independent of the library's
// incremental implementation.
inline int naive_effective(const etdid::PanelDataset& panel, etdid::EffectiveKind kind, int delta,
                           int unit, int t) {
  const int w = std::min(t + delta, panel.n_periods());
  int first = 0, count = 0;
  for (int s = 1; s <= w; ++s) {
    if (panel.treated_at(unit, s)) {
      ++count;
      if (first == 0) first = s;
    }
  }
  switch (kind) {
    case etdid::EffectiveKind::Once: return first != 0 ? 1 : 0;
    case etdid::EffectiveKind::Event: return first;
    case etdid::EffectiveKind::Number: return count;
    default: throw std::runtime_error("naive_effective: unsupported kind");
  }
}

// Brute-force difference in means: mover mean of (Y_ta - Y_tb) minus stayer
// mean, with mover/stayer status derived through naive_effective.
inline double diff_in_means_oracle(const etdid::PanelDataset& panel, etdid::EffectiveKind kind,
                                   int delta, const etdid::Cell& cell) {
  const int ta = cell.r ? *cell.r : cell.t;
  const int tb = cell.r ? *cell.r - 1 : cell.s;
  double mover_sum = 0, stayer_sum = 0;
  int mover_n = 0, stayer_n = 0;
  for (int i = 0; i < panel.n_units(); ++i) {
    const int et = naive_effective(panel, kind, delta, i, cell.t);
    const int es = naive_effective(panel, kind, delta, i, cell.s);
    const double dy = panel.outcome(i, ta) - panel.outcome(i, tb);
    if (et == cell.e && es == 0) {
      mover_sum += dy;
      ++mover_n;
    } else if (et == 0 && es == 0) {
      stayer_sum += dy;
      ++stayer_n;
    }
  }
  if (mover_n == 0 || stayer_n == 0) throw std::runtime_error("oracle: empty cell");
  return mover_sum / mover_n - stayer_sum / stayer_n;
}

// --------------------------------------------------------------------------
// Random panels. Treatments are binary with the given adoption probability;
// with n_covariates > 0 each unit gets standard-normal covariates.
inline etdid::PanelDataset random_panel(etdid::RngStream& rng, int n_units, int n_periods,
                                        double adopt_prob = 0.35, int n_covariates = 0) {
  std::vector<std::string> units, periods;
  std::vector<double> outcomes;
  std::vector<std::vector<double>> treatments, covariates;
  for (int i = 0; i < n_units; ++i) {
    std::vector<double> x;
    for (int k = 0; k < n_covariates; ++k) x.push_back(rng.normal());
    for (int t = 1; t <= n_periods; ++t) {
      units.push_back("u" + std::to_string(i));
      periods.push_back(std::to_string(t));
      outcomes.push_back(rng.normal() * 2.0 + 0.3 * t);
      treatments.push_back({rng.bernoulli(adopt_prob) ? 1.0 : 0.0});
      covariates.push_back(x);
    }
  }
  return etdid::PanelDataset::from_long(units, periods, outcomes, treatments, covariates);
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace testsupport
