// Multiplier-bootstrap inference: per-cell standard errors from the
// rescaled interquartile range of the bootstrap draws, a max-t critical
// value, and uniform confidence bands.
//
// Each bootstrap replication b draws one weight vector V* (per unit) from
// its own counter-based substream keyed by (seed, b) and reuses it across
// every cell; this preserves the cross-cell dependence the uniform bands
// rely on and makes results independent of the thread count. Empirical
// quantiles interpolate linearly between order statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "etdid/errors.hpp"
#include "etdid/parallel.hpp"
#include "etdid/rng.hpp"

namespace etdid {

enum class BootstrapWeightKind { Mammen, Rademacher };

inline const char* to_string(BootstrapWeightKind k) {
  return k == BootstrapWeightKind::Mammen ? "mammen" : "rademacher";
}

struct BootstrapConfig {
  int n_reps = 999;
  double alpha = 0.05;
  BootstrapWeightKind weight_kind = BootstrapWeightKind::Mammen;
  std::uint64_t seed = 0;
  int threads = 1;  // <= 0 means hardware concurrency
};

// One inference target: a point estimate plus its per-unit influence values.
// Targets with in_maxt = false still receive bands but do not enter the
// max-t statistic (used for post-only critical values and for aggregates
// reported alongside their components).
struct BootstrapTarget {
  std::string label;
  double point = 0.0;
  std::span<const double> influence;
  bool is_pretrend = false;
  bool in_maxt = true;
};

struct BootstrapResult {
  std::vector<double> se;                            // per target
  double critical_value = 0.0;                       // c_{1-alpha} from max-t
  std::vector<std::pair<double, double>> bands;      // [lower, upper] per target
  std::vector<std::pair<double, double>> draws_iqr;  // (q25, q75) of R* per target
  std::vector<std::string> degenerate_cells;         // targets refused upstream
  double alpha = 0.05;
  int n_reps = 0;
};

// Mammen's golden-ratio two-point weights: V = 1 - kappa with probability
// kappa/sqrt(5) and V = kappa otherwise, kappa = (sqrt(5)+1)/2. Mean 0,
// variance 1.
inline constexpr double kMammenKappa = 1.6180339887498948482;
inline constexpr double kMammenLowProb = 0.72360679774997896964;  // kappa/sqrt(5)

// Interquartile range of the standard normal, pinned to the constant used
// in the SE rescaling (z_{0.75} = 0.6744898).
inline constexpr double kNormalIqr = 2.0 * 0.6744898;

inline std::vector<double> mammen_draw(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = rng.uniform() < kMammenLowProb ? 1.0 - kMammenKappa : kMammenKappa;
  return v;
}

inline std::vector<double> rademacher_draw(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return v;
}

// Empirical quantile with linear interpolation between order statistics
// (h = (n-1)p), evaluated on an already sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) throw InferenceError("quantile of empty sample");
  if (n == 1) return sorted[0];
  const double h = static_cast<double>(n - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> sample, double p) {
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, p);
}

inline BootstrapResult multiplier_bootstrap(std::span<const BootstrapTarget> targets,
                                            const BootstrapConfig& cfg) {
  if (targets.empty()) throw InferenceError("bootstrap: no targets");
  if (cfg.n_reps < 2) throw InferenceError("bootstrap: need at least B = 2 replications");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw InferenceError("bootstrap: alpha must be in (0, 1)");
  if (static_cast<double>(cfg.n_reps) * cfg.alpha < 1.0)
    throw InferenceError("bootstrap: B = " + std::to_string(cfg.n_reps) +
                         " too small for the " + std::to_string(1.0 - cfg.alpha) +
                         " quantile (need B * alpha >= 1)");

  const std::size_t n = targets.front().influence.size();
  std::vector<std::string> degenerate;
  for (const auto& tg : targets) {
    if (tg.influence.size() != n)
      throw InferenceError("bootstrap: influence arrays have mismatched lengths");
    double mean = 0;
    for (double v : tg.influence) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0;
    for (double v : tg.influence) ss += (v - mean) * (v - mean);
    if (ss == 0.0) degenerate.push_back(tg.label);
  }
  if (!degenerate.empty()) {
    std::string msg = "bootstrap: degenerate influence (zero variance) for";
    for (const auto& label : degenerate) msg += " " + label;
    throw InferenceError(msg);
  }
  bool any_maxt = false;
  for (const auto& tg : targets) any_maxt = any_maxt || tg.in_maxt;
  if (!any_maxt) throw InferenceError("bootstrap: no targets selected for the max-t statistic");

  const std::size_t n_targets = targets.size();
  const std::size_t b_reps = static_cast<std::size_t>(cfg.n_reps);
  std::vector<double> r_star(b_reps * n_targets);  // rep-major

  parallel_for(b_reps, cfg.threads, [&](std::size_t b) {
    RngStream rng(cfg.seed, static_cast<std::uint64_t>(b));
    const std::vector<double> v = cfg.weight_kind == BootstrapWeightKind::Mammen
                                      ? mammen_draw(n, rng)
                                      : rademacher_draw(n, rng);
    for (std::size_t c = 0; c < n_targets; ++c) {
      const auto psi = targets[c].influence;
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += v[i] * psi[i];
      r_star[b * n_targets + c] = acc / static_cast<double>(n);
    }
  });

  BootstrapResult out;
  out.alpha = cfg.alpha;
  out.n_reps = cfg.n_reps;
  out.se.resize(n_targets);
  out.draws_iqr.resize(n_targets);
  std::vector<double> column(b_reps);
  std::vector<std::string> zero_se;
  for (std::size_t c = 0; c < n_targets; ++c) {
    for (std::size_t b = 0; b < b_reps; ++b) column[b] = r_star[b * n_targets + c];
    std::sort(column.begin(), column.end());
    const double q25 = quantile_sorted(column, 0.25);
    const double q75 = quantile_sorted(column, 0.75);
    out.draws_iqr[c] = {q25, q75};
    out.se[c] = (q75 - q25) / kNormalIqr;
    if (!(out.se[c] > 0.0)) zero_se.push_back(targets[c].label);
  }
  if (!zero_se.empty()) {
    std::string msg = "bootstrap: zero standard error for";
    for (const auto& label : zero_se) msg += " " + label;
    throw InferenceError(msg);
  }

  std::vector<double> max_t(b_reps, 0.0);
  for (std::size_t b = 0; b < b_reps; ++b) {
    double m = 0.0;
    for (std::size_t c = 0; c < n_targets; ++c) {
      if (!targets[c].in_maxt) continue;
      const double stat = std::abs(r_star[b * n_targets + c]) / out.se[c];
      m = std::max(m, stat);
    }
    max_t[b] = m;
  }
  std::sort(max_t.begin(), max_t.end());
  out.critical_value = quantile_sorted(max_t, 1.0 - cfg.alpha);

  out.bands.resize(n_targets);
  for (std::size_t c = 0; c < n_targets; ++c) {
    const double half = out.critical_value * out.se[c];
    out.bands[c] = {targets[c].point - half, targets[c].point + half};
  }
  return out;
}

// Decision record of the pre-trends check. The testable implication is only
// a necessary condition for parallel trends, so a "consistent" verdict is
// not evidence that the assumption holds.
struct PretrendsVerdict {
  std::vector<std::string> flagged;  // pre-trend targets whose band excludes zero
  bool consistent = true;
  std::string note =
      "necessary condition only: bands covering zero do not establish parallel trends";
};

inline PretrendsVerdict pretrends_report(std::span<const BootstrapTarget> targets,
                                         const BootstrapResult& result) {
  if (targets.size() != result.bands.size())
    throw InferenceError("pretrends: targets and bootstrap result do not match");
  PretrendsVerdict verdict;
  bool any_pre = false;
  for (std::size_t c = 0; c < targets.size(); ++c) {
    if (!targets[c].is_pretrend) continue;
    any_pre = true;
    const auto [lower, upper] = result.bands[c];
    if (lower > 0.0 || upper < 0.0) verdict.flagged.push_back(targets[c].label);
  }
  if (!any_pre) throw InferenceError("pretrends: no pre-trend cells supplied");
  verdict.consistent = verdict.flagged.empty();
  return verdict;
}

}  // namespace etdid
