// Synthetic-panel generator and Monte Carlo evaluation engine.
//
// The default data generating process draws a time-varying binary treatment
//   D_i1 = 0,  D_it = 1{ pi1 + X_i pi2 + alpha_i + lambda_t >= u_it },  t >= 2,
// untreated outcomes
//   Y*_it(0) = X_i gamma_t + alpha_i + eta_t + v_it,
// and observed outcomes
//   Y_it = Y*_it(0) + tau(t, e) 1{event date = e} + xi_it,
// with X, alpha, u, v, xi mutually independent standard normal draws,
// lambda_t = t/T, gamma_t = t, eta_t = t, pi1 = -1, pi2 = 1 and treatment
// effect surface tau(t, e) = (t + T - e) / T. Under this process the event
// specification is the true effective treatment and the event-cell target
// is tau(t, e) exactly; for once/number cells the engine evaluates against
// the realized mover average of tau(t, event date), recorded per
// replication.
//
// Two documented deviations are available: a trend violation that adds
// c * alpha_i * t to Y*(0) (breaking parallel trends), and a GPS-correct
// variant (logistic u, unit effect removed from selection) under which the
// logit GPS is exactly correct for cells evaluated at t = 2.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "etdid/effective.hpp"
#include "etdid/errors.hpp"
#include "etdid/estimator.hpp"
#include "etdid/inference.hpp"
#include "etdid/panel.hpp"
#include "etdid/parallel.hpp"
#include "etdid/rng.hpp"

namespace etdid {

enum class ErrorLaw { Normal, Logistic, Degenerate };

inline const char* to_string(ErrorLaw law) {
  switch (law) {
    case ErrorLaw::Normal: return "normal";
    case ErrorLaw::Logistic: return "logistic";
    case ErrorLaw::Degenerate: return "degenerate";
  }
  return "?";
}

struct SimConfig {
  int n_units = 1000;
  int n_periods = 4;
  double pi1 = -1.0;
  double pi2 = 1.0;
  // 1-based per-period coefficients; empty vectors select the defaults
  // gamma_t = t, lambda_t = t / T, eta_t = t.
  std::vector<double> gamma_t;
  std::vector<double> lambda_t;
  std::vector<double> eta_t;
  // Flattened tau(t, e) surface, index t * (T + 1) + e; empty selects
  // (t + T - e) / T.
  std::vector<double> tau;
  ErrorLaw x_law = ErrorLaw::Normal;
  ErrorLaw alpha_law = ErrorLaw::Normal;
  ErrorLaw u_law = ErrorLaw::Normal;
  ErrorLaw v_law = ErrorLaw::Normal;
  ErrorLaw xi_law = ErrorLaw::Normal;
  double trend_violation = 0.0;  // adds trend_violation * alpha_i * t to Y*(0)
  int reps = 1000;
  std::uint64_t seed = 987654321;

  double gamma_at(int t) const {
    return gamma_t.empty() ? static_cast<double>(t) : gamma_t.at(static_cast<std::size_t>(t - 1));
  }
  double lambda_at(int t) const {
    return lambda_t.empty() ? static_cast<double>(t) / n_periods
                            : lambda_t.at(static_cast<std::size_t>(t - 1));
  }
  double eta_at(int t) const {
    return eta_t.empty() ? static_cast<double>(t) : eta_t.at(static_cast<std::size_t>(t - 1));
  }
  double tau_at(int t, int e) const {
    if (tau.empty()) return static_cast<double>(t + n_periods - e) / n_periods;
    return tau.at(static_cast<std::size_t>(t) * (n_periods + 1) + static_cast<std::size_t>(e));
  }

  SimConfig with_zero_tau() const {
    SimConfig c = *this;
    c.tau.assign(static_cast<std::size_t>((n_periods + 1) * (n_periods + 1)), 0.0);
    return c;
  }

  // Logistic selection error with the unit effect removed from the
  // selection equation; makes the logit GPS exactly correct for cells with
  // t = 2 and approximately correct elsewhere.
  SimConfig gps_correct_variant() const {
    SimConfig c = *this;
    c.u_law = ErrorLaw::Logistic;
    c.alpha_law = ErrorLaw::Degenerate;
    return c;
  }
};

struct SimDraw {
  PanelDataset panel;
  std::vector<int> event_date;  // i * T + (t-1): first adoption <= t, 0 if none
  int n_periods = 0;

  int event_at(int i, int t) const {
    return event_date[static_cast<std::size_t>(i) * n_periods + static_cast<std::size_t>(t - 1)];
  }
};

namespace detail {

inline double draw_law(ErrorLaw law, RngStream& rng) {
  switch (law) {
    case ErrorLaw::Normal: return rng.normal();
    case ErrorLaw::Logistic: return rng.logistic();
    case ErrorLaw::Degenerate: return 0.0;
  }
  return 0.0;
}

}  // namespace detail

inline SimDraw generate_dgp(const SimConfig& cfg, RngStream& rng) {
  const int n = cfg.n_units;
  const int T = cfg.n_periods;
  if (n < 2 || T < 2) throw ValidationError("simulate: need n_units >= 2 and n_periods >= 2");

  std::vector<std::string> units, periods;
  std::vector<double> outcomes;
  std::vector<std::vector<double>> treatments, covariates;
  units.reserve(static_cast<std::size_t>(n) * T);

  SimDraw draw;
  draw.n_periods = T;
  draw.event_date.assign(static_cast<std::size_t>(n) * T, 0);

  for (int i = 0; i < n; ++i) {
    const double x = detail::draw_law(cfg.x_law, rng);
    const double alpha = detail::draw_law(cfg.alpha_law, rng);
    std::vector<int> d(static_cast<std::size_t>(T + 1), 0);
    for (int t = 2; t <= T; ++t) {
      const double u = detail::draw_law(cfg.u_law, rng);
      d[static_cast<std::size_t>(t)] =
          cfg.pi1 + x * cfg.pi2 + alpha + cfg.lambda_at(t) >= u ? 1 : 0;
    }
    int first = 0;
    for (int t = 1; t <= T; ++t) {
      if (first == 0 && d[static_cast<std::size_t>(t)] != 0) first = t;
      draw.event_date[static_cast<std::size_t>(i) * T + static_cast<std::size_t>(t - 1)] = first;
    }
    for (int t = 1; t <= T; ++t) {
      const double v = detail::draw_law(cfg.v_law, rng);
      const double xi = detail::draw_law(cfg.xi_law, rng);
      const int ed = draw.event_date[static_cast<std::size_t>(i) * T + static_cast<std::size_t>(t - 1)];
      double y = x * cfg.gamma_at(t) + alpha + cfg.eta_at(t) + v + xi;
      y += cfg.trend_violation * alpha * static_cast<double>(t);
      if (ed >= 2) y += cfg.tau_at(t, ed);
      units.push_back("u" + std::to_string(i + 1));
      periods.push_back(std::to_string(t));
      outcomes.push_back(y);
      treatments.push_back({static_cast<double>(d[static_cast<std::size_t>(t)])});
      covariates.push_back({x});
    }
  }
  draw.panel = PanelDataset::from_long(units, periods, outcomes, treatments, covariates);
  return draw;
}

// Per-replication evaluation target: the realized mover average of
// tau(t, event date). For event-specification cells every mover shares the
// event date e, so this equals tau(t, e) exactly; pre-trend cells have
// target zero by construction.
inline double true_atem(const SimConfig& cfg, const SimDraw& draw, const EffectivePanel& eff,
                        const Cell& cell) {
  if (cell.is_pretrend()) return 0.0;
  double acc = 0;
  int count = 0;
  for (int i = 0; i < eff.n_units; ++i) {
    if (eff.at(i, cell.t) != cell.e || eff.at(i, cell.s) != 0) continue;
    const int ed = draw.event_at(i, cell.t);
    acc += ed >= 2 ? cfg.tau_at(cell.t, ed) : 0.0;
    ++count;
  }
  if (count == 0)
    throw EstimationError("true_atem: cell " + cell.label() + " has no movers");
  return acc / static_cast<double>(count);
}

// The fixed cell designs evaluated by the Monte Carlo tables (delta = 0).
inline std::vector<Cell> canonical_design(EffectiveKind kind, int T, bool include_pretrends) {
  std::vector<Cell> cells;
  switch (kind) {
    case EffectiveKind::Once:
      for (int t = 2; t <= T; ++t) cells.push_back({t, 1, 1, {}});
      break;
    case EffectiveKind::Event:
      for (int e = 2; e <= T; ++e)
        for (int t = e; t <= T; ++t) cells.push_back({t, e - 1, e, {}});
      break;
    case EffectiveKind::Number:
      for (int e = 1; e <= T - 1; ++e)
        for (int t = e + 1; t <= T; ++t) cells.push_back({t, 1, e, {}});
      break;
    case EffectiveKind::Custom:
      throw ValidationError("monte carlo: custom specifications have no canonical design");
  }
  if (include_pretrends) {
    std::vector<Cell> expanded;
    for (const Cell& cell : cells) {
      expanded.push_back(cell);
      for (int r = 2; r <= cell.s; ++r) {
        Cell pre = cell;
        pre.r = r;
        expanded.push_back(pre);
      }
    }
    cells = std::move(expanded);
  }
  return cells;
}

struct SimRow {
  int n = 0;
  int n_periods = 0;
  Cell cell;
  double bias = 0.0;
  double rmse = 0.0;
  double pw_cp = 0.0;  // coverage of the uniform band, per cell
  double u_cp = 0.0;   // simultaneous coverage over all cells (same per row)
  double ci_length = 0.0;
};

struct SimTable {
  std::vector<SimRow> rows;
  int reps = 0;
  int completed_reps = 0;
  int flagged_reps = 0;
  std::vector<std::string> flag_messages;  // first few failures, for diagnosis
  int boot_reps = 0;
  std::uint64_t seed = 0;
  double max_center_ratio = 0.0;      // max |E_N psi| / sd(psi) seen
  int pretrend_inconsistent_reps = 0; // reps whose pre-trend bands exclude zero
};

struct MonteCarloOptions {
  EffectiveKind spec = EffectiveKind::Once;
  bool include_pretrends = false;
  EstimandKind kind = EstimandKind::DR;
  bool or_include_covariates = true;
  bool gps_include_covariates = true;
  GpsLink gps_link = GpsLink::Logit;
  int threads = 0;  // <= 0: hardware concurrency
};

// Runs cfg.reps replications: generate, estimate every design cell, run the
// joint multiplier bootstrap (skipped when boot.n_reps == 0), and fold
// bias / RMSE / coverage / CI length into one row per cell. Failed
// replications are flagged and excluded from the averages; more than 1%
// of them aborts the run.
inline SimTable run_monte_carlo(const SimConfig& cfg, const BootstrapConfig& boot,
                                const MonteCarloOptions& opt = {}) {
  const std::vector<Cell> cells = canonical_design(opt.spec, cfg.n_periods, opt.include_pretrends);
  const std::size_t n_cells = cells.size();
  const std::size_t reps = static_cast<std::size_t>(cfg.reps);
  if (reps == 0) throw ValidationError("monte carlo: reps must be positive");
  const bool with_boot = boot.n_reps > 0;

  EstimationOptions est_opt;
  est_opt.kind = opt.kind;
  est_opt.or_options.include_covariates = opt.or_include_covariates;
  est_opt.gps_options.include_covariates = opt.gps_include_covariates;
  est_opt.gps_options.link = opt.gps_link;

  EffectiveTreatmentSpec spec;
  spec.kind = opt.spec;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> err(reps * n_cells, nan);      // estimate - truth
  std::vector<double> cover(reps * n_cells, nan);    // uniform band covers truth
  std::vector<double> ci_len(reps * n_cells, nan);
  std::vector<double> u_cover(reps, nan);
  std::vector<char> flagged(reps, 0);
  std::vector<std::string> messages(reps);
  std::vector<double> center_ratio(reps, 0.0);
  std::vector<char> pre_inconsistent(reps, 0);

  parallel_for(reps, opt.threads, [&](std::size_t rep) {
    try {
      RngStream rng(cfg.seed, static_cast<std::uint64_t>(rep));
      const SimDraw draw = generate_dgp(cfg, rng);
      const EffectivePanel eff = compute_effective_treatment(draw.panel, spec);

      std::vector<AtemEstimate> estimates;
      estimates.reserve(n_cells);
      double ratio = 0.0;
      for (const Cell& cell : cells) {
        AtemEstimate est = estimate_cell(draw.panel, eff, cell, est_opt);
        double mean = 0;
        for (double v : est.influence) mean += v;
        mean /= static_cast<double>(est.influence.size());
        const double sd = detail::influence_sd(est.influence);
        if (sd > 0) ratio = std::max(ratio, std::abs(mean) / sd);
        estimates.push_back(std::move(est));
      }
      center_ratio[rep] = ratio;

      std::vector<double> truths(n_cells);
      for (std::size_t c = 0; c < n_cells; ++c)
        truths[c] = true_atem(cfg, draw, eff, cells[c]);
      for (std::size_t c = 0; c < n_cells; ++c)
        err[rep * n_cells + c] = estimates[c].point - truths[c];

      if (with_boot) {
        std::vector<BootstrapTarget> targets;
        targets.reserve(n_cells);
        for (const auto& est : estimates)
          targets.push_back({est.cell.label(), est.point, est.influence, est.is_pretrend, true});
        BootstrapConfig rep_boot = boot;
        rep_boot.seed = derive_seed(cfg.seed, 0x626F6F74ULL + rep);
        rep_boot.threads = 1;
        const BootstrapResult res = multiplier_bootstrap(targets, rep_boot);
        bool all_covered = true;
        bool pre_flag = false;
        for (std::size_t c = 0; c < n_cells; ++c) {
          const auto [lower, upper] = res.bands[c];
          const bool covered = lower <= truths[c] && truths[c] <= upper;
          cover[rep * n_cells + c] = covered ? 1.0 : 0.0;
          ci_len[rep * n_cells + c] = upper - lower;
          all_covered = all_covered && covered;
          if (cells[c].is_pretrend() && (lower > 0.0 || upper < 0.0)) pre_flag = true;
        }
        u_cover[rep] = all_covered ? 1.0 : 0.0;
        pre_inconsistent[rep] = pre_flag ? 1 : 0;
      }
    } catch (const std::exception& ex) {
      flagged[rep] = 1;
      messages[rep] = ex.what();
    }
  });

  SimTable table;
  table.reps = cfg.reps;
  table.boot_reps = boot.n_reps;
  table.seed = cfg.seed;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    if (flagged[rep]) {
      ++table.flagged_reps;
      if (table.flag_messages.size() < 5) table.flag_messages.push_back(messages[rep]);
    } else {
      ++table.completed_reps;
      table.max_center_ratio = std::max(table.max_center_ratio, center_ratio[rep]);
      if (pre_inconsistent[rep]) ++table.pretrend_inconsistent_reps;
    }
  }
  if (table.completed_reps == 0)
    throw EstimationError("monte carlo: every replication failed; first error: " +
                          (table.flag_messages.empty() ? std::string("?") : table.flag_messages[0]));
  if (100 * table.flagged_reps > cfg.reps)
    throw EstimationError("monte carlo: " + std::to_string(table.flagged_reps) + " of " +
                          std::to_string(cfg.reps) + " replications failed (> 1%); first error: " +
                          table.flag_messages[0]);

  const double dn = static_cast<double>(table.completed_reps);
  for (std::size_t c = 0; c < n_cells; ++c) {
    SimRow row;
    row.n = cfg.n_units;
    row.n_periods = cfg.n_periods;
    row.cell = cells[c];
    double sum_err = 0, sum_sq = 0, sum_cover = 0, sum_ci = 0, sum_u = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      if (flagged[rep]) continue;
      const double e = err[rep * n_cells + c];
      sum_err += e;
      sum_sq += e * e;
      if (with_boot) {
        sum_cover += cover[rep * n_cells + c];
        sum_ci += ci_len[rep * n_cells + c];
        sum_u += u_cover[rep];
      }
    }
    row.bias = sum_err / dn;
    row.rmse = std::sqrt(sum_sq / dn);
    row.pw_cp = with_boot ? sum_cover / dn : nan;
    row.u_cp = with_boot ? sum_u / dn : nan;
    row.ci_length = with_boot ? sum_ci / dn : nan;
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace etdid
