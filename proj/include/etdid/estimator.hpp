// Second-step ATEM estimators and their influence functions.
//
// For a cell (t, s, e) with mover weights w^M_i = M_i / E_N[M] and stayer
// weights w^S_i = r(X_i) S_i / E_N[r S]:
//   OR  = E_N[ w^M (dY - m(X)) ]
//   IPW = E_N[ (w^M - w^S) dY ]
//   DR  = E_N[ (w^M - w^S) (dY - m(X)) ]
// Each estimate carries per-unit influence values combining the centered
// mover/stayer terms with a first-step correction
//   psi_est_i = psi_gamma_i' M1 + psi_pi_i' M2,
//   M1 = E_N[(w^M - w^S) dm/dgamma],
//   M2 = E_N[wdot^S (dY - m)] - E_N[wdot^S] E_N[w^S (dY - m)],
// where wdot^S_i = rdot(X_i) S_i / E_N[r S]. Pre-trend cells run the same
// DR formula with dY = Y_r - Y_{r-1} and an OR function fitted to that
// difference on the (t, s) stayers; under parallel trends their population
// value is zero.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "etdid/effective.hpp"
#include "etdid/errors.hpp"
#include "etdid/nuisance.hpp"

namespace etdid {

enum class EstimandKind { OR, IPW, DR };

inline const char* to_string(EstimandKind k) {
  switch (k) {
    case EstimandKind::OR: return "or";
    case EstimandKind::IPW: return "ipw";
    case EstimandKind::DR: return "dr";
  }
  return "?";
}

struct AtemEstimate {
  Cell cell;
  EstimandKind kind = EstimandKind::DR;
  double point = 0.0;
  std::vector<double> influence;  // per unit, mean zero up to solver tolerance
  double analytic_se = 0.0;       // sqrt(E_N[psi^2] / N)
  int n_movers = 0;
  int n_stayers = 0;
  bool is_pretrend = false;
  bool degenerate = false;  // all influence values identical; refuse inference
};

// Intermediate quantities of the DR assembly, exposed for diagnostics and
// for tests of the exact self-normalization identities.
struct InfluenceDecomposition {
  std::vector<double> w_m, w_s;
  Eigen::MatrixXd w_s_dot;  // n x dim(pi)
  std::vector<double> psi_m, psi_s, psi_est;
  Eigen::VectorXd m1, m2;
  double point_m = 0.0;  // E_N[w^M (dY - m)]
  double point_s = 0.0;  // E_N[w^S (dY - m)]
};

namespace detail {

inline double influence_sd(const std::vector<double>& psi) {
  const double n = static_cast<double>(psi.size());
  double mean = 0;
  for (double v : psi) mean += v;
  mean /= n;
  double ss = 0;
  for (double v : psi) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

inline void finalize(AtemEstimate& est, const MoverStayerFrame& frame) {
  est.cell = frame.cell;
  est.is_pretrend = frame.cell.is_pretrend();
  est.n_movers = frame.n_movers;
  est.n_stayers = frame.n_stayers;
  const double n = static_cast<double>(frame.n);
  double ss = 0;
  for (double v : est.influence) ss += v * v;
  est.analytic_se = std::sqrt(ss / n / n);
  est.degenerate = influence_sd(est.influence) == 0.0;
  if (!std::isfinite(est.point))
    throw EstimationError("cell " + frame.cell.label() + ": non-finite point estimate");
}

}  // namespace detail

inline InfluenceDecomposition compute_influence_decomposition(const MoverStayerFrame& frame,
                                                              const OrFit& or_fit,
                                                              const GpsFit& gps_fit) {
  const int n = frame.n;
  const double dn = static_cast<double>(n);
  InfluenceDecomposition dec;
  dec.w_m.assign(static_cast<std::size_t>(n), 0.0);
  dec.w_s.assign(static_cast<std::size_t>(n), 0.0);

  const double mean_m = static_cast<double>(frame.n_movers) / dn;
  double mean_rs = 0;
  for (int i = 0; i < n; ++i)
    if (frame.stayer[static_cast<std::size_t>(i)])
      mean_rs += gps_fit.r_hat[static_cast<std::size_t>(i)];
  mean_rs /= dn;
  if (!(mean_rs > 0))
    throw EstimationError("cell " + frame.cell.label() +
                          ": GPS ratio weights vanish on stayers");

  std::vector<double> resid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    resid[k] = frame.delta_y[k] - or_fit.fitted[k];
    if (frame.mover[k]) dec.w_m[k] = 1.0 / mean_m;
    if (frame.stayer[k]) dec.w_s[k] = gps_fit.r_hat[k] / mean_rs;
  }

  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    dec.point_m += dec.w_m[k] * resid[k];
    dec.point_s += dec.w_s[k] * resid[k];
  }
  dec.point_m /= dn;
  dec.point_s /= dn;

  const int p_gamma = static_cast<int>(or_fit.gradient_rows.cols());
  const int p_pi = static_cast<int>(gps_fit.p_dot.cols());
  dec.m1 = Eigen::VectorXd::Zero(p_gamma);
  dec.m2 = Eigen::VectorXd::Zero(p_pi);
  dec.w_s_dot = Eigen::MatrixXd::Zero(n, p_pi);
  Eigen::VectorXd w_s_dot_mean = Eigen::VectorXd::Zero(p_pi);
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    dec.m1.noalias() +=
        or_fit.gradient_rows.row(i).transpose() * (dec.w_m[k] - dec.w_s[k]);
    if (frame.stayer[k]) {
      dec.w_s_dot.row(i) = gps_fit.r_dot.row(i) / mean_rs;
      dec.m2.noalias() += dec.w_s_dot.row(i).transpose() * resid[k];
      w_s_dot_mean.noalias() += dec.w_s_dot.row(i).transpose();
    }
  }
  dec.m1 /= dn;
  dec.m2 /= dn;
  w_s_dot_mean /= dn;
  dec.m2.noalias() -= w_s_dot_mean * dec.point_s;

  dec.psi_m.assign(static_cast<std::size_t>(n), 0.0);
  dec.psi_s.assign(static_cast<std::size_t>(n), 0.0);
  dec.psi_est.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    dec.psi_m[k] = dec.w_m[k] * (resid[k] - dec.point_m);
    dec.psi_s[k] = dec.w_s[k] * (resid[k] - dec.point_s);
    dec.psi_est[k] = or_fit.psi_gamma.row(i).dot(dec.m1) + gps_fit.psi_pi.row(i).dot(dec.m2);
  }
  return dec;
}

inline AtemEstimate atem_dr(const MoverStayerFrame& frame, const OrFit& or_fit,
                            const GpsFit& gps_fit) {
  const auto dec = compute_influence_decomposition(frame, or_fit, gps_fit);
  AtemEstimate est;
  est.kind = EstimandKind::DR;
  est.point = dec.point_m - dec.point_s;
  est.influence.resize(static_cast<std::size_t>(frame.n));
  for (std::size_t k = 0; k < est.influence.size(); ++k)
    est.influence[k] = dec.psi_m[k] - dec.psi_s[k] - dec.psi_est[k];
  detail::finalize(est, frame);
  return est;
}

// Pre-trend variant of the DR estimator: the frame must carry a pre-trend
// period (its dY is then Y_r - Y_{r-1}) and or_fit must be the regression of
// that difference on the (t, s) stayers.
inline AtemEstimate atem_pretrend(const MoverStayerFrame& frame, const OrFit& or_fit_r,
                                  const GpsFit& gps_fit) {
  if (!frame.cell.is_pretrend())
    throw EstimationError("atem_pretrend: cell " + frame.cell.label() +
                          " carries no pre-trend period");
  return atem_dr(frame, or_fit_r, gps_fit);
}

// Diagnostic estimators without the double-robustness guarantee.
inline AtemEstimate atem_or(const MoverStayerFrame& frame, const OrFit& or_fit) {
  const int n = frame.n;
  const double dn = static_cast<double>(n);
  const double mean_m = static_cast<double>(frame.n_movers) / dn;

  double point = 0;
  std::vector<double> w_m(static_cast<std::size_t>(n), 0.0);
  std::vector<double> resid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    resid[k] = frame.delta_y[k] - or_fit.fitted[k];
    if (frame.mover[k]) w_m[k] = 1.0 / mean_m;
    point += w_m[k] * resid[k];
  }
  point /= dn;

  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(or_fit.gradient_rows.cols());
  for (int i = 0; i < n; ++i)
    m1.noalias() += or_fit.gradient_rows.row(i).transpose() * w_m[static_cast<std::size_t>(i)];
  m1 /= dn;

  AtemEstimate est;
  est.kind = EstimandKind::OR;
  est.point = point;
  est.influence.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    est.influence[k] = w_m[k] * (resid[k] - point) - or_fit.psi_gamma.row(i).dot(m1);
  }
  detail::finalize(est, frame);
  return est;
}

inline AtemEstimate atem_ipw(const MoverStayerFrame& frame, const GpsFit& gps_fit) {
  const int n = frame.n;
  const double dn = static_cast<double>(n);
  const double mean_m = static_cast<double>(frame.n_movers) / dn;
  double mean_rs = 0;
  for (int i = 0; i < n; ++i)
    if (frame.stayer[static_cast<std::size_t>(i)])
      mean_rs += gps_fit.r_hat[static_cast<std::size_t>(i)];
  mean_rs /= dn;
  if (!(mean_rs > 0))
    throw EstimationError("cell " + frame.cell.label() +
                          ": GPS ratio weights vanish on stayers");

  std::vector<double> w_m(static_cast<std::size_t>(n), 0.0);
  std::vector<double> w_s(static_cast<std::size_t>(n), 0.0);
  double point_m = 0, point_s = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    if (frame.mover[k]) w_m[k] = 1.0 / mean_m;
    if (frame.stayer[k]) w_s[k] = gps_fit.r_hat[k] / mean_rs;
    point_m += w_m[k] * frame.delta_y[k];
    point_s += w_s[k] * frame.delta_y[k];
  }
  point_m /= dn;
  point_s /= dn;

  const int p_pi = static_cast<int>(gps_fit.p_dot.cols());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(p_pi);
  Eigen::VectorXd w_s_dot_mean = Eigen::VectorXd::Zero(p_pi);
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    if (!frame.stayer[k]) continue;
    const Eigen::RowVectorXd w_dot = gps_fit.r_dot.row(i) / mean_rs;
    m2.noalias() += w_dot.transpose() * frame.delta_y[k];
    w_s_dot_mean.noalias() += w_dot.transpose();
  }
  m2 /= dn;
  w_s_dot_mean /= dn;
  m2.noalias() -= w_s_dot_mean * point_s;

  AtemEstimate est;
  est.kind = EstimandKind::IPW;
  est.point = point_m - point_s;
  est.influence.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    est.influence[k] = w_m[k] * (frame.delta_y[k] - point_m) -
                       w_s[k] * (frame.delta_y[k] - point_s) -
                       gps_fit.psi_pi.row(i).dot(m2);
  }
  detail::finalize(est, frame);
  return est;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class AggregateKind { TimeAverage, EventWeighted, NumberWeighted };

inline const char* to_string(AggregateKind k) {
  switch (k) {
    case AggregateKind::TimeAverage: return "time-average";
    case AggregateKind::EventWeighted: return "event-weighted";
    case AggregateKind::NumberWeighted: return "number-weighted";
  }
  return "?";
}

struct AggregateComponent {
  Cell cell;
  double weight = 0.0;
};

struct AggregateEstimate {
  AggregateKind kind = AggregateKind::TimeAverage;
  double point = 0.0;
  std::vector<double> influence;
  double analytic_se = 0.0;
  std::vector<AggregateComponent> components;
  // The weight-estimation contribution to the influence function is omitted;
  // component weights are treated as fixed.
  bool weights_treated_as_fixed = true;
  int t = 0;  // evaluation period for the weighted kinds, 0 for time average
};

namespace detail {

inline AggregateEstimate combine(AggregateKind kind, std::span<const AtemEstimate> estimates,
                                 std::span<const double> weights, int t_value) {
  AggregateEstimate agg;
  agg.kind = kind;
  agg.t = t_value;
  const std::size_t n = estimates.front().influence.size();
  agg.influence.assign(n, 0.0);
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    const auto& est = estimates[c];
    if (est.influence.size() != n)
      throw EstimationError("aggregate: influence arrays have mismatched lengths");
    agg.point += weights[c] * est.point;
    for (std::size_t i = 0; i < n; ++i) agg.influence[i] += weights[c] * est.influence[i];
    agg.components.push_back({est.cell, weights[c]});
  }
  double ss = 0;
  for (double v : agg.influence) ss += v * v;
  const double dn = static_cast<double>(n);
  agg.analytic_se = std::sqrt(ss / dn / dn);
  return agg;
}

}  // namespace detail

// Time-series average over the once-specification cells (t, 1, 1), t = 2..T.
inline AggregateEstimate aggregate_time_average(std::span<const AtemEstimate> estimates, int T) {
  if (static_cast<int>(estimates.size()) != T - 1)
    throw EstimationError("time-average aggregate: need one estimate per t = 2.." +
                          std::to_string(T) + ", got " + std::to_string(estimates.size()));
  std::vector<bool> seen(static_cast<std::size_t>(T + 1), false);
  for (const auto& est : estimates) {
    if (est.is_pretrend || est.cell.s != 1 || est.cell.e != 1)
      throw EstimationError("time-average aggregate: component " + est.cell.label() +
                            " is not a once-specification post cell (t, 1, 1)");
    if (est.cell.t < 2 || est.cell.t > T || seen[static_cast<std::size_t>(est.cell.t)])
      throw EstimationError("time-average aggregate: duplicate or out-of-range t in " +
                            est.cell.label());
    seen[static_cast<std::size_t>(est.cell.t)] = true;
  }
  for (int t = 2; t <= T; ++t)
    if (!seen[static_cast<std::size_t>(t)])
      throw EstimationError("time-average aggregate: missing component for t = " +
                            std::to_string(t));
  std::vector<double> weights(estimates.size(), 1.0 / static_cast<double>(T - 1));
  return detail::combine(AggregateKind::TimeAverage, estimates, weights, 0);
}

// Mover-share weighted average of same-period cells across intensities,
// with weights E_N[M_e] / sum_e' E_N[M_e'] estimated by mover counts.
inline AggregateEstimate aggregate_weighted(AggregateKind kind,
                                            std::span<const AtemEstimate> estimates,
                                            std::span<const int> mover_counts) {
  if (kind == AggregateKind::TimeAverage)
    throw EstimationError("aggregate_weighted: use aggregate_time_average for the time average");
  if (estimates.empty()) throw EstimationError("aggregate_weighted: no components");
  if (mover_counts.size() != estimates.size())
    throw EstimationError("aggregate_weighted: need one mover count per component");
  const int t = estimates.front().cell.t;
  long total = 0;
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    if (estimates[c].cell.t != t)
      throw EstimationError("aggregate_weighted: mixed evaluation periods (" +
                            estimates.front().cell.label() + " vs " +
                            estimates[c].cell.label() + ")");
    if (estimates[c].is_pretrend)
      throw EstimationError("aggregate_weighted: pre-trend component " +
                            estimates[c].cell.label());
    if (mover_counts[c] <= 0)
      throw EstimationError("aggregate_weighted: nonpositive mover count for " +
                            estimates[c].cell.label());
    total += mover_counts[c];
  }
  std::vector<double> weights(estimates.size());
  for (std::size_t c = 0; c < estimates.size(); ++c)
    weights[c] = static_cast<double>(mover_counts[c]) / static_cast<double>(total);
  return detail::combine(kind, estimates, weights, t);
}

inline AggregateEstimate aggregate_weighted(AggregateKind kind,
                                            std::span<const AtemEstimate> estimates) {
  std::vector<int> counts;
  counts.reserve(estimates.size());
  for (const auto& est : estimates) counts.push_back(est.n_movers);
  return aggregate_weighted(kind, estimates, counts);
}

// ---------------------------------------------------------------------------
// Per-design driver shared by the CLI and the simulation engine.

struct EstimationOptions {
  EstimandKind kind = EstimandKind::DR;
  OrOptions or_options;
  GpsOptions gps_options;
  double trim = 0.0;  // drop units with fitted GPS outside [trim, 1-trim]
};

struct AnalysisResult {
  std::vector<AtemEstimate> estimates;
  std::vector<std::string> warnings;
};

inline AtemEstimate estimate_cell(const PanelDataset& panel, const EffectivePanel& eff,
                                  const Cell& cell, const EstimationOptions& opt,
                                  std::vector<std::string>* warnings = nullptr) {
  MoverStayerFrame frame = build_cell_frame(panel, eff, cell);

  if (opt.trim > 0.0) {
    const GpsFit probe = fit_gps(frame, opt.gps_options);
    int dropped = 0;
    for (int i = 0; i < frame.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      if (!frame.mover[k] && !frame.stayer[k]) continue;
      const double p = probe.p_hat[k];
      if (p < opt.trim || p > 1.0 - opt.trim) {
        if (frame.mover[k]) --frame.n_movers;
        if (frame.stayer[k]) --frame.n_stayers;
        frame.mover[k] = 0;
        frame.stayer[k] = 0;
        ++dropped;
      }
    }
    if (dropped > 0 && warnings)
      warnings->push_back("cell " + cell.label() + ": trimmed " + std::to_string(dropped) +
                          " units with fitted GPS outside [" + std::to_string(opt.trim) +
                          ", " + std::to_string(1.0 - opt.trim) + "]");
    if (frame.n_movers == 0 || frame.n_stayers == 0)
      throw EstimationError("cell " + cell.label() + ": trimming removed all movers or stayers");
  }

  AtemEstimate est;
  switch (opt.kind) {
    case EstimandKind::OR: {
      const OrFit or_fit = fit_or_stayers(frame, opt.or_options);
      est = atem_or(frame, or_fit);
      break;
    }
    case EstimandKind::IPW: {
      const GpsFit gps_fit = fit_gps(frame, opt.gps_options);
      if (warnings)
        warnings->insert(warnings->end(), gps_fit.warnings.begin(), gps_fit.warnings.end());
      est = atem_ipw(frame, gps_fit);
      break;
    }
    case EstimandKind::DR: {
      const OrFit or_fit = fit_or_stayers(frame, opt.or_options);
      const GpsFit gps_fit = fit_gps(frame, opt.gps_options);
      if (warnings)
        warnings->insert(warnings->end(), gps_fit.warnings.begin(), gps_fit.warnings.end());
      est = atem_dr(frame, or_fit, gps_fit);
      break;
    }
  }
  return est;
}

inline AnalysisResult estimate_cells(const PanelDataset& panel, const EffectivePanel& eff,
                                     std::span<const Cell> cells,
                                     const EstimationOptions& opt = {}) {
  AnalysisResult out;
  out.estimates.reserve(cells.size());
  for (const Cell& cell : cells)
    out.estimates.push_back(estimate_cell(panel, eff, cell, opt, &out.warnings));
  return out;
}

}  // namespace etdid
