// First-step parametric estimation: least-squares outcome regression on
// stayers and a binary-response GPS model (logit or probit) on the
// mover-or-stayer subsample. Both fits expose per-unit influence vectors
// so the second step can correct for first-step estimation noise.
//
// Covariates are standardized over the fitting subsample before solving
// and coefficients are mapped back, so reported output is in the original
// coordinates and invariant to the internal scaling.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "etdid/effective.hpp"
#include "etdid/errors.hpp"

namespace etdid {

enum class GpsLink { Logit, Probit };

inline const char* to_string(GpsLink link) {
  return link == GpsLink::Logit ? "logit" : "probit";
}

struct OrOptions {
  bool include_covariates = true;  // false fits the intercept-only model
  double rank_tol = 1e-10;         // singular-value ratio threshold
};

struct GpsOptions {
  GpsLink link = GpsLink::Logit;
  bool include_covariates = true;
  int max_iter = 100;
  double grad_tol = 1e-10;          // on the mean score, sup norm
  double separation_bound = 50.0;   // on standardized coefficients
  double overlap_eps = 0.005;       // fitted probabilities outside -> warning
};

struct OrFit {
  Eigen::VectorXd gamma;          // coefficients, intercept first, original scale
  std::vector<double> fitted;     // m(X_i; gamma) for every unit
  Eigen::MatrixXd gradient_rows;  // dm/dgamma per unit = the design rows used
  Eigen::MatrixXd psi_gamma;      // n x dim(gamma) first-step influence
  int n_stayers = 0;
};

struct GpsFit {
  Eigen::VectorXd pi;          // coefficients, intercept first, original scale
  std::vector<double> p_hat;   // fitted GPS; 0 outside the mover/stayer subsample
  std::vector<double> r_hat;   // p / (1 - p)
  Eigen::MatrixXd p_dot;       // dp/dpi per unit
  Eigen::MatrixXd r_dot;       // dr/dpi = p_dot / (1 - p)^2
  Eigen::MatrixXd psi_pi;      // n x dim(pi) first-step influence
  bool converged = false;
  int iterations = 0;
  std::vector<double> loglik_path;  // mean log-likelihood after each iteration
  std::vector<std::string> warnings;
};

namespace detail {

struct Standardizer {
  Eigen::VectorXd mean;   // per design column (column 0 untouched)
  Eigen::VectorXd scale;  // 1 for columns with zero spread

  // Fit on the rows with weight w_i = 1, apply to all rows.
  static Standardizer fit(const Eigen::MatrixXd& design, const std::vector<std::uint8_t>& use) {
    const int p = static_cast<int>(design.cols());
    Standardizer st;
    st.mean = Eigen::VectorXd::Zero(p);
    st.scale = Eigen::VectorXd::Ones(p);
    double n_used = 0;
    for (int i = 0; i < design.rows(); ++i)
      if (use[static_cast<std::size_t>(i)]) ++n_used;
    if (n_used == 0) return st;
    for (int j = 1; j < p; ++j) {
      double s = 0;
      for (int i = 0; i < design.rows(); ++i)
        if (use[static_cast<std::size_t>(i)]) s += design(i, j);
      st.mean(j) = s / n_used;
      double ss = 0;
      for (int i = 0; i < design.rows(); ++i)
        if (use[static_cast<std::size_t>(i)]) {
          const double d = design(i, j) - st.mean(j);
          ss += d * d;
        }
      const double sd = std::sqrt(ss / n_used);
      st.scale(j) = sd > 0 ? sd : 1.0;
    }
    return st;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& design) const {
    Eigen::MatrixXd z = design;
    for (int j = 1; j < z.cols(); ++j)
      z.col(j) = (z.col(j).array() - mean(j)) / scale(j);
    return z;
  }

  // Maps coefficients for the standardized design back to the original one.
  Eigen::VectorXd unstandardize(const Eigen::VectorXd& coef) const {
    Eigen::VectorXd b = coef;
    for (int j = 1; j < coef.size(); ++j) {
      b(j) = coef(j) / scale(j);
      b(0) -= coef(j) * mean(j) / scale(j);
    }
    return b;
  }
};

inline Eigen::MatrixXd used_design(const MoverStayerFrame& frame, bool include_covariates) {
  if (include_covariates) return frame.design;
  return frame.design.leftCols(1);
}

// Smallest/largest singular values via the Gram matrix (cheap at these
// widths); ratio below tol flags rank deficiency.
inline void check_rank(const Eigen::MatrixXd& gram, double tol, const Cell& cell,
                       const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const auto& ev = eig.eigenvalues();
  const double sv_max = std::sqrt(std::max(ev(ev.size() - 1), 0.0));
  const double sv_min = std::sqrt(std::max(ev(0), 0.0));
  if (!(sv_min > tol * sv_max))
    throw EstimationError(std::string(what) + " design is rank deficient (collinear "
                          "covariates) in cell " + cell.label());
}

}  // namespace detail

// Least squares of Delta Y on the design over stayers. Fitted values and
// gradient rows are produced for every unit because the DR estimator needs
// m(X_i; gamma) for movers as well.
inline OrFit fit_or_stayers(const MoverStayerFrame& frame, const OrOptions& opt = {}) {
  const Eigen::MatrixXd design = detail::used_design(frame, opt.include_covariates);
  const int n = frame.n;
  const int p = static_cast<int>(design.cols());
  if (frame.n_stayers < p + 1)
    throw EstimationError("cell " + frame.cell.label() + ": only " +
                          std::to_string(frame.n_stayers) + " stayers for " +
                          std::to_string(p) + " outcome-regression coefficients");

  const auto st = detail::Standardizer::fit(design, frame.stayer);
  const Eigen::MatrixXd z = st.apply(design);

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd zty = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < n; ++i) {
    if (!frame.stayer[static_cast<std::size_t>(i)]) continue;
    gram.noalias() += z.row(i).transpose() * z.row(i);
    zty.noalias() += z.row(i).transpose() * frame.delta_y[static_cast<std::size_t>(i)];
  }
  gram /= static_cast<double>(frame.n_stayers);
  zty /= static_cast<double>(frame.n_stayers);
  detail::check_rank(gram, opt.rank_tol, frame.cell, "outcome-regression");

  const Eigen::VectorXd coef_std = gram.ldlt().solve(zty);

  OrFit fit;
  fit.gamma = st.unstandardize(coef_std);
  fit.n_stayers = frame.n_stayers;
  fit.gradient_rows = design;
  fit.fitted.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    fit.fitted[static_cast<std::size_t>(i)] = design.row(i).dot(fit.gamma);

  // psi^gamma_i = (E_N[S x x'])^{-1} S_i x_i (dY_i - x_i'gamma), original scale.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < n; ++i)
    if (frame.stayer[static_cast<std::size_t>(i)])
      a.noalias() += design.row(i).transpose() * design.row(i);
  a /= static_cast<double>(n);
  const auto a_solver = a.ldlt();
  fit.psi_gamma = Eigen::MatrixXd::Zero(n, p);
  for (int i = 0; i < n; ++i) {
    if (!frame.stayer[static_cast<std::size_t>(i)]) continue;
    const double resid =
        frame.delta_y[static_cast<std::size_t>(i)] - fit.fitted[static_cast<std::size_t>(i)];
    fit.psi_gamma.row(i) = a_solver.solve(design.row(i).transpose() * resid).transpose();
  }
  return fit;
}

namespace detail {

inline double logit_p(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

// log P(y | eta) for the logit link, stable in both tails.
inline double logit_loglik_term(double y, double eta) {
  // y*eta - log(1 + exp(eta))
  const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  return y * eta - softplus;
}

inline double probit_p(double eta) { return 0.5 * std::erfc(-eta / 1.4142135623730951); }

inline double probit_density(double eta) {
  return 0.3989422804014327 * std::exp(-0.5 * eta * eta);
}

}  // namespace detail

// Maximum likelihood for P(M = 1 | X) on the mover-or-stayer subsample via
// Newton-Raphson with step halving (Fisher scoring for the probit link).
inline GpsFit fit_gps(const MoverStayerFrame& frame, const GpsOptions& opt = {}) {
  const Eigen::MatrixXd design = detail::used_design(frame, opt.include_covariates);
  const int n = frame.n;
  const int p = static_cast<int>(design.cols());
  const int n_sub = frame.n_movers + frame.n_stayers;
  if (n_sub < p + 1)
    throw EstimationError("cell " + frame.cell.label() + ": only " + std::to_string(n_sub) +
                          " movers+stayers for " + std::to_string(p) + " GPS coefficients");

  std::vector<std::uint8_t> in_sub(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i)
    in_sub[static_cast<std::size_t>(i)] =
        frame.mover[static_cast<std::size_t>(i)] || frame.stayer[static_cast<std::size_t>(i)];

  const auto st = detail::Standardizer::fit(design, in_sub);
  const Eigen::MatrixXd z = st.apply(design);
  const bool logit = opt.link == GpsLink::Logit;

  auto prob = [&](double eta) { return logit ? detail::logit_p(eta) : detail::probit_p(eta); };
  auto mean_loglik = [&](const Eigen::VectorXd& coef) {
    double ll = 0;
    for (int i = 0; i < n; ++i) {
      if (!in_sub[static_cast<std::size_t>(i)]) continue;
      const double y = frame.mover[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double eta = z.row(i).dot(coef);
      if (logit) {
        ll += detail::logit_loglik_term(y, eta);
      } else {
        const double pr = std::min(std::max(detail::probit_p(eta), 1e-300), 1.0 - 1e-16);
        ll += y * std::log(pr) + (1.0 - y) * std::log1p(-pr);
      }
    }
    return ll / static_cast<double>(n_sub);
  };

  GpsFit fit;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  double ll = mean_loglik(coef);
  fit.loglik_path.push_back(ll);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      if (!in_sub[static_cast<std::size_t>(i)]) continue;
      const double y = frame.mover[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double eta = z.row(i).dot(coef);
      const double pr = prob(eta);
      if (logit) {
        score.noalias() += z.row(i).transpose() * (y - pr);
        info.noalias() += z.row(i).transpose() * z.row(i) * (pr * (1.0 - pr));
      } else {
        const double dens = detail::probit_density(eta);
        const double denom = std::max(pr * (1.0 - pr), 1e-300);
        score.noalias() += z.row(i).transpose() * (dens * (y - pr) / denom);
        info.noalias() += z.row(i).transpose() * z.row(i) * (dens * dens / denom);
      }
    }
    score /= static_cast<double>(n_sub);
    info /= static_cast<double>(n_sub);

    fit.iterations = iter;
    if (score.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      fit.converged = true;
      break;
    }

    const Eigen::VectorXd step = info.ldlt().solve(score);
    // Weak-improvement line search; the slack absorbs rounding noise once
    // the likelihood change falls below fp resolution near the optimum.
    const double slack = 1e-13 * (1.0 + std::abs(ll));
    double lambda = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = coef + lambda * step;
      const double cand_ll = mean_loglik(cand);
      if (cand_ll >= ll - slack) {
        coef = cand;
        ll = cand_ll;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    fit.loglik_path.push_back(ll);
    if (!improved) break;  // stalled; the convergence check below decides
    if (coef.norm() > opt.separation_bound)
      throw EstimationError(
          "cell " + frame.cell.label() + ": GPS coefficients diverged (" +
          std::string(to_string(opt.link)) +
          "), likely quasi-complete separation; consider reducing covariates");
  }
  if (!fit.converged) {
    // Final score check in case the loop exhausted max_iter right at the optimum.
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < n; ++i) {
      if (!in_sub[static_cast<std::size_t>(i)]) continue;
      const double y = frame.mover[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double eta = z.row(i).dot(coef);
      const double pr = prob(eta);
      if (logit) {
        score.noalias() += z.row(i).transpose() * (y - pr);
      } else {
        const double dens = detail::probit_density(eta);
        score.noalias() +=
            z.row(i).transpose() * (dens * (y - pr) / std::max(pr * (1.0 - pr), 1e-300));
      }
    }
    score /= static_cast<double>(n_sub);
    if (score.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      fit.converged = true;
    } else {
      throw EstimationError("cell " + frame.cell.label() + ": GPS fit did not converge in " +
                            std::to_string(opt.max_iter) + " iterations");
    }
  }

  fit.pi = st.unstandardize(coef);

  fit.p_hat.assign(static_cast<std::size_t>(n), 0.0);
  fit.r_hat.assign(static_cast<std::size_t>(n), 0.0);
  fit.p_dot = Eigen::MatrixXd::Zero(n, p);
  fit.r_dot = Eigen::MatrixXd::Zero(n, p);
  int n_outside = 0;
  for (int i = 0; i < n; ++i) {
    if (!in_sub[static_cast<std::size_t>(i)]) continue;
    const double eta = design.row(i).dot(fit.pi);
    const double pr = prob(eta);
    fit.p_hat[static_cast<std::size_t>(i)] = pr;
    fit.r_hat[static_cast<std::size_t>(i)] = pr / (1.0 - pr);
    const double dens = logit ? pr * (1.0 - pr) : detail::probit_density(eta);
    fit.p_dot.row(i) = design.row(i) * dens;
    fit.r_dot.row(i) = fit.p_dot.row(i) / ((1.0 - pr) * (1.0 - pr));
    if (pr < opt.overlap_eps || pr > 1.0 - opt.overlap_eps) ++n_outside;
  }
  if (n_outside > 0)
    fit.warnings.push_back("cell " + frame.cell.label() + ": " + std::to_string(n_outside) +
                           " fitted GPS values outside [" + std::to_string(opt.overlap_eps) +
                           ", 1 - eps]; overlap may be weak");

  // psi^pi_i = H^{-1} (M_i + S_i) score_i with H = E_N over all units.
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < n; ++i) {
    if (!in_sub[static_cast<std::size_t>(i)]) continue;
    const double pr = fit.p_hat[static_cast<std::size_t>(i)];
    if (logit) {
      h.noalias() += design.row(i).transpose() * design.row(i) * (pr * (1.0 - pr));
    } else {
      const double eta = design.row(i).dot(fit.pi);
      const double dens = detail::probit_density(eta);
      h.noalias() +=
          design.row(i).transpose() * design.row(i) * (dens * dens / std::max(pr * (1.0 - pr), 1e-300));
    }
  }
  h /= static_cast<double>(n);
  const auto h_solver = h.ldlt();
  fit.psi_pi = Eigen::MatrixXd::Zero(n, p);
  for (int i = 0; i < n; ++i) {
    if (!in_sub[static_cast<std::size_t>(i)]) continue;
    const double y = frame.mover[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    const double pr = fit.p_hat[static_cast<std::size_t>(i)];
    double u;
    if (logit) {
      u = y - pr;
    } else {
      const double eta = design.row(i).dot(fit.pi);
      u = detail::probit_density(eta) * (y - pr) / std::max(pr * (1.0 - pr), 1e-300);
    }
    fit.psi_pi.row(i) = h_solver.solve(design.row(i).transpose() * u).transpose();
  }
  return fit;
}

}  // namespace etdid
