#include "etdid/inference.hpp"

#include <cmath>
#include <set>

#include "gtest/gtest.h"
#include "test_support.hpp"

namespace {

using etdid::BootstrapConfig;
using etdid::BootstrapTarget;
using etdid::BootstrapWeightKind;
using etdid::RngStream;

std::vector<double> example_influence(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<double> psi(n);
  double mean = 0;
  for (auto& v : psi) {
    v = rng.normal();
    mean += v;
  }
  mean /= static_cast<double>(n);
  for (auto& v : psi) v -= mean;
  return psi;
}

TEST(Mammen, TwoPointSupportWithUnitVarianceZeroMean) {
  const double kappa = etdid::kMammenKappa;
  const double p_low = etdid::kMammenLowProb;
  // Analytic moments of the stated two-point law.
  const double mean = (1.0 - kappa) * p_low + kappa * (1.0 - p_low);
  const double var = (1.0 - kappa) * (1.0 - kappa) * p_low + kappa * kappa * (1.0 - p_low) -
                     mean * mean;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-12);

  RngStream rng(1, 0);
  const auto draws = etdid::mammen_draw(4000, rng);
  std::set<double> support(draws.begin(), draws.end());
  ASSERT_EQ(support.size(), 2u);
  EXPECT_NEAR(*support.begin(), 1.0 - kappa, 1e-15);   // -0.6180...
  EXPECT_NEAR(*support.rbegin(), kappa, 1e-15);        // +1.6180...
}

TEST(Mammen, MillionDrawMeanIsTight) {
  RngStream rng(42, 7);
  double acc = 0;
  const std::size_t n = 1000000;
  const auto draws = etdid::mammen_draw(n, rng);
  for (double v : draws) acc += v;
  const double mean = acc / static_cast<double>(n);
  EXPECT_GT(mean, -0.005);
  EXPECT_LT(mean, 0.005);
}

TEST(Rademacher, SignsOnly) {
  RngStream rng(3, 0);
  const auto draws = etdid::rademacher_draw(100000, rng);
  double acc = 0;
  for (double v : draws) {
    EXPECT_TRUE(v == 1.0 || v == -1.0);
    acc += v;
  }
  EXPECT_LT(std::abs(acc / 100000.0), 0.02);
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(etdid::quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(etdid::quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(etdid::quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(etdid::quantile(v, 0.25), 1.75);  // h = 0.75
}

TEST(Bootstrap, ReproducibleAcrossThreadCounts) {
  const auto psi1 = example_influence(300, 11);
  const auto psi2 = example_influence(300, 12);
  const std::vector<BootstrapTarget> targets{{"a", 0.5, psi1, false, true},
                                             {"b", -0.2, psi2, true, true}};
  BootstrapConfig cfg;
  cfg.seed = 77;
  cfg.n_reps = 399;
  cfg.threads = 1;
  const auto serial = etdid::multiplier_bootstrap(targets, cfg);
  cfg.threads = 4;
  const auto parallel = etdid::multiplier_bootstrap(targets, cfg);
  EXPECT_EQ(serial.critical_value, parallel.critical_value);
  for (std::size_t c = 0; c < targets.size(); ++c) {
    EXPECT_EQ(serial.se[c], parallel.se[c]);
    EXPECT_EQ(serial.bands[c], parallel.bands[c]);
    EXPECT_EQ(serial.draws_iqr[c], parallel.draws_iqr[c]);
  }
}

TEST(Bootstrap, SharedWeightsCoupleCells) {
  // The second target's influence is exactly twice the first. With one
  // shared V* draw per unit and replication, every bootstrap draw doubles
  // too, so (scaling by two being exact in binary) SEs double bit-for-bit
  // and the max-t statistics of the two cells coincide.
  const auto psi = example_influence(250, 21);
  std::vector<double> psi2(psi.size());
  for (std::size_t i = 0; i < psi.size(); ++i) psi2[i] = 2.0 * psi[i];
  const std::vector<BootstrapTarget> targets{{"x", 0.1, psi, false, true},
                                             {"2x", 0.2, psi2, false, true}};
  BootstrapConfig cfg;
  cfg.seed = 99;
  cfg.n_reps = 499;
  const auto res = etdid::multiplier_bootstrap(targets, cfg);
  EXPECT_EQ(res.se[1], 2.0 * res.se[0]);
  EXPECT_EQ(res.draws_iqr[1].first, 2.0 * res.draws_iqr[0].first);
  EXPECT_EQ(res.draws_iqr[1].second, 2.0 * res.draws_iqr[0].second);

  // And the critical value matches the single-cell run: the two cells carry
  // identical t statistics.
  const std::vector<BootstrapTarget> single{targets[0]};
  const auto res1 = etdid::multiplier_bootstrap(single, cfg);
  EXPECT_EQ(res.critical_value, res1.critical_value);
}

TEST(Bootstrap, ScaleEquivariance) {
  const auto psi = example_influence(200, 31);
  std::vector<double> scaled(psi.size());
  const double c = 2.0;  // power of two keeps the comparison exact
  for (std::size_t i = 0; i < psi.size(); ++i) scaled[i] = c * psi[i];
  BootstrapConfig cfg;
  cfg.seed = 5;
  cfg.n_reps = 299;
  const std::vector<BootstrapTarget> base{{"t", 0.4, psi, false, true}};
  const std::vector<BootstrapTarget> big{{"t", c * 0.4, scaled, false, true}};
  const auto res_base = etdid::multiplier_bootstrap(base, cfg);
  const auto res_big = etdid::multiplier_bootstrap(big, cfg);
  EXPECT_EQ(res_big.se[0], c * res_base.se[0]);
  EXPECT_EQ(res_big.critical_value, res_base.critical_value);
  EXPECT_EQ(res_big.bands[0].second - res_big.bands[0].first,
            c * (res_base.bands[0].second - res_base.bands[0].first));
}

TEST(Bootstrap, CriticalValueMonotoneInAlpha) {
  const auto psi1 = example_influence(150, 41);
  const auto psi2 = example_influence(150, 42);
  const std::vector<BootstrapTarget> targets{{"a", 0.0, psi1, false, true},
                                             {"b", 0.0, psi2, false, true}};
  BootstrapConfig cfg;
  cfg.seed = 13;
  cfg.n_reps = 999;
  double previous = std::numeric_limits<double>::infinity();
  double previous_width = std::numeric_limits<double>::infinity();
  for (const double alpha : {0.01, 0.05, 0.10, 0.20, 0.50}) {
    cfg.alpha = alpha;
    const auto res = etdid::multiplier_bootstrap(targets, cfg);
    EXPECT_LE(res.critical_value, previous);
    const double width = res.bands[0].second - res.bands[0].first;
    EXPECT_LE(width, previous_width);  // bands widen weakly as alpha decreases
    previous = res.critical_value;
    previous_width = width;
  }
}

TEST(Bootstrap, SingleCellMatchesManualReplication) {
  // Independent re-derivation of the algorithm for one cell: R*_b from the
  // same substreams, SE from the rescaled IQR, c from the |R|/SE quantile.
  const auto psi = example_influence(120, 51);
  BootstrapConfig cfg;
  cfg.seed = 1234;
  cfg.n_reps = 199;
  const std::vector<BootstrapTarget> targets{{"only", 1.5, psi, false, true}};
  const auto res = etdid::multiplier_bootstrap(targets, cfg);

  std::vector<double> r_star(static_cast<std::size_t>(cfg.n_reps));
  for (int b = 0; b < cfg.n_reps; ++b) {
    RngStream rng(cfg.seed, static_cast<std::uint64_t>(b));
    const auto v = etdid::mammen_draw(psi.size(), rng);
    double acc = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) acc += v[i] * psi[i];
    r_star[static_cast<std::size_t>(b)] = acc / static_cast<double>(psi.size());
  }
  const double q25 = etdid::quantile(r_star, 0.25);
  const double q75 = etdid::quantile(r_star, 0.75);
  const double se = (q75 - q25) / etdid::kNormalIqr;
  EXPECT_DOUBLE_EQ(res.se[0], se);
  std::vector<double> maxt;
  for (double r : r_star) maxt.push_back(std::abs(r) / se);
  EXPECT_DOUBLE_EQ(res.critical_value, etdid::quantile(maxt, 0.95));
  EXPECT_DOUBLE_EQ(res.bands[0].first, 1.5 - res.critical_value * se);
  EXPECT_DOUBLE_EQ(res.bands[0].second, 1.5 + res.critical_value * se);
}

TEST(Bootstrap, ErrorsOnDegenerateAndBadConfig) {
  const std::vector<double> zeros(50, 0.0);
  const auto psi = example_influence(50, 61);
  {
    const std::vector<BootstrapTarget> targets{{"flat (t=2, s=1, e=1)", 0.0, zeros, false, true}};
    BootstrapConfig cfg;
    try {
      etdid::multiplier_bootstrap(targets, cfg);
      FAIL() << "expected degenerate-influence error";
    } catch (const etdid::InferenceError& e) {
      EXPECT_NE(std::string(e.what()).find("flat (t=2, s=1, e=1)"), std::string::npos);
    }
  }
  const std::vector<BootstrapTarget> ok{{"ok", 0.0, psi, false, true}};
  {
    BootstrapConfig cfg;
    cfg.n_reps = 10;  // B * alpha = 0.5 < 1
    EXPECT_THROW(etdid::multiplier_bootstrap(ok, cfg), etdid::InferenceError);
  }
  {
    BootstrapConfig cfg;
    cfg.n_reps = 1;
    EXPECT_THROW(etdid::multiplier_bootstrap(ok, cfg), etdid::InferenceError);
  }
  {
    BootstrapConfig cfg;
    cfg.alpha = 0.0;
    EXPECT_THROW(etdid::multiplier_bootstrap(ok, cfg), etdid::InferenceError);
  }
}

TEST(Bootstrap, CoverageOfAKnownMean) {
  // psi_i = z_i - zbar with z standard normal: the band zbar +- c SE should
  // cover the true mean 0 at close to the nominal rate.
  const int mc_reps = 2000;
  const std::size_t n = 500;
  BootstrapConfig cfg;
  cfg.n_reps = 499;
  cfg.threads = 2;
  int covered = 0;
  for (int rep = 0; rep < mc_reps; ++rep) {
    RngStream rng(31415, static_cast<std::uint64_t>(rep) + 1000000);
    std::vector<double> z(n);
    double mean = 0;
    for (auto& v : z) {
      v = rng.normal();
      mean += v;
    }
    mean /= static_cast<double>(n);
    std::vector<double> psi(n);
    for (std::size_t i = 0; i < n; ++i) psi[i] = z[i] - mean;
    const std::vector<BootstrapTarget> targets{{"cell", mean, psi, false, true}};
    cfg.seed = etdid::derive_seed(2718, static_cast<std::uint64_t>(rep));
    const auto res = etdid::multiplier_bootstrap(targets, cfg);
    if (res.bands[0].first <= 0.0 && 0.0 <= res.bands[0].second) ++covered;
  }
  const double coverage = static_cast<double>(covered) / mc_reps;
  EXPECT_GE(coverage, 0.93);
  EXPECT_LE(coverage, 0.97);
}

TEST(Pretrends, VerdictRules) {
  const auto psi1 = example_influence(80, 71);
  const auto psi2 = example_influence(80, 72);
  BootstrapConfig cfg;
  cfg.seed = 8;
  cfg.n_reps = 199;
  {
    // Pre-trend point far from zero: its band excludes zero.
    const std::vector<BootstrapTarget> targets{{"post", 0.5, psi1, false, true},
                                               {"pre", 25.0, psi2, true, true}};
    const auto res = etdid::multiplier_bootstrap(targets, cfg);
    const auto verdict = etdid::pretrends_report(targets, res);
    EXPECT_FALSE(verdict.consistent);
    ASSERT_EQ(verdict.flagged.size(), 1u);
    EXPECT_EQ(verdict.flagged[0], "pre");
  }
  {
    const std::vector<BootstrapTarget> targets{{"post", 0.5, psi1, false, true},
                                               {"pre", 0.0, psi2, true, true}};
    const auto res = etdid::multiplier_bootstrap(targets, cfg);
    const auto verdict = etdid::pretrends_report(targets, res);
    EXPECT_TRUE(verdict.consistent);
    EXPECT_TRUE(verdict.flagged.empty());
    EXPECT_NE(verdict.note.find("necessary condition"), std::string::npos);
  }
  {
    const std::vector<BootstrapTarget> targets{{"post", 0.5, psi1, false, true}};
    const auto res = etdid::multiplier_bootstrap(targets, cfg);
    EXPECT_THROW(etdid::pretrends_report(targets, res), etdid::InferenceError);
  }
}

TEST(Bootstrap, PostOnlyMaxtStillBandsEverything) {
  const auto psi1 = example_influence(100, 81);
  std::vector<double> psi2 = example_influence(100, 82);
  for (auto& v : psi2) v *= 30.0;  // noisy pre cell would dominate the max-t
  const std::vector<BootstrapTarget> joint{{"post", 0.0, psi1, false, true},
                                           {"pre", 0.0, psi2, true, true}};
  const std::vector<BootstrapTarget> post_only{{"post", 0.0, psi1, false, true},
                                               {"pre", 0.0, psi2, true, false}};
  BootstrapConfig cfg;
  cfg.seed = 6;
  cfg.n_reps = 499;
  const auto res_joint = etdid::multiplier_bootstrap(joint, cfg);
  const auto res_post = etdid::multiplier_bootstrap(post_only, cfg);
  EXPECT_EQ(res_joint.se, res_post.se);  // SEs unaffected by the max-t set
  EXPECT_LE(res_post.critical_value, res_joint.critical_value);
  EXPECT_EQ(res_post.bands.size(), 2u);
}

}  // namespace
