// Command-line front end: estimate / pretrends / aggregate / simulate.
//
// Numeric results are written as CSV (spreadsheet-friendly) and JSON (the
// machine interface); both embed a run manifest describing the resolved
// configuration and an input fingerprint so outputs are self-describing
// and reproducible. All randomness is seeded and scheduled so the same
// seed produces byte-identical outputs regardless of --threads.
//
// Exit codes: 0 success, 2 input error, 3 estimation error, 4 inference error.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "etdid/etdid.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct SharedOptions {
  std::string input;
  std::string unit_column = "unit";
  std::string period_column = "period";
  std::string outcome_column = "outcome";
  std::vector<std::string> treatment_columns{"treatment"};
  std::vector<std::string> covariate_columns;
  std::string spec = "once";
  int delta = 0;
  std::string gps = "logit";
  double trim = 0.0;
  int max_iter = 100;
  double tol = 1e-10;
  int bootstrap = 999;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string weights = "mammen";
  int threads = 0;
  std::string out_dir = ".";
  bool plot = false;
  bool pretrends = false;
  bool post_only_bands = false;
  bool uniform_with_components = false;
};

void apply_env_overrides(SharedOptions& opt, bool seed_flag_given, bool threads_flag_given) {
  // Environment variables supply defaults; explicit flags win.
  if (!seed_flag_given) {
    if (const char* env = std::getenv("ETDID_SEED")) {
      opt.seed = std::strtoull(env, nullptr, 10);
    }
  }
  if (!threads_flag_given) {
    if (const char* env = std::getenv("ETDID_THREADS")) {
      opt.threads = static_cast<int>(std::strtol(env, nullptr, 10));
    }
  }
}

etdid::EffectiveTreatmentSpec make_spec(const SharedOptions& opt) {
  if (opt.delta < 0) throw etdid::ValidationError("--delta must be >= 0");
  if (opt.spec == "once") return etdid::EffectiveTreatmentSpec::once(opt.delta);
  if (opt.spec == "event") return etdid::EffectiveTreatmentSpec::event(opt.delta);
  if (opt.spec == "number") return etdid::EffectiveTreatmentSpec::number(opt.delta);
  throw etdid::ValidationError("unknown --spec '" + opt.spec + "' (use once|event|number)");
}

etdid::EstimationOptions make_estimation_options(const SharedOptions& opt) {
  etdid::EstimationOptions est;
  est.kind = etdid::EstimandKind::DR;
  est.trim = opt.trim;
  est.gps_options.max_iter = opt.max_iter;
  est.gps_options.grad_tol = opt.tol;
  if (opt.gps == "logit") {
    est.gps_options.link = etdid::GpsLink::Logit;
  } else if (opt.gps == "probit") {
    est.gps_options.link = etdid::GpsLink::Probit;
  } else {
    throw etdid::ValidationError("unknown --gps '" + opt.gps + "' (use logit|probit)");
  }
  return est;
}

etdid::BootstrapConfig make_bootstrap_config(const SharedOptions& opt) {
  etdid::BootstrapConfig boot;
  boot.n_reps = opt.bootstrap;
  boot.alpha = opt.alpha;
  boot.seed = opt.seed;
  boot.threads = opt.threads;
  if (opt.weights == "mammen") {
    boot.weight_kind = etdid::BootstrapWeightKind::Mammen;
  } else if (opt.weights == "rademacher") {
    boot.weight_kind = etdid::BootstrapWeightKind::Rademacher;
  } else {
    throw etdid::ValidationError("unknown --weights '" + opt.weights +
                                 "' (use mammen|rademacher)");
  }
  return boot;
}

json input_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw etdid::ValidationError("cannot open input '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return json{{"path", path}, {"bytes", bytes.size()}, {"fnv1a64", hex}};
}

// The manifest intentionally omits --threads: thread count never changes
// numeric results, and outputs must be byte-identical across thread counts.
json make_manifest(const std::string& subcommand, const SharedOptions& opt,
                   bool with_input = true) {
  json config{{"spec", opt.spec},
              {"delta", opt.delta},
              {"gps", opt.gps},
              {"trim", opt.trim},
              {"max_iter", opt.max_iter},
              {"tol", opt.tol},
              {"bootstrap", opt.bootstrap},
              {"alpha", opt.alpha},
              {"seed", opt.seed},
              {"weights", opt.weights},
              {"pretrends", opt.pretrends},
              {"post_only_bands", opt.post_only_bands}};
  json m{{"subcommand", subcommand}, {"version", etdid::kVersion}, {"config", config}};
  if (with_input) {
    m["input"] = input_fingerprint(opt.input);
    m["schema"] = json{{"unit", opt.unit_column},
                       {"period", opt.period_column},
                       {"outcome", opt.outcome_column},
                       {"treatments", opt.treatment_columns},
                       {"covariates", opt.covariate_columns}};
  }
  return m;
}

struct EstimateOutput {
  std::vector<etdid::AtemEstimate> estimates;   // banded, in output order
  std::vector<double> bootstrap_se;
  std::vector<std::pair<double, double>> bands;
  double critical_value = 0.0;
  std::vector<std::string> degenerate;          // cells refused by inference
  std::vector<std::string> warnings;
  std::optional<etdid::PretrendsVerdict> verdict;
};

json estimate_row_json(const etdid::AtemEstimate& est, double boot_se,
                       std::pair<double, double> band) {
  json row{{"t", est.cell.t},
           {"s", est.cell.s},
           {"e", est.cell.e},
           {"pretrend", est.is_pretrend},
           {"point", est.point},
           {"analytic_se", est.analytic_se},
           {"n_movers", est.n_movers},
           {"n_stayers", est.n_stayers}};
  row["r"] = est.cell.r ? json(*est.cell.r) : json(nullptr);
  if (std::isnan(boot_se)) {
    row["bootstrap_se"] = nullptr;
    row["lower"] = nullptr;
    row["upper"] = nullptr;
  } else {
    row["bootstrap_se"] = boot_se;
    row["lower"] = band.first;
    row["upper"] = band.second;
  }
  return row;
}

void write_estimates_csv(const std::string& path, const json& manifest,
                         const EstimateOutput& out) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw etdid::ValidationError("cannot write '" + path + "'");
  f << "# manifest: " << manifest.dump() << "\n";
  f << "t,s,e,r,pretrend,point,analytic_se,bootstrap_se,lower,upper,n_movers,n_stayers\n";
  for (std::size_t c = 0; c < out.estimates.size(); ++c) {
    const auto& est = out.estimates[c];
    f << est.cell.t << ',' << est.cell.s << ',' << est.cell.e << ','
      << (est.cell.r ? std::to_string(*est.cell.r) : "") << ','
      << (est.is_pretrend ? 1 : 0) << ',' << fmt_double(est.point) << ','
      << fmt_double(est.analytic_se) << ',' << fmt_double(out.bootstrap_se[c]) << ','
      << fmt_double(out.bands[c].first) << ',' << fmt_double(out.bands[c].second) << ','
      << est.n_movers << ',' << est.n_stayers << '\n';
  }
}

void write_estimates_json(const std::string& path, const json& manifest,
                          const EstimateOutput& out) {
  json doc;
  doc["manifest"] = manifest;
  doc["critical_value"] = out.critical_value;
  json rows = json::array();
  for (std::size_t c = 0; c < out.estimates.size(); ++c)
    rows.push_back(estimate_row_json(out.estimates[c], out.bootstrap_se[c], out.bands[c]));
  doc["estimates"] = rows;
  doc["degenerate_cells"] = out.degenerate;
  doc["warnings"] = out.warnings;
  if (out.verdict) {
    doc["pretrends"] = json{{"consistent", out.verdict->consistent},
                            {"flagged", out.verdict->flagged},
                            {"note", out.verdict->note}};
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw etdid::ValidationError("cannot write '" + path + "'");
  f << doc.dump(2) << "\n";
}

// Static point-and-band chart; squares mark pre-trend cells, circles the
// post cells. Pure presentation: the SVG never feeds back into numbers.
void write_plot_svg(const std::string& path, const json& manifest, const EstimateOutput& out) {
  const double width = 960, height = 420;
  const double ml = 64, mr = 20, mt = 20, mb = 88;
  const double plot_w = width - ml - mr;
  const double plot_h = height - mt - mb;
  const std::size_t n = out.estimates.size();

  double ymin = 0.0, ymax = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    ymin = std::min(ymin, out.bands[c].first);
    ymax = std::max(ymax, out.bands[c].second);
  }
  if (!(ymax > ymin)) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto ypix = [&](double y) { return mt + plot_h * (ymax - y) / (ymax - ymin); };
  auto xpix = [&](std::size_t c) {
    return ml + plot_w * (static_cast<double>(c) + 0.5) / static_cast<double>(n);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::ofstream f(path, std::ios::binary);
  if (!f) throw etdid::ValidationError("cannot write '" + path + "'");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
    << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  f << "<!-- manifest: " << manifest.dump() << " -->\n";
  f << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  // Axes and ticks.
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
    << mt + plot_h << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
    << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = ymin + (ymax - ymin) * k / 4.0;
    f << "<line x1=\"" << ml - 4 << "\" y1=\"" << num(ypix(y)) << "\" x2=\"" << ml
      << "\" y2=\"" << num(ypix(y)) << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << ml - 8 << "\" y=\"" << num(ypix(y) + 4)
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << num(y)
      << "</text>\n";
  }
  // Zero line.
  if (ymin < 0.0 && ymax > 0.0)
    f << "<line x1=\"" << ml << "\" y1=\"" << num(ypix(0.0)) << "\" x2=\"" << ml + plot_w
      << "\" y2=\"" << num(ypix(0.0)) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t c = 0; c < n; ++c) {
    const auto& est = out.estimates[c];
    const double x = xpix(c);
    const double ylo = ypix(out.bands[c].first);
    const double yhi = ypix(out.bands[c].second);
    const double yp = ypix(est.point);
    f << "<line x1=\"" << num(x) << "\" y1=\"" << num(ylo) << "\" x2=\"" << num(x)
      << "\" y2=\"" << num(yhi) << "\" stroke=\"black\"/>\n";
    if (est.is_pretrend) {
      f << "<rect x=\"" << num(x - 3.5) << "\" y=\"" << num(yp - 3.5)
        << "\" width=\"7\" height=\"7\" fill=\"white\" stroke=\"black\"/>\n";
    } else {
      f << "<circle cx=\"" << num(x) << "\" cy=\"" << num(yp)
        << "\" r=\"4\" fill=\"black\"/>\n";
    }
    std::string label = "t=" + std::to_string(est.cell.t) + ",s=" + std::to_string(est.cell.s) +
                        ",e=" + std::to_string(est.cell.e);
    if (est.cell.r) label += ",r=" + std::to_string(*est.cell.r);
    f << "<text x=\"" << num(x) << "\" y=\"" << num(mt + plot_h + 12)
      << "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\" transform=\"rotate(-45 "
      << num(x) << " " << num(mt + plot_h + 12) << ")\">" << label << "</text>\n";
  }
  f << "</svg>\n";
}

EstimateOutput run_estimation(const etdid::PanelDataset& panel, const SharedOptions& opt) {
  const auto spec = make_spec(opt);
  const auto eff = etdid::compute_effective_treatment(panel, spec);
  auto design = etdid::default_design(eff, spec, opt.pretrends);
  if (design.cells.empty())
    throw etdid::EstimationError("no estimable cells for spec '" + opt.spec + "'");

  EstimateOutput out;
  out.warnings = eff.warnings;
  out.warnings.insert(out.warnings.end(), design.warnings.begin(), design.warnings.end());

  const auto est_opt = make_estimation_options(opt);
  auto result = etdid::estimate_cells(panel, eff, design.cells, est_opt);
  out.warnings.insert(out.warnings.end(), result.warnings.begin(), result.warnings.end());

  // Degenerate-influence cells are reported but never handed to the bootstrap.
  std::vector<etdid::BootstrapTarget> targets;
  std::vector<std::size_t> target_index;
  for (std::size_t c = 0; c < result.estimates.size(); ++c) {
    const auto& est = result.estimates[c];
    if (est.degenerate) {
      out.degenerate.push_back(est.cell.label());
      continue;
    }
    const bool in_maxt = !(opt.post_only_bands && est.is_pretrend);
    targets.push_back({est.cell.label(), est.point, est.influence, est.is_pretrend, in_maxt});
    target_index.push_back(c);
  }
  if (targets.empty())
    throw etdid::InferenceError("bootstrap: all cells have degenerate influence");

  const auto boot = make_bootstrap_config(opt);
  auto res = etdid::multiplier_bootstrap(targets, boot);
  res.degenerate_cells = out.degenerate;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.bootstrap_se.assign(result.estimates.size(), nan);
  out.bands.assign(result.estimates.size(), {nan, nan});
  for (std::size_t k = 0; k < targets.size(); ++k) {
    out.bootstrap_se[target_index[k]] = res.se[k];
    out.bands[target_index[k]] = res.bands[k];
  }
  out.critical_value = res.critical_value;
  if (opt.pretrends) out.verdict = etdid::pretrends_report(targets, res);
  out.estimates = std::move(result.estimates);
  return out;
}

int cmd_estimate(const SharedOptions& opt, const std::string& subcommand) {
  const json manifest = make_manifest(subcommand, opt);
  etdid::PanelSchema schema{opt.unit_column, opt.period_column, opt.outcome_column,
                            opt.treatment_columns, opt.covariate_columns};
  const auto panel = etdid::load_panel_csv(opt.input, schema);
  const auto out = run_estimation(panel, opt);

  std::filesystem::create_directories(opt.out_dir);
  const std::string stem = subcommand == "pretrends" ? "pretrends" : "estimates";
  write_estimates_csv(opt.out_dir + "/" + stem + ".csv", manifest, out);
  write_estimates_json(opt.out_dir + "/" + stem + ".json", manifest, out);
  if (opt.plot) write_plot_svg(opt.out_dir + "/plot.svg", manifest, out);

  for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << out.estimates.size() << " cells to " << opt.out_dir << "/" << stem
            << ".{csv,json} (critical value " << fmt_double(out.critical_value) << ")\n";
  if (out.verdict) {
    if (out.verdict->consistent) {
      std::cout << "pretrends: consistent with parallel trends (" << out.verdict->note << ")\n";
    } else {
      std::cout << "pretrends: INCONSISTENT, bands exclude zero for";
      for (const auto& label : out.verdict->flagged) std::cout << " " << label;
      std::cout << "\n";
    }
  }
  return 0;
}

int cmd_aggregate(const SharedOptions& opt) {
  SharedOptions once_opt = opt;
  once_opt.spec = "once";
  once_opt.pretrends = false;
  const json manifest = make_manifest("aggregate", once_opt);

  etdid::PanelSchema schema{opt.unit_column, opt.period_column, opt.outcome_column,
                            opt.treatment_columns, opt.covariate_columns};
  const auto panel = etdid::load_panel_csv(opt.input, schema);
  const auto spec = etdid::EffectiveTreatmentSpec::once(opt.delta);
  const auto eff = etdid::compute_effective_treatment(panel, spec);
  auto design = etdid::default_design(eff, spec, false);
  const int T = panel.n_periods();
  if (static_cast<int>(design.cells.size()) != T - 1)
    throw etdid::EstimationError(
        "aggregate: the once design is not fully estimable on this panel (" +
        std::to_string(design.cells.size()) + " of " + std::to_string(T - 1) + " cells)");

  const auto est_opt = make_estimation_options(once_opt);
  auto result = etdid::estimate_cells(panel, eff, design.cells, est_opt);
  const auto agg = etdid::aggregate_time_average(result.estimates, T);

  std::vector<etdid::BootstrapTarget> targets;
  for (const auto& est : result.estimates)
    targets.push_back({est.cell.label(), est.point, est.influence, false, true});
  targets.push_back({"aggregate", agg.point, agg.influence, false, opt.uniform_with_components});
  const auto boot = make_bootstrap_config(once_opt);

  etdid::BootstrapResult res;
  if (opt.uniform_with_components) {
    res = etdid::multiplier_bootstrap(targets, boot);
  } else {
    // Component bands come from their own joint max-t; the aggregate gets a
    // pointwise band from the same weight streams.
    std::vector<etdid::BootstrapTarget> component_targets(targets.begin(), targets.end() - 1);
    res = etdid::multiplier_bootstrap(component_targets, boot);
    std::vector<etdid::BootstrapTarget> agg_only{targets.back()};
    agg_only[0].in_maxt = true;
    const auto agg_res = etdid::multiplier_bootstrap(agg_only, boot);
    res.se.push_back(agg_res.se[0]);
    res.bands.push_back(agg_res.bands[0]);
    res.draws_iqr.push_back(agg_res.draws_iqr[0]);
  }

  std::filesystem::create_directories(opt.out_dir);
  const std::string csv_path = opt.out_dir + "/aggregate.csv";
  {
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw etdid::ValidationError("cannot write '" + csv_path + "'");
    f << "# manifest: " << manifest.dump() << "\n";
    f << "kind,t,s,e,point,analytic_se,bootstrap_se,lower,upper,weight,n_movers,n_stayers\n";
    for (std::size_t c = 0; c < result.estimates.size(); ++c) {
      const auto& est = result.estimates[c];
      f << "component," << est.cell.t << ',' << est.cell.s << ',' << est.cell.e << ','
        << fmt_double(est.point) << ',' << fmt_double(est.analytic_se) << ','
        << fmt_double(res.se[c]) << ',' << fmt_double(res.bands[c].first) << ','
        << fmt_double(res.bands[c].second) << ','
        << fmt_double(agg.components[c].weight) << ',' << est.n_movers << ','
        << est.n_stayers << '\n';
    }
    const std::size_t last = res.se.size() - 1;
    f << "aggregate,,,," << fmt_double(agg.point) << ',' << fmt_double(agg.analytic_se) << ','
      << fmt_double(res.se[last]) << ',' << fmt_double(res.bands[last].first) << ','
      << fmt_double(res.bands[last].second) << ",1,,\n";
  }
  {
    json doc;
    doc["manifest"] = manifest;
    doc["kind"] = to_string(agg.kind);
    doc["point"] = agg.point;
    doc["analytic_se"] = agg.analytic_se;
    const std::size_t last = res.se.size() - 1;
    doc["bootstrap_se"] = res.se[last];
    doc["lower"] = res.bands[last].first;
    doc["upper"] = res.bands[last].second;
    doc["weights_treated_as_fixed"] = agg.weights_treated_as_fixed;
    json rows = json::array();
    for (std::size_t c = 0; c < result.estimates.size(); ++c) {
      json row = estimate_row_json(result.estimates[c], res.se[c], res.bands[c]);
      row["weight"] = agg.components[c].weight;
      rows.push_back(row);
    }
    doc["components"] = rows;
    doc["warnings"] = result.warnings;
    std::ofstream f(opt.out_dir + "/aggregate.json", std::ios::binary);
    f << doc.dump(2) << "\n";
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  const std::size_t last = res.se.size() - 1;
  std::cout << "aggregate point " << fmt_double(agg.point) << ", " << (1.0 - opt.alpha) * 100
            << "% CI [" << fmt_double(res.bands[last].first) << ", "
            << fmt_double(res.bands[last].second) << "]\n";
  return 0;
}

struct SimulateOptions {
  int n = 1000;
  int t = 4;
  int reps = 1000;
  double trend_violation = 0.0;
  std::string out = "simulation.csv";
};

int cmd_simulate(const SharedOptions& opt, const SimulateOptions& sim) {
  etdid::SimConfig cfg;
  cfg.n_units = sim.n;
  cfg.n_periods = sim.t;
  cfg.reps = sim.reps;
  cfg.seed = opt.seed;
  cfg.trend_violation = sim.trend_violation;

  etdid::MonteCarloOptions mc;
  mc.spec = make_spec(opt).kind;
  mc.include_pretrends = opt.pretrends;
  mc.threads = opt.threads;
  if (opt.gps == "probit") mc.gps_link = etdid::GpsLink::Probit;

  etdid::BootstrapConfig boot = make_bootstrap_config(opt);
  boot.seed = 0;  // per-replication bootstrap seeds derive from cfg.seed

  const auto table = etdid::run_monte_carlo(cfg, boot, mc);

  json manifest{{"subcommand", "simulate"},
                {"version", etdid::kVersion},
                {"config", json{{"n", sim.n},
                                {"t", sim.t},
                                {"reps", sim.reps},
                                {"spec", opt.spec},
                                {"seed", opt.seed},
                                {"bootstrap", opt.bootstrap},
                                {"alpha", opt.alpha},
                                {"weights", opt.weights},
                                {"pretrends", opt.pretrends},
                                {"trend_violation", sim.trend_violation}}},
                {"flagged_reps", table.flagged_reps},
                {"completed_reps", table.completed_reps}};

  std::ofstream f(sim.out, std::ios::binary);
  if (!f) throw etdid::ValidationError("cannot write '" + sim.out + "'");
  f << "# manifest: " << manifest.dump() << "\n";
  f << "n,t_periods,t,s,e,r,pretrend,bias,rmse,pw_cp,u_cp,ci_length\n";
  for (const auto& row : table.rows) {
    f << row.n << ',' << row.n_periods << ',' << row.cell.t << ',' << row.cell.s << ','
      << row.cell.e << ',' << (row.cell.r ? std::to_string(*row.cell.r) : "") << ','
      << (row.cell.is_pretrend() ? 1 : 0) << ',' << fmt_double(row.bias) << ','
      << fmt_double(row.rmse) << ',' << fmt_double(row.pw_cp) << ',' << fmt_double(row.u_cp)
      << ',' << fmt_double(row.ci_length) << '\n';
  }
  std::cout << "wrote " << table.rows.size() << " rows to " << sim.out << " ("
            << table.completed_reps << " replications, " << table.flagged_reps
            << " flagged)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust difference-in-differences with effective-treatment summaries"};
  app.require_subcommand(1);

  SharedOptions opt;
  SimulateOptions sim;

  auto add_shared = [&](CLI::App* cmd, bool needs_input) {
    if (needs_input) {
      cmd->add_option("--input", opt.input, "long-format CSV panel")->required();
      cmd->add_option("--unit", opt.unit_column, "unit id column");
      cmd->add_option("--period", opt.period_column, "period column");
      cmd->add_option("--outcome", opt.outcome_column, "outcome column");
      cmd->add_option("--treatment", opt.treatment_columns, "treatment column(s)");
      cmd->add_option("--covariates", opt.covariate_columns, "covariate column(s)");
      cmd->add_option("--gps", opt.gps, "GPS link: logit|probit");
      cmd->add_option("--trim", opt.trim, "drop units with fitted GPS outside [eps, 1-eps]");
      cmd->add_option("--max-iter", opt.max_iter, "GPS solver iteration cap");
      cmd->add_option("--tol", opt.tol, "GPS solver gradient tolerance");
    }
    cmd->add_option("--spec", opt.spec, "effective treatment: once|event|number");
    cmd->add_option("--delta", opt.delta, "anticipation window shift");
    cmd->add_option("--bootstrap", opt.bootstrap, "bootstrap replications B");
    cmd->add_option("--alpha", opt.alpha, "band level alpha");
    cmd->add_option("--seed", opt.seed, "RNG seed (env ETDID_SEED)");
    cmd->add_option("--weights", opt.weights, "multiplier weights: mammen|rademacher");
    cmd->add_option("--threads", opt.threads, "worker threads, 0 = auto (env ETDID_THREADS)");
  };

  CLI::App* estimate = app.add_subcommand("estimate", "estimate every default-design cell");
  add_shared(estimate, true);
  estimate->add_option("--out-dir", opt.out_dir, "output directory");
  estimate->add_flag("--plot", opt.plot, "also write plot.svg");
  estimate->add_flag("--pretrends", opt.pretrends, "include pre-trend cells");
  estimate->add_flag("--post-only-bands", opt.post_only_bands,
                     "critical value over post cells only");

  CLI::App* pretrends = app.add_subcommand("pretrends", "estimate with pre-trend cells and report the verdict");
  add_shared(pretrends, true);
  pretrends->add_option("--out-dir", opt.out_dir, "output directory");
  pretrends->add_flag("--plot", opt.plot, "also write plot.svg");
  pretrends->add_flag("--post-only-bands", opt.post_only_bands,
                      "critical value over post cells only");

  CLI::App* aggregate = app.add_subcommand("aggregate", "time-series average of the once-specification cells");
  add_shared(aggregate, true);
  aggregate->add_option("--out-dir", opt.out_dir, "output directory");
  aggregate->add_flag("--uniform-with-components", opt.uniform_with_components,
                      "include the aggregate in the joint max-t set");

  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo evaluation of the estimator");
  add_shared(simulate, false);
  simulate->add_option("--n", sim.n, "units per replication");
  simulate->add_option("--t", sim.t, "periods per replication");
  simulate->add_option("--reps", sim.reps, "replications");
  simulate->add_option("--trend-violation", sim.trend_violation,
                       "parallel-trends violation drift coefficient");
  simulate->add_option("--out", sim.out, "output CSV path");
  simulate->add_flag("--pretrends", opt.pretrends, "include pre-trend cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (CLI::App* cmd : {estimate, pretrends, aggregate, simulate}) {
      if (cmd->parsed()) {
        apply_env_overrides(opt, cmd->count("--seed") > 0, cmd->count("--threads") > 0);
      }
    }
    if (estimate->parsed()) return cmd_estimate(opt, "estimate");
    if (pretrends->parsed()) {
      opt.pretrends = true;
      return cmd_estimate(opt, "pretrends");
    }
    if (aggregate->parsed()) return cmd_aggregate(opt);
    if (simulate->parsed()) return cmd_simulate(opt, sim);
  } catch (const etdid::ValidationError& e) {
    std::cerr << "error code=input_error msg=\"" << e.what() << "\"\n";
    return 2;
  } catch (const etdid::EstimationError& e) {
    std::cerr << "error code=estimation_error msg=\"" << e.what() << "\"\n";
    return 3;
  } catch (const etdid::InferenceError& e) {
    std::cerr << "error code=inference_error msg=\"" << e.what() << "\"\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal_error msg=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
