// Balanced panel data: ingestion, validation, and outcome differencing.
//
// The panel is the only owner of observed data. Outcomes Y[i][t], possibly
// vector-valued treatments D[i][t], and time-invariant covariates X[i] are
// stored dense and immutable; periods are remapped to 1..T at load time.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "etdid/errors.hpp"

namespace etdid {

struct PanelSchema {
  std::string unit_column;
  std::string period_column;
  std::string outcome_column;
  std::vector<std::string> treatment_columns;  // at least one
  std::vector<std::string> covariate_columns;  // possibly empty

  void validate() const {
    if (treatment_columns.empty())
      throw ValidationError("schema: at least one treatment column required");
    std::vector<std::string> all{unit_column, period_column, outcome_column};
    all.insert(all.end(), treatment_columns.begin(), treatment_columns.end());
    all.insert(all.end(), covariate_columns.begin(), covariate_columns.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw ValidationError("schema: column names must be distinct");
  }
};

class PanelDataset {
 public:
  // Column-wise builder used by the CSV loader, the simulation engine, and
  // tests. Arguments are long-format parallel arrays of length n_rows.
  static PanelDataset from_long(
      const std::vector<std::string>& unit_labels,
      const std::vector<std::string>& period_labels,
      const std::vector<double>& outcomes,
      const std::vector<std::vector<double>>& treatments,  // n_rows x dim(D)
      const std::vector<std::vector<double>>& covariates)  // n_rows x dim(X)
  {
    const std::size_t n_rows = unit_labels.size();
    if (period_labels.size() != n_rows || outcomes.size() != n_rows ||
        treatments.size() != n_rows || covariates.size() != n_rows)
      throw ValidationError("panel: ragged input arrays");
    if (n_rows == 0) throw ValidationError("panel: no observations");

    PanelDataset p;
    p.dim_d_ = static_cast<int>(treatments.front().size());
    p.dim_x_ = static_cast<int>(covariates.front().size());
    if (p.dim_d_ < 1) throw ValidationError("panel: dim(D) must be >= 1");

    // Period labels sort numerically when every label parses as a number,
    // lexicographically otherwise; internal indices are then 1..T.
    std::vector<std::string> plabels;
    for (const auto& s : period_labels)
      if (std::find(plabels.begin(), plabels.end(), s) == plabels.end())
        plabels.push_back(s);
    sort_period_labels(plabels);
    p.period_labels_ = plabels;
    std::unordered_map<std::string, int> period_of;
    for (std::size_t k = 0; k < plabels.size(); ++k)
      period_of[plabels[k]] = static_cast<int>(k) + 1;
    p.n_periods_ = static_cast<int>(plabels.size());
    if (p.n_periods_ < 2)
      throw ValidationError("panel: at least two periods required");

    std::unordered_map<std::string, int> unit_of;
    for (const auto& u : unit_labels)
      if (unit_of.emplace(u, static_cast<int>(unit_of.size())).second)
        p.unit_ids_.push_back(u);
    p.n_units_ = static_cast<int>(p.unit_ids_.size());

    const std::size_t nt =
        static_cast<std::size_t>(p.n_units_) * static_cast<std::size_t>(p.n_periods_);
    p.outcomes_.assign(nt, 0.0);
    p.treatments_.assign(nt * static_cast<std::size_t>(p.dim_d_), 0.0);
    p.covariates_.assign(
        static_cast<std::size_t>(p.n_units_) * static_cast<std::size_t>(p.dim_x_), 0.0);
    std::vector<char> seen(nt, 0);
    std::vector<char> cov_set(static_cast<std::size_t>(p.n_units_), 0);

    for (std::size_t row = 0; row < n_rows; ++row) {
      if (static_cast<int>(treatments[row].size()) != p.dim_d_ ||
          static_cast<int>(covariates[row].size()) != p.dim_x_)
        throw ValidationError("panel: ragged treatment/covariate row " +
                              std::to_string(row + 1));
      const int i = unit_of.at(unit_labels[row]);
      const int t = period_of.at(period_labels[row]);
      const std::size_t cell = p.flat(i, t);
      if (seen[cell])
        throw ValidationError("panel: duplicate observation for unit '" +
                              unit_labels[row] + "', period '" +
                              period_labels[row] + "'");
      seen[cell] = 1;
      p.outcomes_[cell] = outcomes[row];
      for (int k = 0; k < p.dim_d_; ++k)
        p.treatments_[cell * static_cast<std::size_t>(p.dim_d_) + k] =
            treatments[row][static_cast<std::size_t>(k)];
      if (!cov_set[static_cast<std::size_t>(i)]) {
        for (int k = 0; k < p.dim_x_; ++k)
          p.covariates_[static_cast<std::size_t>(i) * p.dim_x_ + k] =
              covariates[row][static_cast<std::size_t>(k)];
        cov_set[static_cast<std::size_t>(i)] = 1;
      } else {
        for (int k = 0; k < p.dim_x_; ++k)
          if (p.covariates_[static_cast<std::size_t>(i) * p.dim_x_ + k] !=
              covariates[row][static_cast<std::size_t>(k)])
            throw ValidationError(
                "panel: covariate '" + std::to_string(k + 1) + "' varies over time for unit '" +
                p.unit_ids_[static_cast<std::size_t>(i)] + "'");
      }
    }
    for (int i = 0; i < p.n_units_; ++i)
      for (int t = 1; t <= p.n_periods_; ++t)
        if (!seen[p.flat(i, t)])
          throw ValidationError("panel: unbalanced panel, unit '" +
                                p.unit_ids_[static_cast<std::size_t>(i)] +
                                "' missing period '" +
                                p.period_labels_[static_cast<std::size_t>(t - 1)] + "'");
    return p;
  }

  int n_units() const { return n_units_; }
  int n_periods() const { return n_periods_; }
  int dim_treatment() const { return dim_d_; }
  int dim_covariates() const { return dim_x_; }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& period_labels() const { return period_labels_; }

  // t is 1-based throughout the library.
  double outcome(int i, int t) const { return outcomes_[flat(i, t)]; }

  std::span<const double> treatment(int i, int t) const {
    return {treatments_.data() + flat(i, t) * static_cast<std::size_t>(dim_d_),
            static_cast<std::size_t>(dim_d_)};
  }

  // Treatment "zero" means every component exactly 0.0 (codes, not measurements).
  bool treated_at(int i, int t) const {
    const auto d = treatment(i, t);
    for (double v : d)
      if (v != 0.0) return true;
    return false;
  }

  std::span<const double> covariates(int i) const {
    return {covariates_.data() + static_cast<std::size_t>(i) * dim_x_,
            static_cast<std::size_t>(dim_x_)};
  }

 private:
  std::size_t flat(int i, int t) const {
    return static_cast<std::size_t>(i) * n_periods_ + static_cast<std::size_t>(t - 1);
  }

  static void sort_period_labels(std::vector<std::string>& labels) {
    bool all_numeric = true;
    std::vector<double> nums(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const auto& s = labels[k];
      const char* begin = s.data();
      const char* end = s.data() + s.size();
      double v = 0.0;
      auto res = std::from_chars(begin, end, v);
      if (res.ec != std::errc() || res.ptr != end) {
        all_numeric = false;
        break;
      }
      nums[k] = v;
    }
    if (all_numeric) {
      std::vector<std::size_t> order(labels.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return nums[a] < nums[b]; });
      std::vector<std::string> sorted;
      sorted.reserve(labels.size());
      for (std::size_t k : order) sorted.push_back(labels[k]);
      labels = std::move(sorted);
    } else {
      std::sort(labels.begin(), labels.end());
    }
  }

  int n_units_ = 0;
  int n_periods_ = 0;
  int dim_d_ = 0;
  int dim_x_ = 0;
  std::vector<double> outcomes_;    // i*T + (t-1)
  std::vector<double> treatments_;  // (i*T + (t-1))*dim_d + k
  std::vector<double> covariates_;  // i*dim_x + k
  std::vector<std::string> unit_ids_;
  std::vector<std::string> period_labels_;
};

namespace detail {

// Splits one CSV record. Supports plain fields and double-quoted fields
// with "" escapes; no multi-line fields.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (quoted)
    throw ValidationError("csv: unterminated quote on line " + std::to_string(line_no));
  out.push_back(field);
  return out;
}

inline double parse_number(const std::string& s, const std::string& column,
                           std::size_t line_no) {
  if (s.empty())
    throw ValidationError("csv: empty cell in column '" + column + "' on line " +
                          std::to_string(line_no));
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ValidationError("csv: non-numeric value '" + s + "' in column '" + column +
                          "' on line " + std::to_string(line_no));
  return v;
}

}  // namespace detail

inline PanelDataset load_panel_csv(const std::string& path, const PanelSchema& schema) {
  schema.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("csv: cannot open '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw ValidationError("csv: empty file '" + path + "'");
  ++line_no;
  const auto header = detail::split_csv_line(line, line_no);
  std::unordered_map<std::string, int> col_of;
  for (std::size_t k = 0; k < header.size(); ++k) col_of.emplace(header[k], static_cast<int>(k));

  auto require = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end())
      throw ValidationError("csv: missing column '" + name + "' in '" + path + "'");
    return it->second;
  };
  const int unit_col = require(schema.unit_column);
  const int period_col = require(schema.period_column);
  const int outcome_col = require(schema.outcome_column);
  std::vector<int> treat_cols, cov_cols;
  for (const auto& c : schema.treatment_columns) treat_cols.push_back(require(c));
  for (const auto& c : schema.covariate_columns) cov_cols.push_back(require(c));

  std::vector<std::string> units, periods;
  std::vector<double> outcomes;
  std::vector<std::vector<double>> treatments, covariates;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != header.size())
      throw ValidationError("csv: line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
    if (fields[static_cast<std::size_t>(unit_col)].empty())
      throw ValidationError("csv: empty cell in column '" + schema.unit_column +
                            "' on line " + std::to_string(line_no));
    if (fields[static_cast<std::size_t>(period_col)].empty())
      throw ValidationError("csv: empty cell in column '" + schema.period_column +
                            "' on line " + std::to_string(line_no));
    units.push_back(fields[static_cast<std::size_t>(unit_col)]);
    periods.push_back(fields[static_cast<std::size_t>(period_col)]);
    outcomes.push_back(detail::parse_number(fields[static_cast<std::size_t>(outcome_col)],
                                            schema.outcome_column, line_no));
    std::vector<double> d;
    for (std::size_t k = 0; k < treat_cols.size(); ++k)
      d.push_back(detail::parse_number(fields[static_cast<std::size_t>(treat_cols[k])],
                                       schema.treatment_columns[k], line_no));
    treatments.push_back(std::move(d));
    std::vector<double> x;
    for (std::size_t k = 0; k < cov_cols.size(); ++k)
      x.push_back(detail::parse_number(fields[static_cast<std::size_t>(cov_cols[k])],
                                       schema.covariate_columns[k], line_no));
    covariates.push_back(std::move(x));
  }
  return PanelDataset::from_long(units, periods, outcomes, treatments, covariates);
}

// Writes the panel back out in long format; load_panel_csv on the result
// reproduces the numeric content exactly.
inline void save_panel_csv(const PanelDataset& panel, const std::string& path,
                           const PanelSchema& schema) {
  schema.validate();
  if (static_cast<int>(schema.treatment_columns.size()) != panel.dim_treatment() ||
      static_cast<int>(schema.covariate_columns.size()) != panel.dim_covariates())
    throw ValidationError("csv: schema does not match panel dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("csv: cannot write '" + path + "'");

  auto fmt = [](double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };

  out << schema.unit_column << ',' << schema.period_column << ',' << schema.outcome_column;
  for (const auto& c : schema.treatment_columns) out << ',' << c;
  for (const auto& c : schema.covariate_columns) out << ',' << c;
  out << '\n';
  for (int i = 0; i < panel.n_units(); ++i) {
    for (int t = 1; t <= panel.n_periods(); ++t) {
      out << panel.unit_ids()[static_cast<std::size_t>(i)] << ','
          << panel.period_labels()[static_cast<std::size_t>(t - 1)] << ','
          << fmt(panel.outcome(i, t));
      for (double v : panel.treatment(i, t)) out << ',' << fmt(v);
      for (double v : panel.covariates(i)) out << ',' << fmt(v);
      out << '\n';
    }
  }
}

// Delta Y[i] = Y[i][t] - Y[i][s], 1 <= s < t <= T.
inline std::vector<double> outcome_difference(const PanelDataset& panel, int t, int s) {
  if (s < 1 || t > panel.n_periods() || t <= s)
    throw ValidationError("outcome_difference: need 1 <= s < t <= T, got (t=" +
                          std::to_string(t) + ", s=" + std::to_string(s) + ")");
  std::vector<double> dy(static_cast<std::size_t>(panel.n_units()));
  for (int i = 0; i < panel.n_units(); ++i)
    dy[static_cast<std::size_t>(i)] = panel.outcome(i, t) - panel.outcome(i, s);
  return dy;
}

}  // namespace etdid
