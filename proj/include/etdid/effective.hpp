// Effective treatment mappings and per-cell mover/stayer construction.
//
// A specification maps each unit's treatment path to integer-coded
// effective intensities E[i][t] (0 = comparison unit). Built-ins:
//   once   E_it = 1{ D_{i,1..t+delta} != 0 }
//   event  E_it = min{ s <= t+delta : D_is != 0 }, 0 if never treated so far
//   number E_it = #{ s <= t+delta : D_is != 0 }
// Custom mappings plug in through a callback and must emit nonnegative
// integer codes; the monotonicity requirement (E_it = 0 implies
// E_{i,t-1} = 0) is checked empirically for them.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "etdid/errors.hpp"
#include "etdid/panel.hpp"

namespace etdid {

enum class EffectiveKind { Once, Event, Number, Custom };

inline const char* to_string(EffectiveKind k) {
  switch (k) {
    case EffectiveKind::Once: return "once";
    case EffectiveKind::Event: return "event";
    case EffectiveKind::Number: return "number";
    case EffectiveKind::Custom: return "custom";
  }
  return "?";
}

// View over one unit's treatment path; periods are 1-based.
struct TreatmentPath {
  const PanelDataset* panel;
  int unit;
  int n_periods() const { return panel->n_periods(); }
  bool nonzero_at(int t) const { return panel->treated_at(unit, t); }
};

// Maps (path, t, delta) -> integer effective-treatment code. Implementers
// are responsible for keeping the range finite and for the monotonicity
// requirement above; violations are reported as runtime warnings.
using CustomEffectiveFn = std::function<int(const TreatmentPath&, int t, int delta)>;

struct EffectiveTreatmentSpec {
  EffectiveKind kind = EffectiveKind::Once;
  int anticipation = 0;  // delta >= 0; shifts the inspected window to t + delta
  CustomEffectiveFn custom;
  std::string custom_name;

  static EffectiveTreatmentSpec once(int delta = 0) { return {EffectiveKind::Once, delta, {}, {}}; }
  static EffectiveTreatmentSpec event(int delta = 0) { return {EffectiveKind::Event, delta, {}, {}}; }
  static EffectiveTreatmentSpec number(int delta = 0) { return {EffectiveKind::Number, delta, {}, {}}; }
  static EffectiveTreatmentSpec custom_spec(CustomEffectiveFn fn, std::string name,
                                            int delta = 0) {
    EffectiveTreatmentSpec s;
    s.kind = EffectiveKind::Custom;
    s.anticipation = delta;
    s.custom = std::move(fn);
    s.custom_name = std::move(name);
    return s;
  }
};

struct EffectivePanel {
  int n_units = 0;
  int n_periods = 0;
  std::vector<int> values;                // i*T + (t-1)
  std::vector<std::vector<int>> support;  // per period t: sorted realized nonzero codes
  std::vector<std::string> warnings;

  int at(int i, int t) const {
    return values[static_cast<std::size_t>(i) * n_periods + static_cast<std::size_t>(t - 1)];
  }
};

inline EffectivePanel compute_effective_treatment(const PanelDataset& panel,
                                                  const EffectiveTreatmentSpec& spec) {
  if (spec.anticipation < 0)
    throw ValidationError("effective treatment: anticipation delta must be >= 0");
  const int n = panel.n_units();
  const int T = panel.n_periods();
  EffectivePanel eff;
  eff.n_units = n;
  eff.n_periods = T;
  eff.values.assign(static_cast<std::size_t>(n) * T, 0);

  bool clipped = false;
  for (int i = 0; i < n; ++i) {
    // adopted[t] = 1{D_it != 0}, shared by all built-ins.
    std::vector<char> adopted(static_cast<std::size_t>(T + 1), 0);
    for (int t = 1; t <= T; ++t) adopted[static_cast<std::size_t>(t)] = panel.treated_at(i, t);

    int first_adoption = 0;  // 0 = none yet
    int n_adoptions = 0;
    int window_end = 0;
    for (int t = 1; t <= T; ++t) {
      int w = t + spec.anticipation;
      if (w > T) {
        w = T;
        if (spec.anticipation > 0) clipped = true;
      }
      // Extend the scan to the current window end.
      for (; window_end < w;) {
        ++window_end;
        if (adopted[static_cast<std::size_t>(window_end)]) {
          ++n_adoptions;
          if (first_adoption == 0) first_adoption = window_end;
        }
      }
      int code = 0;
      switch (spec.kind) {
        case EffectiveKind::Once:
          code = first_adoption != 0 ? 1 : 0;
          break;
        case EffectiveKind::Event:
          code = first_adoption;
          break;
        case EffectiveKind::Number:
          code = n_adoptions;
          break;
        case EffectiveKind::Custom: {
          if (!spec.custom)
            throw ValidationError("effective treatment: custom mapping not set");
          code = spec.custom(TreatmentPath{&panel, i}, t, spec.anticipation);
          if (code < 0)
            throw ValidationError(
                "effective treatment: custom mapping returned negative code " +
                std::to_string(code) + " (negative codes are reserved)");
          break;
        }
      }
      eff.values[static_cast<std::size_t>(i) * T + static_cast<std::size_t>(t - 1)] = code;
    }
  }
  if (clipped)
    eff.warnings.push_back("anticipation window clipped at T=" + std::to_string(T) +
                           " for periods with t + delta > T");

  if (spec.kind == EffectiveKind::Custom) {
    int violations = 0;
    for (int i = 0; i < n; ++i)
      for (int t = 2; t <= T; ++t)
        if (eff.at(i, t) == 0 && eff.at(i, t - 1) != 0) ++violations;
    if (violations > 0)
      eff.warnings.push_back(
          "custom mapping violates comparison-unit monotonicity (E_it = 0 with "
          "E_{i,t-1} != 0) in " + std::to_string(violations) + " unit-periods");
  }

  eff.support.assign(static_cast<std::size_t>(T + 1), {});
  for (int t = 1; t <= T; ++t) {
    std::set<int> vals;
    for (int i = 0; i < n; ++i) {
      const int v = eff.at(i, t);
      if (v != 0) vals.insert(v);
    }
    eff.support[static_cast<std::size_t>(t)].assign(vals.begin(), vals.end());
  }
  return eff;
}

// One estimation target: evaluation period t, baseline period s, effective
// intensity e, and optionally a pre-trend period r (2 <= r <= s).
struct Cell {
  int t = 0;
  int s = 0;
  int e = 0;
  std::optional<int> r;

  bool is_pretrend() const { return r.has_value(); }

  std::string label() const {
    std::string out = "(t=" + std::to_string(t) + ", s=" + std::to_string(s) +
                      ", e=" + std::to_string(e);
    if (r) out += ", r=" + std::to_string(*r);
    out += ")";
    return out;
  }

  bool operator==(const Cell& other) const {
    return t == other.t && s == other.s && e == other.e && r == other.r;
  }
};

// Everything one cell's estimation needs: mover/stayer indicators, the
// outcome difference (periods (t,s), or (r, r-1) for a pre-trend cell),
// and the covariate design with a leading intercept column.
struct MoverStayerFrame {
  Cell cell;
  int n = 0;
  std::vector<std::uint8_t> mover;   // M_i = 1{E_it = e, E_is = 0}
  std::vector<std::uint8_t> stayer;  // S_i = 1{E_it = 0, E_is = 0}
  std::vector<double> delta_y;
  Eigen::MatrixXd design;  // n x (1 + dim(X)), intercept first
  int n_movers = 0;
  int n_stayers = 0;
};

inline void validate_cell(const Cell& cell, int n_periods) {
  if (cell.s < 1 || cell.t > n_periods || cell.t <= cell.s)
    throw ValidationError("cell " + cell.label() + ": need 1 <= s < t <= T");
  if (cell.e == 0) throw ValidationError("cell " + cell.label() + ": e must be nonzero");
  if (cell.r && (*cell.r < 2 || *cell.r > cell.s))
    throw ValidationError("cell " + cell.label() + ": pre-trend period must satisfy 2 <= r <= s");
}

inline MoverStayerFrame build_cell_frame(const PanelDataset& panel, const EffectivePanel& eff,
                                         const Cell& cell) {
  validate_cell(cell, panel.n_periods());
  const int n = panel.n_units();
  MoverStayerFrame frame;
  frame.cell = cell;
  frame.n = n;
  frame.mover.assign(static_cast<std::size_t>(n), 0);
  frame.stayer.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const int et = eff.at(i, cell.t);
    const int es = eff.at(i, cell.s);
    if (et == cell.e && es == 0) {
      frame.mover[static_cast<std::size_t>(i)] = 1;
      ++frame.n_movers;
    } else if (et == 0 && es == 0) {
      frame.stayer[static_cast<std::size_t>(i)] = 1;
      ++frame.n_stayers;
    }
  }
  if (frame.n_movers == 0)
    throw EstimationError("empty cell " + cell.label() + ": no movers");
  if (frame.n_stayers == 0)
    throw EstimationError("empty cell " + cell.label() + ": no stayers");

  frame.delta_y = cell.r ? outcome_difference(panel, *cell.r, *cell.r - 1)
                         : outcome_difference(panel, cell.t, cell.s);

  const int p = 1 + panel.dim_covariates();
  frame.design.resize(n, p);
  for (int i = 0; i < n; ++i) {
    frame.design(i, 0) = 1.0;
    const auto x = panel.covariates(i);
    for (int k = 0; k < panel.dim_covariates(); ++k)
      frame.design(i, k + 1) = x[static_cast<std::size_t>(k)];
  }
  return frame;
}

struct DesignResult {
  std::vector<Cell> cells;
  std::vector<std::string> warnings;
};

namespace detail {

// A candidate cell survives if it has at least one mover and one stayer.
inline bool cell_populated(const EffectivePanel& eff, const Cell& cell) {
  bool any_mover = false, any_stayer = false;
  for (int i = 0; i < eff.n_units; ++i) {
    const int et = eff.at(i, cell.t);
    const int es = eff.at(i, cell.s);
    if (et == cell.e && es == 0) any_mover = true;
    else if (et == 0 && es == 0) any_stayer = true;
    if (any_mover && any_stayer) return true;
  }
  return false;
}

inline void push_or_warn(const EffectivePanel& eff, Cell cell, DesignResult& out) {
  if (detail::cell_populated(eff, cell)) {
    out.cells.push_back(cell);
  } else {
    out.warnings.push_back("dropped cell " + cell.label() + ": no movers or no stayers");
  }
}

}  // namespace detail

// Canonical cell enumeration per specification:
//   once:   (t, 1, 1) for t = 2..T
//   event:  (t, e-1, e) for each realized event date e >= 2 and t >= e
//   number: (t, 1, e) for each realized count e at period t, t >= 2
// Cells without movers or stayers are dropped with a warning record.
// With include_pretrends, every surviving cell with s >= 2 is additionally
// expanded with pre-trend periods r = 2..s.
inline DesignResult default_design(const EffectivePanel& eff, const EffectiveTreatmentSpec& spec,
                                   bool include_pretrends = false) {
  DesignResult out;
  const int T = eff.n_periods;
  // Realized nonzero codes across all periods, ascending; cells are listed
  // grouped by intensity and then by evaluation period.
  std::set<int> all_codes;
  for (int t = 1; t <= T; ++t)
    for (int e : eff.support[static_cast<std::size_t>(t)]) all_codes.insert(e);
  auto realized_at = [&](int e, int t) {
    const auto& sup = eff.support[static_cast<std::size_t>(t)];
    return std::binary_search(sup.begin(), sup.end(), e);
  };
  switch (spec.kind) {
    case EffectiveKind::Once:
      for (int t = 2; t <= T; ++t) detail::push_or_warn(eff, Cell{t, 1, 1, {}}, out);
      break;
    case EffectiveKind::Event:
      for (int e : all_codes) {
        const int s = e - 1;
        if (s < 1) continue;
        for (int t = std::max(2, s + 1); t <= T; ++t)
          if (realized_at(e, t)) detail::push_or_warn(eff, Cell{t, s, e, {}}, out);
      }
      break;
    case EffectiveKind::Number:
    case EffectiveKind::Custom:
      // Number-style enumeration with baseline s = 1; for custom mappings
      // this is the only support-driven design available.
      for (int e : all_codes)
        for (int t = 2; t <= T; ++t)
          if (realized_at(e, t)) detail::push_or_warn(eff, Cell{t, 1, e, {}}, out);
      break;
  }
  if (include_pretrends) {
    std::vector<Cell> expanded;
    for (const Cell& cell : out.cells) {
      expanded.push_back(cell);
      for (int r = 2; r <= cell.s; ++r) {
        Cell pre = cell;
        pre.r = r;
        expanded.push_back(pre);
      }
    }
    out.cells = std::move(expanded);
  }
  return out;
}

}  // namespace etdid
