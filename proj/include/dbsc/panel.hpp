#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

namespace dbsc {

// Balanced panel of outcomes: N units observed over T periods.
struct Panel {
  std::vector<std::string> units;    // length N, unique labels
  std::vector<std::string> periods;  // length T, unique labels
  Eigen::MatrixXd y;                 // N x T

  int n_units() const { return static_cast<int>(units.size()); }
  int n_periods() const { return static_cast<int>(periods.size()); }

  // Throws validation_error unless labels are unique, dimensions match and all values are finite.
  void validate() const;

  // Index of a period label; accepts the keyword "last". Throws on unknown labels.
  int period_index(const std::string& label) const;
  // Index of a unit label. Throws on unknown labels.
  int unit_index(const std::string& label) const;
};

// One realized treatment assignment: unit i treated in period t.
struct Assignment {
  int unit = 0;
  int period = 0;
};

// Potential outcomes under control (y0) and under treatment (y1) on a common label grid.
struct PotentialPanel {
  std::vector<std::string> units;
  std::vector<std::string> periods;
  Eigen::MatrixXd y0;  // N x T
  Eigen::MatrixXd y1;  // N x T

  int n_units() const { return static_cast<int>(units.size()); }
  int n_periods() const { return static_cast<int>(periods.size()); }

  void validate() const;

  // Control-outcome panel (what every unit shows absent treatment).
  Panel control_panel() const;

  // Observed panel under a single-cell assignment: the treated cell shows y1, all else y0.
  Panel observed(const Assignment& a) const;

  // Observed panel when every unit in `subset` is treated in period t.
  Panel observed_subset(const std::vector<int>& subset, int period) const;

  // Treatment effect y1 - y0 at one cell.
  double effect(int unit, int period) const { return y1(unit, period) - y0(unit, period); }
};

// How the treated position is drawn in a randomization experiment.
struct AssignmentDesign {
  enum class Kind { uniform_unit, uniform_time, propensity, subset };

  Kind kind = Kind::uniform_unit;
  int fixed_period = -1;                 // treated period for unit/propensity/subset designs
  int fixed_unit = -1;                   // treated unit for the time design
  std::vector<double> propensities;      // propensity design: P(unit i treated), sums to 1
  int n_treated = 1;                     // subset design: number of treated units

  void validate(int n_units, int n_periods) const;
};

// Builds a PotentialPanel with identical y0/y1 (zero treatment effects everywhere).
PotentialPanel zero_effect_panel(Panel base);

// CSV layout: header "unit,<period labels...>", one row per unit, values printed
// with %.17g so a write/read cycle reproduces doubles exactly.
Panel read_panel_csv(std::istream& in);
Panel load_panel_csv(const std::string& path);
void write_panel_csv(const Panel& panel, std::ostream& out);
void save_panel_csv(const Panel& panel, const std::string& path);

std::string panel_to_json(const Panel& panel);
Panel panel_from_json(const std::string& text);

}  // namespace dbsc
