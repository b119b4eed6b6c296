#include "dbsc/panel.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"

namespace dbsc {

namespace {

void check_labels(const std::vector<std::string>& labels, const char* what) {
  std::set<std::string> seen;
  for (const auto& label : labels) {
    require(!label.empty(), std::string(what) + " labels must be non-empty");
    require(label.find(',') == std::string::npos && label.find('\n') == std::string::npos,
            std::string(what) + " label '" + label + "' contains a separator character");
    require(seen.insert(label).second, std::string("duplicate ") + what + " label '" + label + "'");
  }
}

void check_matrix(const Eigen::MatrixXd& m, std::size_t rows, std::size_t cols, const char* what) {
  require(static_cast<std::size_t>(m.rows()) == rows && static_cast<std::size_t>(m.cols()) == cols,
          std::string(what) + " dimensions do not match the unit/period labels");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index t = 0; t < m.cols(); ++t)
      require(std::isfinite(m(i, t)), std::string(what) + " contains a non-finite value");
}

std::string format_value(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

double parse_value(const std::string& token, int row, int col) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
  double value = 0.0;
  const auto result = std::from_chars(begin, end, value);
  require(result.ec == std::errc() && result.ptr == end,
          "cell (" + std::to_string(row) + "," + std::to_string(col) + ") is not a number: '" +
              token + "'");
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void Panel::validate() const {
  require(n_units() >= 2, "panel needs at least 2 units");
  require(n_periods() >= 2, "panel needs at least 2 periods");
  check_labels(units, "unit");
  check_labels(periods, "period");
  check_matrix(y, units.size(), periods.size(), "outcome matrix");
}

int Panel::period_index(const std::string& label) const {
  if (label == "last") return n_periods() - 1;
  for (int t = 0; t < n_periods(); ++t)
    if (periods[static_cast<std::size_t>(t)] == label) return t;
  throw validation_error("unknown period label '" + label + "'");
}

int Panel::unit_index(const std::string& label) const {
  for (int i = 0; i < n_units(); ++i)
    if (units[static_cast<std::size_t>(i)] == label) return i;
  throw validation_error("unknown unit label '" + label + "'");
}

void PotentialPanel::validate() const {
  require(n_units() >= 2, "panel needs at least 2 units");
  require(n_periods() >= 2, "panel needs at least 2 periods");
  check_labels(units, "unit");
  check_labels(periods, "period");
  check_matrix(y0, units.size(), periods.size(), "control outcome matrix");
  check_matrix(y1, units.size(), periods.size(), "treated outcome matrix");
}

Panel PotentialPanel::control_panel() const {
  return Panel{units, periods, y0};
}

Panel PotentialPanel::observed(const Assignment& a) const {
  require(a.unit >= 0 && a.unit < n_units(), "treated unit out of range");
  require(a.period >= 0 && a.period < n_periods(), "treated period out of range");
  Panel panel{units, periods, y0};
  panel.y(a.unit, a.period) = y1(a.unit, a.period);
  return panel;
}

Panel PotentialPanel::observed_subset(const std::vector<int>& subset, int period) const {
  require(period >= 0 && period < n_periods(), "treated period out of range");
  Panel panel{units, periods, y0};
  for (int unit : subset) {
    require(unit >= 0 && unit < n_units(), "treated unit out of range");
    panel.y(unit, period) = y1(unit, period);
  }
  return panel;
}

void AssignmentDesign::validate(int n_units, int n_periods) const {
  switch (kind) {
    case Kind::uniform_unit:
    case Kind::propensity:
    case Kind::subset:
      require(fixed_period >= 0 && fixed_period < n_periods, "design needs a valid treated period");
      break;
    case Kind::uniform_time:
      require(fixed_unit >= 0 && fixed_unit < n_units, "design needs a valid treated unit");
      break;
  }
  if (kind == Kind::propensity) {
    require(static_cast<int>(propensities.size()) == n_units,
            "propensity vector length must equal the number of units");
    double total = 0.0;
    for (double p : propensities) {
      require(p >= 0.0 && p <= 1.0, "propensities must lie in [0, 1]");
      total += p;
    }
    require(std::abs(total - 1.0) <= 1e-12, "propensities must sum to 1");
  }
  if (kind == Kind::subset) {
    require(n_treated >= 1 && n_treated < n_units, "treated subset size must be in [1, N-1]");
  }
}

PotentialPanel zero_effect_panel(Panel base) {
  base.validate();
  PotentialPanel pp;
  pp.units = std::move(base.units);
  pp.periods = std::move(base.periods);
  pp.y0 = base.y;
  pp.y1 = std::move(base.y);
  return pp;
}

Panel read_panel_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty CSV input");
  auto header = split_csv_line(line);
  require(header.size() >= 3, "CSV header needs a label column and at least 2 periods");

  Panel panel;
  for (std::size_t c = 1; c < header.size(); ++c) panel.periods.push_back(strip(header[c]));

  std::vector<std::vector<double>> rows;
  int row_number = 0;
  while (std::getline(in, line)) {
    if (strip(line).empty()) continue;
    auto fields = split_csv_line(line);
    require(fields.size() == header.size(),
            "row " + std::to_string(row_number + 1) + " has " + std::to_string(fields.size()) +
                " fields, expected " + std::to_string(header.size()));
    panel.units.push_back(strip(fields[0]));
    std::vector<double> values;
    values.reserve(fields.size() - 1);
    for (std::size_t c = 1; c < fields.size(); ++c)
      values.push_back(parse_value(fields[c], row_number, static_cast<int>(c) - 1));
    rows.push_back(std::move(values));
    ++row_number;
  }

  panel.y.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(panel.periods.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t t = 0; t < rows[i].size(); ++t)
      panel.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = rows[i][t];

  panel.validate();
  return panel;
}

Panel load_panel_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open panel file '" + path + "'");
  return read_panel_csv(in);
}

void write_panel_csv(const Panel& panel, std::ostream& out) {
  panel.validate();
  out << "unit";
  for (const auto& p : panel.periods) out << ',' << p;
  out << '\n';
  for (int i = 0; i < panel.n_units(); ++i) {
    out << panel.units[static_cast<std::size_t>(i)];
    for (int t = 0; t < panel.n_periods(); ++t) out << ',' << format_value(panel.y(i, t));
    out << '\n';
  }
}

void save_panel_csv(const Panel& panel, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write panel file '" + path + "'");
  write_panel_csv(panel, out);
}

std::string panel_to_json(const Panel& panel) {
  panel.validate();
  nlohmann::ordered_json j;
  j["units"] = panel.units;
  j["periods"] = panel.periods;
  auto rows = nlohmann::ordered_json::array();
  for (int i = 0; i < panel.n_units(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (int t = 0; t < panel.n_periods(); ++t) row.push_back(panel.y(i, t));
    rows.push_back(std::move(row));
  }
  j["y"] = std::move(rows);
  return j.dump(2);
}

Panel panel_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("bad panel JSON: ") + e.what());
  }
  require(j.contains("units") && j.contains("periods") && j.contains("y"),
          "panel JSON needs 'units', 'periods' and 'y'");
  Panel panel;
  try {
    panel.units = j["units"].get<std::vector<std::string>>();
    panel.periods = j["periods"].get<std::vector<std::string>>();
    const auto& rows = j["y"];
    require(rows.is_array() && rows.size() == panel.units.size(), "panel JSON 'y' shape mismatch");
    panel.y.resize(static_cast<Eigen::Index>(panel.units.size()),
                   static_cast<Eigen::Index>(panel.periods.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].is_array() && rows[i].size() == panel.periods.size(),
              "panel JSON 'y' shape mismatch");
      for (std::size_t t = 0; t < rows[i].size(); ++t)
        panel.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = rows[i][t].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("bad panel JSON: ") + e.what());
  }
  panel.validate();
  return panel;
}

}  // namespace dbsc
