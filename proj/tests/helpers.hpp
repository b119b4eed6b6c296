#pragma once

// Shared fixtures for the test suite: deterministic random panels, the
// three-unit equidistant reference panel and small enumeration helpers.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dbsc/panel.hpp"
#include "dbsc/rng.hpp"

namespace testutil {

inline std::vector<std::string> labels(const std::string& prefix, int count) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// Panel with unit rows taken from the initializer, units u1..uN, periods t1..tT.
inline dbsc::Panel make_panel(const std::vector<std::vector<double>>& rows) {
  dbsc::Panel p;
  const int n = static_cast<int>(rows.size());
  const int t = n > 0 ? static_cast<int>(rows.front().size()) : 0;
  p.units = labels("u", n);
  p.periods = labels("t", t);
  p.y.resize(n, t);
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < t; ++s) p.y(i, s) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
  return p;
}

// Standard-normal panel, reproducible by seed.
inline dbsc::Panel random_panel(std::uint64_t seed, int n, int t) {
  dbsc::Rng rng(seed);
  dbsc::Panel p;
  p.units = labels("u", n);
  p.periods = labels("t", t);
  p.y.resize(n, t);
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < t; ++s) p.y(i, s) = rng.normal();
  return p;
}

inline dbsc::PotentialPanel random_zero_effect(std::uint64_t seed, int n, int t) {
  return dbsc::zero_effect_panel(random_panel(seed, n, t));
}

// The three-unit panel whose outcomes sit at 1, 2 and 3 in every period: the
// middle unit is the average of the outer two, so sc pairs the outer units with
// the middle one and the middle one with the outer pair.
inline dbsc::Panel equidistant_panel() {
  return make_panel({{1, 1, 1}, {2, 2, 2}, {3, 3, 3}});
}

}  // namespace testutil
