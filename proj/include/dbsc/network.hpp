#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dbsc/weights.hpp"

namespace dbsc {

// Directed flow view of one weight slice: w(i, j) is the weight unit j's contrast
// row places on unit i, negated, read as flow from i to j. Every vertex receives
// total inflow one; outflow equals inflow exactly when the slice's columns balance.
struct FlowNetwork {
  std::vector<std::string> labels;
  Eigen::MatrixXd w;

  int size() const { return static_cast<int>(labels.size()); }
};

// Requires a zero-intercept slice with nonpositive off-diagonals.
FlowNetwork weights_to_network(const WeightTensor& tensor, int period);

// Outflow minus inflow per vertex.
Eigen::VectorXd flow_balance(const FlowNetwork& net);

struct ComponentLabels {
  bool strongly_connected = false;
  int n_components = 0;
  std::vector<int> component;  // per-vertex component id
};

// Strong connectivity over edges with flow above tol.
ComponentLabels strongly_connected_components(const FlowNetwork& net, double tol = kTolFeas);

struct PropensityResult {
  Eigen::VectorXd p;
  bool multiple_valid = false;  // more than one closed vertex class supports a valid p
  std::vector<int> component;
};

// Assignment probabilities under which the slice's estimator is unbiased: the
// stationary vector of the flow matrix. When the network splits into several
// closed classes, each class's stationary mass is set proportional to its size
// and the multiplicity flag is raised.
PropensityResult unbiased_propensities(const WeightTensor& tensor, int period);

struct CentralityResult {
  Eigen::VectorXd centrality;
  int iterations = 0;
  bool shifted = false;  // averaged iteration used because the plain one cycled
};

// Nonnegative eigenvector of the flow matrix for eigenvalue one, normalized to
// sum one; power iteration to residual 1e-10. Requires strong connectivity.
CentralityResult eigenvector_centrality(const FlowNetwork& net);

std::string network_to_dot(const FlowNetwork& net);
std::string network_to_json(const FlowNetwork& net);

}  // namespace dbsc
