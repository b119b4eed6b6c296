#include "dbsc/network.hpp"

// Eigen's SVD triggers a spurious maybe-uninitialized warning under GCC -O2.
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic ignored "-Wmaybe-uninitialized"
#endif

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stack>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"

namespace dbsc {

namespace {

constexpr double kCentralityTol = 1e-10;
constexpr int kCentralityMaxIterations = 10000;

// Iterative Tarjan over the adjacency implied by flows above tol.
std::vector<int> tarjan_components(const Eigen::MatrixXd& w, double tol, int& n_components) {
  const int n = static_cast<int>(w.rows());
  std::vector<int> index(n, -1), lowlink(n, 0), component(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  int next_index = 0;
  n_components = 0;

  struct Frame {
    int v;
    int next_child;
  };

  for (int root = 0; root < n; ++root) {
    if (index[root] != -1) continue;
    std::stack<Frame> frames;
    frames.push({root, 0});
    index[root] = lowlink[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;

    while (!frames.empty()) {
      Frame& frame = frames.top();
      const int v = frame.v;
      bool descended = false;
      while (frame.next_child < n) {
        const int u = frame.next_child++;
        if (u == v || w(v, u) <= tol) continue;
        if (index[u] == -1) {
          index[u] = lowlink[u] = next_index++;
          stack.push_back(u);
          on_stack[u] = true;
          frames.push({u, 0});
          descended = true;
          break;
        }
        if (on_stack[u]) lowlink[v] = std::min(lowlink[v], index[u]);
      }
      if (descended) continue;
      if (lowlink[v] == index[v]) {
        int u;
        do {
          u = stack.back();
          stack.pop_back();
          on_stack[u] = false;
          component[u] = n_components;
        } while (u != v);
        ++n_components;
      }
      frames.pop();
      if (!frames.empty()) {
        const int parent = frames.top().v;
        lowlink[parent] = std::min(lowlink[parent], lowlink[v]);
      }
    }
  }
  return component;
}

// Stationary vector of the column-stochastic submatrix on the given vertices.
Eigen::VectorXd component_stationary(const Eigen::MatrixXd& w, const std::vector<int>& members) {
  const int m = static_cast<int>(members.size());
  Eigen::MatrixXd sub(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) sub(a, b) = w(members[static_cast<std::size_t>(a)],
                                              members[static_cast<std::size_t>(b)]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub - Eigen::MatrixXd::Identity(m, m),
                                        Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double cutoff = 1e-10 * std::max(sigma[0], 1.0);
  if (m >= 2 && sigma[m - 2] <= cutoff) {
    std::string values;
    char buf[32];
    for (int k = 0; k < m; ++k) {
      std::snprintf(buf, sizeof(buf), "%s%.3e", k ? ", " : "", sigma[k]);
      values += buf;
    }
    throw validation_error("stationary vector is ambiguous within one vertex class "
                           "(singular values: " + values + ")");
  }
  Eigen::VectorXd q = svd.matrixV().col(m - 1).cwiseAbs();
  return q / q.sum();
}

}  // namespace

FlowNetwork weights_to_network(const WeightTensor& tensor, int period) {
  const int n = tensor.n_units();
  const int slice = tensor.slice_of(period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& intercept = tensor.intercepts[static_cast<std::size_t>(slice)];
  require(intercept.cwiseAbs().maxCoeff() <= kTolFeas,
          "the flow view needs a zero-intercept slice; fit sc or usc instead of " +
              family_name(tensor.family));
  FlowNetwork net;
  net.labels = tensor.units;
  net.w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      require(w(j, i) <= kTolFeas, "off-diagonal weights must be nonpositive");
      net.w(i, j) = std::max(0.0, -w(j, i));
    }
  }
  return net;
}

Eigen::VectorXd flow_balance(const FlowNetwork& net) {
  return net.w.rowwise().sum() - net.w.colwise().sum().transpose();
}

ComponentLabels strongly_connected_components(const FlowNetwork& net, double tol) {
  ComponentLabels out;
  out.component = tarjan_components(net.w, tol, out.n_components);
  out.strongly_connected = out.n_components == 1;
  return out;
}

PropensityResult unbiased_propensities(const WeightTensor& tensor, int period) {
  const FlowNetwork net = weights_to_network(tensor, period);
  const int n = net.size();
  const ComponentLabels labels = strongly_connected_components(net);

  // A class is closed when no flow enters it from outside: its stationary mass
  // cannot escape, so it supports a valid propensity vector.
  std::vector<bool> closed(static_cast<std::size_t>(labels.n_components), true);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (net.w(i, j) > kTolFeas && labels.component[static_cast<std::size_t>(i)] !=
                                        labels.component[static_cast<std::size_t>(j)])
        closed[static_cast<std::size_t>(labels.component[static_cast<std::size_t>(j)])] = false;

  std::vector<std::vector<int>> closed_members;
  for (int c = 0; c < labels.n_components; ++c) {
    if (!closed[static_cast<std::size_t>(c)]) continue;
    std::vector<int> members;
    for (int v = 0; v < n; ++v)
      if (labels.component[static_cast<std::size_t>(v)] == c) members.push_back(v);
    closed_members.push_back(std::move(members));
  }
  require(!closed_members.empty(), "no closed vertex class found");

  int covered = 0;
  for (const auto& members : closed_members) covered += static_cast<int>(members.size());

  PropensityResult out;
  out.p = Eigen::VectorXd::Zero(n);
  out.multiple_valid = closed_members.size() > 1;
  out.component = labels.component;
  for (const auto& members : closed_members) {
    const Eigen::VectorXd q = component_stationary(net.w, members);
    const double mass = static_cast<double>(members.size()) / static_cast<double>(covered);
    for (std::size_t a = 0; a < members.size(); ++a)
      out.p[members[a]] = mass * q[static_cast<int>(a)];
  }

  const double residual = (net.w * out.p - out.p).cwiseAbs().maxCoeff();
  require(residual <= 1e-9, "propensity recovery failed: stationarity residual " +
                                std::to_string(residual));
  return out;
}

CentralityResult eigenvector_centrality(const FlowNetwork& net) {
  const ComponentLabels labels = strongly_connected_components(net);
  require(labels.strongly_connected,
          "centrality needs a strongly connected network; decompose into components first");
  const int n = net.size();

  CentralityResult out;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::MatrixXd iteration =
        pass == 0 ? net.w
                  : ((net.w + Eigen::MatrixXd::Identity(n, n)) * 0.5).eval();
    for (int it = 0; it < kCentralityMaxIterations; ++it) {
      Eigen::VectorXd next = iteration * v;
      next /= next.sum();
      ++out.iterations;
      v = next;
      if ((net.w * v - v).cwiseAbs().maxCoeff() <= kCentralityTol) {
        out.centrality = v;
        return out;
      }
    }
    // The plain iteration can cycle on periodic networks; averaging with the
    // identity keeps the eigenvector while breaking the cycle.
    out.shifted = true;
  }
  throw solver_error("centrality power iteration did not converge",
                     (net.w * v - v).cwiseAbs().maxCoeff());
}

std::string network_to_dot(const FlowNetwork& net) {
  std::string out = "digraph flows {\n";
  for (const auto& label : net.labels) out += "  \"" + label + "\";\n";
  char buf[64];
  for (int i = 0; i < net.size(); ++i) {
    for (int j = 0; j < net.size(); ++j) {
      if (net.w(i, j) <= 0.0) continue;
      std::snprintf(buf, sizeof(buf), " [label=\"%.3f\"];\n", net.w(i, j));
      out += "  \"" + net.labels[static_cast<std::size_t>(i)] + "\" -> \"" +
             net.labels[static_cast<std::size_t>(j)] + "\"" + buf;
    }
  }
  out += "}\n";
  return out;
}

std::string network_to_json(const FlowNetwork& net) {
  nlohmann::ordered_json j;
  j["units"] = net.labels;
  auto rows = nlohmann::ordered_json::array();
  for (int i = 0; i < net.size(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (int c = 0; c < net.size(); ++c) row.push_back(net.w(i, c));
    rows.push_back(std::move(row));
  }
  j["flows"] = std::move(rows);
  return j.dump(2);
}

}  // namespace dbsc
