#include "scfc/braingraph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scfc/errors.hpp"

namespace scfc {

std::vector<std::pair<std::size_t, std::size_t>> BrainGraph::edge_list() const {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n_nodes; ++i)
    for (std::size_t j = i + 1; j < n_nodes; ++j)
      if (adjacency(i, j) != 0.0) edges.emplace_back(i, j);
  return edges;
}

Mat knn_sparsify(const ConnMatrix& m, std::size_t k) {
  const std::size_t n = m.n_rois();
  if (k < 1 || k >= n)
    fail(Errc::KOutOfRange, "k must satisfy 1 <= k < " + std::to_string(n) +
                                ", got " + std::to_string(k));
  const bool absolute = m.kind() != MatrixKind::Structural;
  const Mat& v = m.values();
  Mat strength(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      strength(i, j) = absolute ? std::abs(v(i, j)) : v(i, j);

  Mat out(n, n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && strength(i, j) > 0.0) cand.emplace_back(strength(i, j), j);
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t take = std::min(k, cand.size());
    for (std::size_t t = 0; t < take; ++t) {
      const std::size_t j = cand[t].second;
      out(i, j) = strength(i, j);
      out(j, i) = strength(i, j);
    }
  }
  return out;
}

namespace {

void require_symmetric(const Mat& a) {
  if (a.rows() != a.cols())
    fail(Errc::AsymmetricAdjacency, "adjacency must be square, got " +
                                        std::to_string(a.rows()) + "x" +
                                        std::to_string(a.cols()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (a(i, j) != a(j, i))
        fail(Errc::AsymmetricAdjacency,
             "adjacency differs at (" + std::to_string(i) + "," +
                 std::to_string(j) + ")");
}

}  // namespace

Mat ldp_features(const Mat& adjacency) {
  require_symmetric(adjacency);
  const std::size_t n = adjacency.rows();
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && adjacency(i, j) != 0.0) deg[i] += 1.0;

  Mat f(n, 5);
  std::vector<double> nbr;
  for (std::size_t p = 0; p < n; ++p) {
    nbr.clear();
    for (std::size_t o = 0; o < n; ++o)
      if (o != p && adjacency(p, o) != 0.0) nbr.push_back(deg[o]);
    if (nbr.empty()) continue;  // row already zero
    double sum = 0.0, mn = nbr[0], mx = nbr[0];
    for (double d : nbr) {
      sum += d;
      mn = std::min(mn, d);
      mx = std::max(mx, d);
    }
    const double mean = sum / static_cast<double>(nbr.size());
    double sq = 0.0;
    for (double d : nbr) sq += (d - mean) * (d - mean);
    f(p, 0) = deg[p];
    f(p, 1) = mean;
    f(p, 2) = std::sqrt(sq / static_cast<double>(nbr.size()));
    f(p, 3) = mn;
    f(p, 4) = mx;
  }
  return f;
}

Mat normalize_adjacency(const Mat& adjacency, bool add_self_loops) {
  require_symmetric(adjacency);
  const std::size_t n = adjacency.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!(adjacency(i, j) >= 0.0))
        fail(Errc::NegativeWeight, "adjacency weight at (" + std::to_string(i) +
                                       "," + std::to_string(j) +
                                       ") is negative or non-finite");
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = add_self_loops ? 1.0 : 0.0;
    for (std::size_t j = 0; j < n; ++j) d += adjacency(i, j);
    if (d > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Mat out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double self = adjacency(i, i) + (add_self_loops ? 1.0 : 0.0);
    out(i, i) = inv_sqrt[i] * self * inv_sqrt[i];
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = inv_sqrt[i] * adjacency(i, j) * inv_sqrt[j];
      out(i, j) = v;  // mirrored so symmetry is exact, not just within rounding
      out(j, i) = v;
    }
  }
  return out;
}

BrainGraph build_graph(const ConnMatrix& m, std::size_t k, GraphView view) {
  BrainGraph g;
  g.n_nodes = m.n_rois();
  g.adjacency = knn_sparsify(m, k);
  g.node_features = ldp_features(g.adjacency);
  g.norm_adjacency = normalize_adjacency(g.adjacency, true);
  g.view = view;
  return g;
}

}  // namespace scfc
