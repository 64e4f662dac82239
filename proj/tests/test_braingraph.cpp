#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "scfc/braingraph.hpp"
#include "scfc/rng.hpp"
#include "test_util.hpp"

using namespace scfc;

namespace {

ConnMatrix structural3(double w01, double w02, double w12) {
  Mat m(3, 3);
  m(0, 1) = m(1, 0) = w01;
  m(0, 2) = m(2, 0) = w02;
  m(1, 2) = m(2, 1) = w12;
  return ConnMatrix(m, MatrixKind::Structural);
}

ConnMatrix random_structural(std::size_t n, Rng& rng, double zero_prob = 0.35) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = rng.uniform() < zero_prob ? 0.0 : rng.uniform(0.1, 9.0);
      m(i, j) = m(j, i) = w;
    }
  return ConnMatrix(m, MatrixKind::Structural);
}

ConnMatrix random_functional(std::size_t n, Rng& rng) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = rng.uniform(-1.0, 1.0);
  }
  return ConnMatrix(m, MatrixKind::FunctionalEmpirical);
}

std::vector<double> row_vec(const Mat& m, std::size_t i) {
  return std::vector<double>(m.row(i), m.row(i) + m.cols());
}

using EdgeSet = std::set<std::pair<std::size_t, std::size_t>>;

EdgeSet edge_set(const Mat& a) {
  EdgeSet s;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (a(i, j) != 0.0) s.insert({i, j});
  return s;
}

// independent re-derivation: full stable sort per node, explicit union
EdgeSet brute_knn(const ConnMatrix& m, std::size_t k) {
  const std::size_t n = m.n_rois();
  const bool absolute = m.kind() != MatrixKind::Structural;
  EdgeSet out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> nbrs;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = absolute ? std::abs(m.values()(i, j)) : m.values()(i, j);
      if (j != i && s > 0.0) nbrs.push_back(j);
    }
    std::stable_sort(nbrs.begin(), nbrs.end(), [&](std::size_t a, std::size_t b) {
      const double sa = absolute ? std::abs(m.values()(i, a)) : m.values()(i, a);
      const double sb = absolute ? std::abs(m.values()(i, b)) : m.values()(i, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });
    for (std::size_t t = 0; t < std::min(k, nbrs.size()); ++t)
      out.insert({std::min(i, nbrs[t]), std::max(i, nbrs[t])});
  }
  return out;
}

Mat naive_ldp(const Mat& a) {
  const std::size_t n = a.rows();
  auto degree = [&](std::size_t p) {
    double d = 0.0;
    for (std::size_t o = 0; o < n; ++o)
      if (o != p && a(p, o) != 0.0) d += 1.0;
    return d;
  };
  Mat f(n, 5);
  for (std::size_t p = 0; p < n; ++p) {
    std::vector<double> s;
    for (std::size_t o = 0; o < n; ++o)
      if (o != p && a(p, o) != 0.0) s.push_back(degree(o));
    if (s.empty()) continue;
    double mean = 0.0;
    for (double d : s) mean += d;
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double d : s) var += (d - mean) * (d - mean);
    f(p, 0) = degree(p);
    f(p, 1) = mean;
    f(p, 2) = std::sqrt(var / static_cast<double>(s.size()));
    f(p, 3) = *std::min_element(s.begin(), s.end());
    f(p, 4) = *std::max_element(s.begin(), s.end());
  }
  return f;
}

}  // namespace

TEST_CASE("knn keeps each node's strongest neighbor") {
  ConnMatrix m = structural3(3.0, 1.0, 2.0);
  Mat a = knn_sparsify(m, 1);
  CHECK(edge_set(a) == EdgeSet{{0, 1}, {1, 2}});
  CHECK(a(0, 1) == 3.0);
  CHECK(a(1, 2) == 2.0);
  CHECK(a(0, 2) == 0.0);
}

TEST_CASE("k = n-1 leaves a complete graph unchanged") {
  ConnMatrix m = structural3(3.0, 1.0, 2.0);
  Mat a = knn_sparsify(m, 2);
  CHECK(a.storage() == m.values().storage());
}

TEST_CASE("k bounds") {
  ConnMatrix m = structural3(3.0, 1.0, 2.0);
  REQUIRE_ERRC(knn_sparsify(m, 0), Errc::KOutOfRange);
  REQUIRE_ERRC(knn_sparsify(m, 3), Errc::KOutOfRange);
}

TEST_CASE("functional matrices rank by magnitude and store magnitudes") {
  Mat m(3, 3);
  m(0, 0) = m(1, 1) = m(2, 2) = 1.0;
  m(0, 1) = m(1, 0) = -0.9;
  m(0, 2) = m(2, 0) = 0.5;
  m(1, 2) = m(2, 1) = 0.1;
  ConnMatrix fc(m, MatrixKind::FunctionalEmpirical);
  Mat a = knn_sparsify(fc, 1);
  CHECK(a(0, 1) == 0.9);  // strongest by |w|, stored nonnegative
  CHECK(a(0, 2) == 0.5);  // node 2's own pick
  CHECK(a(1, 2) == 0.0);
}

TEST_CASE("equal strengths break toward the lower index") {
  ConnMatrix m = structural3(2.0, 2.0, 0.0);
  Mat a = knn_sparsify(m, 1);
  // node 0 must choose neighbor 1, not 2
  CHECK(a(0, 1) == 2.0);
  CHECK(edge_set(a) == EdgeSet{{0, 1}, {0, 2}});  // node 2 still picks 0
}

TEST_CASE("ldp hand cases") {
  SUBCASE("path graph") {
    Mat a(3, 3);
    a(0, 1) = a(1, 0) = 1.0;
    a(1, 2) = a(2, 1) = 1.0;
    Mat f = ldp_features(a);
    CHECK(row_vec(f, 1) == std::vector<double>{2.0, 1.0, 0.0, 1.0, 1.0});
    CHECK(row_vec(f, 0) == std::vector<double>{1.0, 2.0, 0.0, 2.0, 2.0});
  }
  SUBCASE("complete graph K4") {
    Mat a(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) a(i, j) = 0.7;
    Mat f = ldp_features(a);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(row_vec(f, i) == std::vector<double>{3.0, 3.0, 0.0, 3.0, 3.0});
  }
  SUBCASE("isolated node row is zero") {
    Mat a(3, 3);
    a(0, 1) = a(1, 0) = 1.0;
    Mat f = ldp_features(a);
    CHECK(row_vec(f, 2) == std::vector<double>{0.0, 0.0, 0.0, 0.0, 0.0});
  }
  SUBCASE("asymmetric input is rejected") {
    Mat a(2, 2);
    a(0, 1) = 1.0;
    REQUIRE_ERRC(ldp_features(a), Errc::AsymmetricAdjacency);
  }
}

TEST_CASE("adjacency normalization") {
  SUBCASE("two nodes, unit edge") {
    Mat a(2, 2);
    a(0, 1) = a(1, 0) = 1.0;
    Mat nrm = normalize_adjacency(a, true);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::abs(nrm(i, j) - 0.5) < 1e-15);
  }
  SUBCASE("empty graph with self-loops is the identity") {
    Mat nrm = normalize_adjacency(Mat(3, 3), true);
    CHECK(nrm.storage() == Mat::identity(3).storage());
  }
  SUBCASE("empty graph without self-loops is zero") {
    Mat nrm = normalize_adjacency(Mat(3, 3), false);
    CHECK(nrm.storage() == Mat(3, 3).storage());
  }
  SUBCASE("negative weight is rejected") {
    Mat a(2, 2);
    a(0, 1) = a(1, 0) = -0.5;
    REQUIRE_ERRC(normalize_adjacency(a, true), Errc::NegativeWeight);
  }
}

TEST_CASE("sparsification agrees with a brute-force oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(18);  // up to 20
    const std::size_t k = 1 + rng.uniform_index(n - 1);
    ConnMatrix m = trial % 2 == 0 ? random_structural(n, rng)
                                  : random_functional(n, rng);
    Mat a = knn_sparsify(m, k);
    CHECK(edge_set(a) == brute_knn(m, k));
    CHECK(edge_set(a).size() <= n * k);
    // weights are the ranking strengths of surviving edges
    const bool absolute = m.kind() != MatrixKind::Structural;
    for (const auto& [i, j] : edge_set(a)) {
      const double w = m.values()(i, j);
      CHECK(a(i, j) == (absolute ? std::abs(w) : w));
      CHECK(a(i, j) == a(j, i));
    }
    Mat f = ldp_features(a);
    Mat nf = naive_ldp(a);
    CHECK(f.storage() == nf.storage());
  }
}

TEST_CASE("re-sparsifying a sparsified graph changes nothing") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    ConnMatrix m = random_structural(12, rng);
    const std::size_t k = 1 + rng.uniform_index(6);
    Mat once = knn_sparsify(m, k);
    Mat twice = knn_sparsify(ConnMatrix(once, MatrixKind::Structural), k);
    CHECK(edge_set(once) == edge_set(twice));
    CHECK(once.storage() == twice.storage());
  }
}

TEST_CASE("build_graph composition and permutation equivariance") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6 + rng.uniform_index(8);
    ConnMatrix m = random_structural(n, rng, 0.2);
    const std::size_t k = 2 + rng.uniform_index(3);
    BrainGraph g = build_graph(m, k, GraphView::Structural);
    CHECK(g.n_nodes == n);
    CHECK(g.node_features.cols() == 5);

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Mat pm(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        pm(perm[i], perm[j]) = m.values()(i, j);
    BrainGraph pg = build_graph(ConnMatrix(pm, MatrixKind::Structural), k,
                                GraphView::Structural);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 5; ++c)
        CHECK(std::abs(pg.node_features(perm[i], c) - g.node_features(i, c)) <
              1e-12);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(std::abs(pg.adjacency(perm[i], perm[j]) - g.adjacency(i, j)) <
              1e-12);
        CHECK(std::abs(pg.norm_adjacency(perm[i], perm[j]) -
                       g.norm_adjacency(i, j)) < 1e-12);
      }
    }
  }
}

TEST_CASE("normalized adjacency is symmetric with spectral radius at most 1") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    ConnMatrix m = random_structural(10, rng, 0.3);
    BrainGraph g = build_graph(m, 3, GraphView::Structural);
    const Mat& nrm = g.norm_adjacency;
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 10; ++j)
        CHECK(nrm(i, j) == nrm(j, i));

    std::vector<double> v(10);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 300; ++it) {
      std::vector<double> w(10, 0.0);
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) w[i] += nrm(i, j) * v[j];
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      lambda = norm;
      for (std::size_t i = 0; i < 10; ++i) v[i] = w[i] / norm;
    }
    CHECK(lambda <= 1.0 + 1e-9);
  }
}

TEST_CASE("edge list enumerates the upper triangle in order") {
  ConnMatrix m = structural3(3.0, 1.0, 2.0);
  BrainGraph g = build_graph(m, 2, GraphView::Functional);
  CHECK(g.view == GraphView::Functional);
  std::vector<std::pair<std::size_t, std::size_t>> expect{{0, 1}, {0, 2}, {1, 2}};
  CHECK(g.edge_list() == expect);
}
