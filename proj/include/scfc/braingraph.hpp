#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "scfc/connectome.hpp"
#include "scfc/matrix.hpp"

namespace scfc {

enum class GraphView { Structural, Functional };

// Sparsified weighted graph plus the inputs the GCN consumes.
struct BrainGraph {
  std::size_t n_nodes = 0;
  Mat adjacency;       // symmetric, zero diagonal, weights >= 0
  Mat node_features;   // n x 5: [deg, mean, std, min, max] over neighbor degrees
  Mat norm_adjacency;  // D^{-1/2} (A + I) D^{-1/2}
  GraphView view = GraphView::Structural;

  // undirected edges (i < j) over nonzero adjacency entries, row-major order
  std::vector<std::pair<std::size_t, std::size_t>> edge_list() const;
};

// Keep each node's k strongest incident edges, then union-symmetrize (an edge
// survives if either endpoint picked it).  Functional matrices rank and store
// by absolute value; structural by raw weight.  Equal strengths break toward
// the lower neighbor index.
Mat knn_sparsify(const ConnMatrix& m, std::size_t k);

// Per-node [deg, mean, std, min, max] over the unweighted degrees of its
// neighbors; population std; isolated nodes get all-zero rows.
Mat ldp_features(const Mat& adjacency);

// D^{-1/2} (A + I) D^{-1/2} with D the row-sum degree of the self-looped
// matrix; zero-degree rows map to zero rows.
Mat normalize_adjacency(const Mat& adjacency, bool add_self_loops = true);

BrainGraph build_graph(const ConnMatrix& m, std::size_t k, GraphView view);

}  // namespace scfc
