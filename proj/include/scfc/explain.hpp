#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "scfc/braingraph.hpp"
#include "scfc/fusionnet.hpp"

namespace scfc {

struct ExplainConfig {
  std::size_t steps = 200;
  double mask_lr = 0.01;
  double sparsity_weight = 0.05;
  double entropy_weight = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigInvalid
};

// Per-edge saliency over one subject's sparsified view graph. Importances are
// sigmoid outputs, so strictly inside (0, 1); one entry per undirected edge.
struct EdgeImportance {
  std::string subject_id;
  GraphView view = GraphView::Functional;
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
};

// Learns a soft mask over the target view's edges that keeps the model's own
// prediction while pushing the mask sparse and near-binary. The mask scales
// the message matrix entries; self-loops stay unmasked. Logits start at zero,
// so steps = 0 returns 0.5 everywhere.
EdgeImportance explain_subject(const FusionModel& model, const BrainGraph& g_s,
                               const BrainGraph& g_f, GraphView target_view,
                               const ExplainConfig& cfg = {},
                               const std::string& subject_id = "");

// Model prediction with the target view's message matrix restricted to
// `kept_edges` (self-loops always kept); the other view passes unmasked.
std::pair<double, int> predict_masked(
    const FusionModel& model, const BrainGraph& g_s, const BrainGraph& g_f,
    GraphView target_view,
    const std::vector<std::pair<std::size_t, std::size_t>>& kept_edges);

// The ceil(fraction * E) highest-importance edges, importance descending,
// ties by (src, dst).
std::vector<std::pair<std::size_t, std::size_t>> top_fraction_edges(
    const EdgeImportance& imp, double fraction);

// node index -> network label; must cover every node that appears in a graph
// it is used with
struct NetworkAtlas {
  std::vector<std::string> node_network;
};

// CSV with a "node,network" header, one node per line, indices 0..n-1 in
// order.
NetworkAtlas load_atlas(const std::filesystem::path& path);
void save_atlas(const NetworkAtlas& atlas, const std::filesystem::path& path);

struct NetworkPairRow {
  std::string net_a, net_b;  // net_a <= net_b
  bool within = false;
  std::size_t n_edges = 0;
  double total = 0.0;
  double mean = 0.0;
};

// Mean and total importance per unordered network pair, sorted by total
// descending, ties by pair name.
std::vector<NetworkPairRow> group_by_network(const EdgeImportance& imp,
                                             const NetworkAtlas& atlas);

void save_edge_importance(const EdgeImportance& imp,
                          const std::filesystem::path& path);
std::string network_summary_csv(const std::vector<NetworkPairRow>& rows);

}  // namespace scfc
