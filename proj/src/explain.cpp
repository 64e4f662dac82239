#include "scfc/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "scfc/errors.hpp"
#include "scfc/optim.hpp"

namespace scfc {

using ad::NodeId;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

void ExplainConfig::validate() const {
  if (!(mask_lr > 0.0)) fail(Errc::ConfigInvalid, "mask_lr must be > 0");
  if (!(sparsity_weight >= 0.0))
    fail(Errc::ConfigInvalid, "sparsity_weight must be >= 0");
  if (!(entropy_weight >= 0.0))
    fail(Errc::ConfigInvalid, "entropy_weight must be >= 0");
}

namespace {

constexpr double kProbFloor = 1e-7;
constexpr double kLogFloor = 1e-12;

std::map<std::string, NodeId> record_params(Tape& t,
                                            const ad::ParamStore& params) {
  if (params.empty())
    fail(Errc::UntrainedParams, "fusion model has no parameters");
  std::map<std::string, NodeId> out;
  for (const auto& [name, tensor] : params) out[name] = t.input(tensor, false);
  return out;
}

// logit with the target view's message matrix entries scaled by the masked
// edge values (unit diagonal keeps self-loops)
NodeId masked_logit(Tape& t, const FusionModel& model,
                    const std::map<std::string, NodeId>& p,
                    const BrainGraph& g_s, const BrainGraph& g_f,
                    GraphView target_view, NodeId mask_values,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  const BrainGraph& target =
      target_view == GraphView::Structural ? g_s : g_f;
  NodeId mask = t.edge_mask_matrix(mask_values, edges, target.n_nodes);
  NodeId a_s = t.input(Tensor::from_mat(g_s.norm_adjacency), false);
  NodeId a_f = t.input(Tensor::from_mat(g_f.norm_adjacency), false);
  NodeId h_s = t.input(Tensor::from_mat(g_s.node_features), false);
  NodeId h_f = t.input(Tensor::from_mat(g_f.node_features), false);
  if (target_view == GraphView::Structural)
    a_s = t.mul(a_s, mask);
  else
    a_f = t.mul(a_f, mask);
  return fusion_logit(t, model.cfg, p, a_s, h_s, a_f, h_f);
}

}  // namespace

EdgeImportance explain_subject(const FusionModel& model, const BrainGraph& g_s,
                               const BrainGraph& g_f, GraphView target_view,
                               const ExplainConfig& cfg,
                               const std::string& subject_id) {
  cfg.validate();
  if (model.params.empty())
    fail(Errc::UntrainedParams, "fusion model has no parameters");
  const BrainGraph& target =
      target_view == GraphView::Structural ? g_s : g_f;
  const auto edges = target.edge_list();
  if (edges.empty())
    fail(Errc::EmptyGraph,
         "subject " + subject_id + " has no edges to explain");

  const int original = predict(model, g_s, g_f).second;

  // zero logits: the mask starts at 0.5 everywhere
  ad::ParamStore mask_store;
  mask_store["m"] = Tensor(Shape::vec(edges.size()));
  ad::Adam opt(ad::AdamConfig{cfg.mask_lr});

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape t;
    auto p = record_params(t, model.params);
    NodeId m = t.input(mask_store.at("m"), true);
    NodeId s = t.sigmoid(m);
    NodeId logit =
        masked_logit(t, model, p, g_s, g_f, target_view, s, edges);

    NodeId prob = t.sigmoid(logit);
    NodeId one = t.input(Tensor::full(Shape::mat(1, 1), 1.0), false);
    NodeId kept = original == 1 ? prob : t.sub(one, prob);
    NodeId nll =
        t.scale(t.sum(t.log(t.clamp(kept, kProbFloor, 1.0))), -1.0);

    NodeId sparsity = t.scale(t.mean(s), cfg.sparsity_weight);

    NodeId ones = t.input(Tensor::full(Shape::vec(edges.size()), 1.0), false);
    NodeId sc = t.clamp(s, kLogFloor, 1.0 - kLogFloor);
    NodeId ent_neg = t.add(t.mul(s, t.log(sc)),
                           t.mul(t.sub(ones, s), t.log(t.sub(ones, sc))));
    NodeId entropy = t.scale(t.mean(ent_neg), -cfg.entropy_weight);

    NodeId loss = t.add(t.add(nll, sparsity), entropy);
    ad::GradMap g = t.backward(loss);
    std::map<std::string, Tensor> grads;
    grads["m"] = std::move(g.at(m));
    opt.step(mask_store, grads);
  }

  EdgeImportance imp;
  imp.subject_id = subject_id;
  imp.view = target.view;
  const Tensor& m = mask_store.at("m");
  for (std::size_t e = 0; e < edges.size(); ++e)
    imp.edges.emplace_back(edges[e].first, edges[e].second,
                           1.0 / (1.0 + std::exp(-m.data[e])));
  return imp;
}

std::pair<double, int> predict_masked(
    const FusionModel& model, const BrainGraph& g_s, const BrainGraph& g_f,
    GraphView target_view,
    const std::vector<std::pair<std::size_t, std::size_t>>& kept_edges) {
  if (kept_edges.empty()) {
    // no edges kept: only self-loops carry messages
    const BrainGraph& target =
        target_view == GraphView::Structural ? g_s : g_f;
    Mat diag(target.n_nodes, target.n_nodes);
    for (std::size_t i = 0; i < target.n_nodes; ++i)
      diag(i, i) = target.norm_adjacency(i, i);
    BrainGraph stripped = target;
    stripped.norm_adjacency = diag;
    const BrainGraph& ms = target_view == GraphView::Structural ? stripped : g_s;
    const BrainGraph& mf = target_view == GraphView::Structural ? g_f : stripped;
    return predict(model, ms, mf);
  }
  Tape t;
  auto p = record_params(t, model.params);
  NodeId values =
      t.input(Tensor::full(Shape::vec(kept_edges.size()), 1.0), false);
  NodeId logit =
      masked_logit(t, model, p, g_s, g_f, target_view, values, kept_edges);
  NodeId prob = t.sigmoid(logit);
  const double v = t.value(prob).scalar_value();
  return {v, v >= 0.5 ? 1 : 0};
}

std::vector<std::pair<std::size_t, std::size_t>> top_fraction_edges(
    const EdgeImportance& imp, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    fail(Errc::ConfigInvalid, "fraction must lie in [0, 1]");
  auto sorted = imp.edges;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  const std::size_t keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(sorted.size())));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t e = 0; e < keep && e < sorted.size(); ++e)
    out.emplace_back(std::get<0>(sorted[e]), std::get<1>(sorted[e]));
  return out;
}

NetworkAtlas load_atlas(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("node,network", 0) != 0)
    fail(Errc::ParseError, path.string() + ": expected node,network header");
  NetworkAtlas atlas;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      fail(Errc::ParseError, path.string() + ": bad row '" + line + "'");
    std::size_t idx = 0;
    try {
      idx = std::stoul(line.substr(0, comma));
    } catch (const std::exception&) {
      fail(Errc::ParseError, path.string() + ": bad node index in '" + line + "'");
    }
    if (idx != atlas.node_network.size())
      fail(Errc::ParseError,
           path.string() + ": node indices must be 0..n-1 in order");
    const std::string label = line.substr(comma + 1);
    if (label.empty())
      fail(Errc::ParseError, path.string() + ": empty network label");
    atlas.node_network.push_back(label);
  }
  return atlas;
}

void save_atlas(const NetworkAtlas& atlas, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out << "node,network\n";
  for (std::size_t i = 0; i < atlas.node_network.size(); ++i)
    out << i << ',' << atlas.node_network[i] << '\n';
  if (!out) fail(Errc::Io, "write failed for " + path.string());
}

std::vector<NetworkPairRow> group_by_network(const EdgeImportance& imp,
                                             const NetworkAtlas& atlas) {
  std::map<std::pair<std::string, std::string>, NetworkPairRow> acc;
  for (const auto& [src, dst, importance] : imp.edges) {
    if (src >= atlas.node_network.size() || dst >= atlas.node_network.size())
      fail(Errc::UnmappedNode,
           "edge (" + std::to_string(src) + ", " + std::to_string(dst) +
               ") touches a node outside the atlas");
    std::string a = atlas.node_network[src];
    std::string b = atlas.node_network[dst];
    if (b < a) std::swap(a, b);
    NetworkPairRow& row = acc[{a, b}];
    row.net_a = a;
    row.net_b = b;
    row.within = a == b;
    row.n_edges += 1;
    row.total += importance;
  }
  std::vector<NetworkPairRow> rows;
  for (auto& [key, row] : acc) {
    row.mean = row.total / static_cast<double>(row.n_edges);
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(),
            [](const NetworkPairRow& a, const NetworkPairRow& b) {
              if (a.total != b.total) return a.total > b.total;
              if (a.net_a != b.net_a) return a.net_a < b.net_a;
              return a.net_b < b.net_b;
            });
  return rows;
}

void save_edge_importance(const EdgeImportance& imp,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out << "src,dst,importance\n";
  char buf[64];
  for (const auto& [src, dst, importance] : imp.edges) {
    std::snprintf(buf, sizeof buf, "%.17g", importance);
    out << src << ',' << dst << ',' << buf << '\n';
  }
  if (!out) fail(Errc::Io, "write failed for " + path.string());
}

std::string network_summary_csv(const std::vector<NetworkPairRow>& rows) {
  std::ostringstream out;
  out << "network_a,network_b,within,n_edges,total_importance,mean_importance\n";
  char buf[128];
  for (const NetworkPairRow& row : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%zu,%.6f,%.6f", row.net_a.c_str(),
                  row.net_b.c_str(), row.within ? 1 : 0, row.n_edges, row.total,
                  row.mean);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace scfc
