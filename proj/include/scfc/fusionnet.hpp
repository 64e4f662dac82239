#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scfc/braingraph.hpp"
#include "scfc/connectome.hpp"
#include "scfc/kuramoto.hpp"
#include "scfc/metrics.hpp"
#include "scfc/optim.hpp"
#include "scfc/refiner.hpp"
#include "scfc/tape.hpp"

namespace scfc {

// Shared GCN encoder over the structural and functional views, per-view MLP
// projection heads producing unit-norm embeddings, and a linear classifier on
// their concatenation.
struct FusionConfig {
  std::size_t gcn_layers = 5;
  std::size_t gcn_channels = 32;
  std::size_t embed_dim = 16;
  std::size_t mlp_hidden = 32;
  double dropout_p = 0.2;
  double lambda_z = 0.01;  // decorrelation penalty weight
  double alpha = 0.1;      // view-alignment loss weight
  double beta = 1.0;       // cross-entropy loss weight
  double lr = 1e-3;
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  std::size_t k_nn = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FusionModel {
  FusionConfig cfg;
  ad::ParamStore params;
};

struct EmbeddingPair {
  std::vector<double> x_s;
  std::vector<double> x_f;
};

struct FusionHistory {
  std::vector<double> cca, ce, joint;  // per epoch
};

struct ViewPair {
  BrainGraph g_s;
  BrainGraph g_f;
};

std::map<std::string, ad::Shape> fusion_param_shapes(const FusionConfig& cfg);

FusionModel init_fusion(const FusionConfig& cfg);

// One shared-encoder pass: out = relu(norm_adjacency * H * W) per layer, with
// inverted dropout on the non-final activations in train mode.
Mat gcn_forward(const FusionModel& model, const BrainGraph& graph,
                bool train_mode, std::uint64_t seed);

// Shared GCN on each view, mean-pool over nodes, view MLP, L2 normalization.
EmbeddingPair embed_views(const FusionModel& model, const BrainGraph& g_s,
                          const BrainGraph& g_f, bool train_mode,
                          std::uint64_t seed);

// -(1/E) sum_k <xs_k, xf_k> + lambda_z (||Zss - I||_F^2 + ||Zff - I||_F^2)
// with Z = (1/E) X^T X; rows are per-sample embeddings.
double cca_loss(const Mat& xs, const Mat& xf, double lambda_z);

// Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7].
double ce_loss(const std::vector<double>& y_hat, const std::vector<int>& y);

double joint_loss(const Mat& xs, const Mat& xf,
                  const std::vector<double>& y_hat, const std::vector<int>& y,
                  double alpha, double beta, double lambda_z);

// (probability, label); label = 1 iff probability >= 0.5
std::pair<double, int> predict(const FusionModel& model, const BrainGraph& g_s,
                               const BrainGraph& g_f);

// Classifier logit from caller-supplied message matrices and node features
// (one (Q,Q) matrix and one (Q,5) feature node per view), evaluation mode.
// Callers can substitute modified message matrices, e.g. soft edge masks.
ad::NodeId fusion_logit(ad::Tape& t, const FusionConfig& cfg,
                        const std::map<std::string, ad::NodeId>& params,
                        ad::NodeId a_s, ad::NodeId h_s, ad::NodeId a_f,
                        ad::NodeId h_f);

// Records the training objective for the listed batch members on an existing
// tape. `params` maps parameter names to tape inputs; `cca_out` / `ce_out`
// receive the component nodes when non-null. Exposed so gradients of the
// complete objective can be checked against finite differences.
ad::NodeId fusion_batch_loss(ad::Tape& t, const FusionConfig& cfg,
                             const std::map<std::string, ad::NodeId>& params,
                             const std::vector<ViewPair>& views,
                             const std::vector<int>& labels,
                             const std::vector<std::size_t>& batch,
                             bool train_mode, Rng* dropout_rng,
                             ad::NodeId* cca_out = nullptr,
                             ad::NodeId* ce_out = nullptr);

// Full-batch tape training over prebuilt view pairs.
FusionModel train_fusion_graphs(const std::vector<ViewPair>& views,
                                const std::vector<int>& labels,
                                const FusionConfig& cfg,
                                FusionHistory* history = nullptr);

FusionModel train_fusion(const Cohort& cohort,
                         const std::vector<ConnMatrix>& predicted_fcs,
                         const FusionConfig& cfg,
                         FusionHistory* history = nullptr, int threads = 1);

struct CvOptions {
  std::size_t n_folds = 5;
  bool sc_only = false;     // ablation: both views read the structural graph
  bool use_refiner = true;  // off: the functional view reads simulated FC
  KuramotoParams kuramoto;
  UNetConfig refiner;
  int threads = 1;
};

struct CvReport {
  std::vector<Metrics> folds;
  Metrics mean;
  Metrics stddev;  // sample std across folds
  std::vector<std::vector<std::size_t>> fold_indices;
  std::string config_snapshot;

  std::string csv() const;    // fold,accuracy,precision,f1 + summary row
  std::string table() const;  // aligned human-readable form
};

// Stratified n-fold cross-validation: per fold, simulate (cohort-wide, once),
// optionally train a refiner on the train split, train fusion on the train
// split, evaluate on the held-out fold. Callers that already hold the
// cohort-wide simulated FCs (same kuramoto settings and subject order) can
// pass them to skip the simulation stage.
CvReport cross_validate(const Cohort& cohort, const FusionConfig& cfg,
                        const CvOptions& opts,
                        const std::vector<ConnMatrix>* precomputed_sims = nullptr);

void save_fusion(const FusionModel& model, const std::string& path);
FusionModel load_fusion(const std::string& path);

}  // namespace scfc
