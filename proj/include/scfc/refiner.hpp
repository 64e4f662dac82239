#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "scfc/connectome.hpp"
#include "scfc/optim.hpp"
#include "scfc/tape.hpp"

namespace scfc {

// Matrices are zero-padded to this grid before the encoder and cropped back
// after the decoder.
inline constexpr std::size_t kUNetGrid = 64;

// Encoder-decoder refiner: `depth` blocks of two 3x3 convs + 2x2 maxpool with
// channels doubling per level, then a mirrored decoder of 2x2 transposed convs
// with skip concatenation and two 3x3 convs per level, and a 1x1 head.
struct UNetConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 8;
  std::size_t in_channels = 2;  // 1: simulated FC; 2: + max-normalized SC
  double lambda_w = 0.1;        // weight of the simulation-consistency term
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RefinerModel {
  UNetConfig cfg;
  ad::ParamStore params;
};

struct RefinerHistory {
  std::vector<double> epoch_loss;  // mean per-subject loss per epoch
};

// Tensor name -> shape table; the authoritative architecture definition used
// by initialization and checkpoint validation.
std::map<std::string, ad::Shape> refiner_param_shapes(const UNetConfig& cfg);

// He-uniform weights (seeded from cfg.seed), zero biases.
RefinerModel init_refiner(const UNetConfig& cfg);

// Stacks [fc_sim, sc/max(sc)] (per in_channels) zero-padded to the grid.
ad::Tensor refiner_input(const UNetConfig& cfg, const ConnMatrix& sc,
                         const ConnMatrix& fc_sim);

// Differentiable forward shared by training and inference: raw head output is
// cropped to n x n, squashed by tanh, symmetrized, and given a unit diagonal.
ad::NodeId refined_prediction(ad::Tape& t, const UNetConfig& cfg,
                              const std::map<std::string, ad::NodeId>& params,
                              ad::NodeId x_padded, std::size_t n_rois);

ConnMatrix refine_fc(const RefinerModel& model, const ConnMatrix& sc,
                     const ConnMatrix& fc_sim);

std::vector<ConnMatrix> refine_cohort(const RefinerModel& model,
                                      const Cohort& cohort,
                                      const std::vector<ConnMatrix>& sims,
                                      int threads = 1);

// mean((pred-target)^2) + lambda_w * mean((pred-fc_sim)^2), means over entries
double refiner_loss(const Mat& pred, const Mat& target, const Mat& fc_sim,
                    double lambda_w);

RefinerModel train_refiner(const Cohort& cohort,
                           const std::vector<ConnMatrix>& sims,
                           const UNetConfig& cfg,
                           RefinerHistory* history = nullptr, int threads = 1);

// Per-subject Pearson correlation between strict-upper-triangle vectors;
// returns (mean, sample std).
std::pair<double, double> eval_refiner_correlation(
    const std::vector<ConnMatrix>& preds, const std::vector<ConnMatrix>& targets);

void save_refiner(const RefinerModel& model, const std::string& path);
RefinerModel load_refiner(const std::string& path);

}  // namespace scfc
