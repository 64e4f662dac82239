#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "scfc/connectome.hpp"
#include "scfc/kuramoto.hpp"

namespace scfc {

// Ground-truth oscillator settings for generated cohorts; deliberately
// distinct from the model defaults so the refiner has a residual to learn.
KuramotoParams default_hidden_dynamics();

struct SynthConfig {
  std::size_t n_subjects = 60;
  std::size_t n_rois = 53;
  std::size_t n_modules = 7;
  double within_density = 0.8;
  double between_density = 0.15;
  double within_weight_mean = 60.0;
  double within_weight_std = 15.0;
  double between_weight_mean = 15.0;
  double between_weight_std = 5.0;
  // multiplicative attenuation of the designated inter-module blocks for
  // class-1 subjects; 1 = no group difference
  double class_effect = 0.3;
  double fc_noise_std = 0.05;
  KuramotoParams hidden_kuramoto = default_hidden_dynamics();
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigInvalid
};

struct GroundTruth {
  double class_effect = 1.0;
  std::vector<std::pair<std::size_t, std::size_t>> attenuated_blocks;
  std::vector<std::size_t> module_of_node;
  KuramotoParams hidden;
};

struct SynthResult {
  Cohort cohort;
  GroundTruth truth;
  std::filesystem::path manifest_path;  // empty for in-memory generation
};

// Contiguous near-equal split; the first n_rois % n_modules modules take the
// extra node.
std::vector<std::size_t> module_assignment(std::size_t n_rois,
                                           std::size_t n_modules);

// The attenuated module pairs: (0,1), (2,3), ... while both ids fit.
std::vector<std::pair<std::size_t, std::size_t>> designated_blocks(
    std::size_t n_modules);

// Balanced two-class cohort: modular integer-weight SC per subject with the
// designated blocks attenuated for class 1, and an "empirical" FC from the
// hidden dynamics plus Gaussian noise. Class 0 occupies the first
// n_subjects - floor(n_subjects/2) slots.
SynthResult make_cohort(const SynthConfig& cfg, int threads = 1);

// make_cohort plus on-disk layout: manifest.csv, per-subject SC/FC CSVs,
// atlas.csv (node -> module label), ground_truth.txt.
SynthResult gen_cohort(const SynthConfig& cfg,
                       const std::filesystem::path& out_dir, int threads = 1);

}  // namespace scfc
