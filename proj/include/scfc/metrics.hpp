#pragma once

#include <cstddef>
#include <vector>

#include "scfc/rng.hpp"

namespace scfc {

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

// Binary-label metrics with label 1 the positive class.  Degenerate ratios
// (no predicted or no true positives) evaluate to 0 rather than NaN.
Metrics classification_metrics(const std::vector<int>& truth,
                               const std::vector<int>& pred);

// Seeded stratified split: per-class shuffle, then a round-robin deal whose
// cursor continues across classes.  Every fold's class count is within one of
// an even share, and the folds partition [0, labels.size()).
std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<int>& labels, std::size_t n_folds, Rng& rng);

// Pearson correlation, clamped to [-1, 1].
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_sample_std(const std::vector<double>& xs);

}  // namespace scfc
