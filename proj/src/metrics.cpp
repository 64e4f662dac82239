#include "scfc/metrics.hpp"

#include <cmath>
#include <string>

#include "scfc/errors.hpp"

namespace scfc {

Metrics classification_metrics(const std::vector<int>& truth,
                               const std::vector<int>& pred) {
  if (truth.size() != pred.size() || truth.empty())
    fail(Errc::LengthMismatch,
         "metrics need equal-length non-empty label vectors, got " +
             std::to_string(truth.size()) + " and " + std::to_string(pred.size()));
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == 1)
      (truth[i] == 1 ? tp : fp) += 1;
    else
      (truth[i] == 1 ? fn : tn) += 1;
  }
  Metrics m;
  m.accuracy = (tp + tn) / static_cast<double>(truth.size());
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + recall > 0
             ? 2.0 * m.precision * recall / (m.precision + recall)
             : 0.0;
  return m;
}

std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<int>& labels, std::size_t n_folds, Rng& rng) {
  if (n_folds < 2) fail(Errc::ConfigInvalid, "need at least 2 folds");
  if (labels.size() < 2 * n_folds)
    fail(Errc::CohortTooSmall, "cohort of " + std::to_string(labels.size()) +
                                   " cannot fill " + std::to_string(n_folds) +
                                   " two-class folds");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i] == 1 ? 1 : 0].push_back(i);
  for (const auto& c : by_class)
    if (c.size() < n_folds)
      fail(Errc::SingleClassFold,
           "a class with " + std::to_string(c.size()) +
               " subjects cannot reach every one of " +
               std::to_string(n_folds) + " folds");

  std::vector<std::vector<std::size_t>> folds(n_folds);
  std::size_t cursor = 0;
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (std::size_t idx : members) {
      folds[cursor].push_back(idx);
      cursor = (cursor + 1) % n_folds;
    }
  }
  return folds;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    fail(Errc::LengthMismatch, "pearson inputs differ: " +
                                   std::to_string(a.size()) + " vs " +
                                   std::to_string(b.size()));
  if (a.size() < 2) fail(Errc::TooFewSamples, "pearson needs at least 2 samples");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double ca = 0.0, cb = 0.0, cab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    ca += da * da;
    cb += db * db;
    cab += da * db;
  }
  if (!(ca > 0.0) || !(cb > 0.0))
    fail(Errc::ZeroVariance, "pearson input has zero variance");
  const double r = cab / std::sqrt(ca * cb);
  return r < -1.0 ? -1.0 : (r > 1.0 ? 1.0 : r);
}

std::pair<double, double> mean_sample_std(const std::vector<double>& xs) {
  if (xs.empty()) fail(Errc::LengthMismatch, "empty sample");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size() - 1))};
}

}  // namespace scfc
