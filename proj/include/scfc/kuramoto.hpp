#pragma once

#include <cstdint>
#include <vector>

#include "scfc/connectome.hpp"
#include "scfc/matrix.hpp"

namespace scfc {

enum class ScNormalization {
  None,
  MaxScale,         // divide by the largest entry
  MeanDegreeScale,  // divide by the mean row sum
};

// Phase oscillator network on a structural connectome:
//   dtheta_i/dt = 2*pi*f_i + g * sum_j C_ij * sin(theta_j - theta_i - gamma)
// integrated with classical fixed-step RK4.
struct KuramotoParams {
  double g = 7.5929;        // global coupling gain
  double gamma = 0.56713;   // phase frustration, radians
  double sim_period = 30.597;  // seconds
  double dt = 1e-3;         // integration step, seconds
  double burn_in = 3.0;     // transient discarded from outputs, seconds
  double a0 = 10.0;         // signal amplitude
  double freq_mean = 1.0;   // intrinsic frequency mean, Hz
  double freq_std = 0.1;    // intrinsic frequency spread, Hz
  ScNormalization sc_normalization = ScNormalization::MaxScale;

  // throws ConfigInvalid / StepCountOverflow on bad settings
  void validate() const;
};

// Retained post-burn-in samples. Phases are stored wrapped to [0, 2*pi);
// integration itself runs on unwrapped phases.
struct PhaseTrajectory {
  std::size_t n_rois = 0;
  std::vector<double> times;
  Mat phases;  // times.size() x n_rois
  std::vector<double> intrinsic_freqs;  // Hz
};

struct SignalMatrix {
  std::vector<double> times;
  Mat signals;  // times.size() x n_rois
};

// Draw order from `seed`: initial phases theta_i ~ U[0, 2*pi) for all i, then
// intrinsic frequencies f_i ~ Normal(freq_mean, freq_std).
PhaseTrajectory simulate_phases(const ConnMatrix& sc, const KuramotoParams& params,
                                std::uint64_t seed);

// Deterministic entry with explicit initial state; the seeded overload
// delegates here after drawing.
PhaseTrajectory simulate_phases(const ConnMatrix& sc, const KuramotoParams& params,
                                const std::vector<double>& initial_phases,
                                const std::vector<double>& intrinsic_freqs);

// Kuramoto order parameter R(t) = |mean_i exp(i*theta_i(t))|, one value per
// retained sample, clamped to [0, 1].
std::vector<double> order_parameter(const PhaseTrajectory& traj);

// a_i(t) = a0 * sin(theta_i(t))
SignalMatrix bold_signal(const PhaseTrajectory& traj, double a0);

// Pearson correlation of the signals over retained time, using population
// (1/T) moments; entries clamped to [-1, 1], diagonal exactly 1.
ConnMatrix simulated_fc(const SignalMatrix& signals);

// Per-subject seed is cohort.base_seed + subject index. Outputs are ordered
// like the cohort and are identical for any thread count.
std::vector<ConnMatrix> simulate_cohort_fc(const Cohort& cohort,
                                           const KuramotoParams& params,
                                           int threads = 1);

// simulate + signal + correlate for one subject
ConnMatrix subject_fc(const ConnMatrix& sc, const KuramotoParams& params,
                      std::uint64_t seed);

}  // namespace scfc
