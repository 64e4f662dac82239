#include "scfc/kuramoto.hpp"

#include <cmath>
#include <string>

#include "scfc/parallel.hpp"
#include "scfc/rng.hpp"

namespace scfc {
namespace {

constexpr double kMaxSteps = 1e7;

double wrap_phase(double x) {
  double w = x - kTwoPi * std::floor(x / kTwoPi);
  if (w >= kTwoPi) w -= kTwoPi;
  if (w < 0.0) w = 0.0;
  return w;
}

Mat normalized_coupling(const ConnMatrix& sc, ScNormalization mode) {
  Mat c = sc.values();
  const std::size_t n = c.rows();
  switch (mode) {
    case ScNormalization::None:
      break;
    case ScNormalization::MaxScale: {
      double mx = 0.0;
      for (double v : c.storage()) mx = std::max(mx, v);
      if (mx > 0.0)
        for (double& v : c.storage()) v /= mx;
      break;
    }
    case ScNormalization::MeanDegreeScale: {
      double total = 0.0;
      for (double v : c.storage()) total += v;
      const double mean_degree = total / static_cast<double>(n);
      if (mean_degree > 0.0)
        for (double& v : c.storage()) v /= mean_degree;
      break;
    }
  }
  return c;
}

}  // namespace

void KuramotoParams::validate() const {
  if (!(dt > 0.0)) fail(Errc::ConfigInvalid, "dt must be positive");
  if (!(sim_period > 0.0)) fail(Errc::ConfigInvalid, "sim_period must be positive");
  if (!(burn_in >= 0.0)) fail(Errc::ConfigInvalid, "burn_in must be nonnegative");
  if (!(burn_in < sim_period))
    fail(Errc::ConfigInvalid, "burn_in must be smaller than sim_period");
  if (!(freq_std >= 0.0)) fail(Errc::ConfigInvalid, "freq_std must be nonnegative");
  if (!(a0 > 0.0)) fail(Errc::ConfigInvalid, "a0 must be positive");
  const double steps = sim_period / dt;
  if (!(steps <= kMaxSteps))
    fail(Errc::StepCountOverflow, "sim_period/dt = " + std::to_string(steps) +
                                      " exceeds the step budget of 1e7");
}

PhaseTrajectory simulate_phases(const ConnMatrix& sc, const KuramotoParams& params,
                                std::uint64_t seed) {
  if (sc.kind() != MatrixKind::Structural)
    fail(Errc::NonStructuralInput,
         std::string("phase simulation needs a structural matrix, got ") +
             matrix_kind_name(sc.kind()));
  params.validate();
  const std::size_t n = sc.n_rois();
  Rng rng(seed);
  std::vector<double> theta0(n), freqs(n);
  for (std::size_t i = 0; i < n; ++i) theta0[i] = rng.uniform(0.0, kTwoPi);
  for (std::size_t i = 0; i < n; ++i)
    freqs[i] = rng.normal(params.freq_mean, params.freq_std);
  return simulate_phases(sc, params, theta0, freqs);
}

PhaseTrajectory simulate_phases(const ConnMatrix& sc, const KuramotoParams& params,
                                const std::vector<double>& initial_phases,
                                const std::vector<double>& intrinsic_freqs) {
  if (sc.kind() != MatrixKind::Structural)
    fail(Errc::NonStructuralInput,
         std::string("phase simulation needs a structural matrix, got ") +
             matrix_kind_name(sc.kind()));
  params.validate();
  const std::size_t n = sc.n_rois();
  if (initial_phases.size() != n || intrinsic_freqs.size() != n)
    fail(Errc::ShapeMismatch, "initial state size does not match the ROI count");

  const Mat c = normalized_coupling(sc, params.sc_normalization);
  const long long n_steps = std::llround(params.sim_period / params.dt);
  const double dt = params.dt;
  // first retained step index; retained times are k*dt for k in [k0, n_steps]
  long long k0 = 0;
  if (params.burn_in > 0.0) {
    k0 = static_cast<long long>(std::ceil(params.burn_in / dt - 1e-9));
    if (k0 < 0) k0 = 0;
  }
  const std::size_t n_kept = static_cast<std::size_t>(n_steps - k0 + 1);

  PhaseTrajectory traj;
  traj.n_rois = n;
  traj.intrinsic_freqs = intrinsic_freqs;
  traj.times.resize(n_kept);
  traj.phases = Mat(n_kept, n);

  std::vector<double> theta = initial_phases;
  std::vector<double> omega(n);
  for (std::size_t i = 0; i < n; ++i) omega[i] = kTwoPi * intrinsic_freqs[i];

  std::vector<double> sin_t(n), cos_t(n), sum_sin(n), sum_cos(n);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), stage(n);
  const double g = params.g;
  const double gamma = params.gamma;

  // sin(theta_j - theta_i - gamma) expanded so the coupling sum becomes two
  // matrix-vector products instead of an O(n^2) table of pairwise sines
  auto rhs = [&](const std::vector<double>& th, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      sin_t[i] = std::sin(th[i]);
      cos_t[i] = std::cos(th[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = c.row(i);
      double ss = 0.0, sc_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        ss += row[j] * sin_t[j];
        sc_sum += row[j] * cos_t[j];
      }
      sum_sin[i] = ss;
      sum_cos[i] = sc_sum;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double shifted = th[i] + gamma;
      out[i] = omega[i] +
               g * (std::cos(shifted) * sum_sin[i] - std::sin(shifted) * sum_cos[i]);
    }
  };

  auto record = [&](long long k) {
    if (k < k0) return;
    const std::size_t r = static_cast<std::size_t>(k - k0);
    traj.times[r] = static_cast<double>(k) * dt;
    double* row = traj.phases.row(r);
    for (std::size_t i = 0; i < n; ++i) row[i] = wrap_phase(theta[i]);
  };

  record(0);
  for (long long k = 0; k < n_steps; ++k) {
    rhs(theta, k1);
    for (std::size_t i = 0; i < n; ++i) stage[i] = theta[i] + 0.5 * dt * k1[i];
    rhs(stage, k2);
    for (std::size_t i = 0; i < n; ++i) stage[i] = theta[i] + 0.5 * dt * k2[i];
    rhs(stage, k3);
    for (std::size_t i = 0; i < n; ++i) stage[i] = theta[i] + dt * k3[i];
    rhs(stage, k4);
    for (std::size_t i = 0; i < n; ++i) {
      theta[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(theta[i]))
        fail(Errc::NonFiniteState, "oscillator " + std::to_string(i) +
                                       " became non-finite at step " +
                                       std::to_string(k + 1));
    }
    record(k + 1);
  }
  return traj;
}

std::vector<double> order_parameter(const PhaseTrajectory& traj) {
  if (traj.times.empty())
    fail(Errc::EmptyTrajectory, "order parameter of an empty trajectory");
  const std::size_t t_count = traj.times.size();
  const std::size_t n = traj.n_rois;
  std::vector<double> r(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* row = traj.phases.row(t);
    double sum_cos = 0.0, sum_sin = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_cos += std::cos(row[i]);
      sum_sin += std::sin(row[i]);
    }
    double v = std::sqrt(sum_cos * sum_cos + sum_sin * sum_sin) /
               static_cast<double>(n);
    r[t] = std::min(1.0, std::max(0.0, v));
  }
  return r;
}

SignalMatrix bold_signal(const PhaseTrajectory& traj, double a0) {
  if (traj.times.empty())
    fail(Errc::EmptyTrajectory, "signal synthesis from an empty trajectory");
  SignalMatrix s;
  s.times = traj.times;
  s.signals = Mat(traj.times.size(), traj.n_rois);
  for (std::size_t t = 0; t < traj.times.size(); ++t) {
    const double* ph = traj.phases.row(t);
    double* out = s.signals.row(t);
    for (std::size_t i = 0; i < traj.n_rois; ++i) out[i] = a0 * std::sin(ph[i]);
  }
  return s;
}

ConnMatrix simulated_fc(const SignalMatrix& signals) {
  const std::size_t t_count = signals.signals.rows();
  const std::size_t n = signals.signals.cols();
  if (t_count < 2)
    fail(Errc::TooFewSamples, "correlation needs at least 2 time samples, got " +
                                  std::to_string(t_count));
  const double inv_t = 1.0 / static_cast<double>(t_count);
  std::vector<double> mean(n, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* row = signals.signals.row(t);
    for (std::size_t i = 0; i < n; ++i) mean[i] += row[i];
  }
  for (std::size_t i = 0; i < n; ++i) mean[i] *= inv_t;

  // centered accumulation; the raw-moment shortcut E[xy] - E[x]E[y] cancels
  // catastrophically once the amplitude dwarfs the covariance
  Mat m2(n, n);
  std::vector<double> centered(n);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* row = signals.signals.row(t);
    for (std::size_t i = 0; i < n; ++i) centered[i] = row[i] - mean[i];
    for (std::size_t i = 0; i < n; ++i) {
      const double ci = centered[i];
      double* out = m2.row(i);
      for (std::size_t j = i; j < n; ++j) out[j] += ci * centered[j];
    }
  }
  std::vector<double> var(n);
  for (std::size_t i = 0; i < n; ++i) {
    var[i] = m2(i, i) * inv_t;
    // floor relative to the raw scale: a constant signal leaves only the
    // rounding residue of the subtracted mean
    const double second = var[i] + mean[i] * mean[i];
    if (var[i] <= 0.0 || var[i] <= 1e-15 * second)
      fail(Errc::ZeroVarianceSignal,
           "signal " + std::to_string(i) + " has no variance");
  }
  Mat fc(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    fc(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double cov = m2(i, j) * inv_t;
      double r = cov / std::sqrt(var[i] * var[j]);
      r = std::min(1.0, std::max(-1.0, r));
      fc(i, j) = r;
      fc(j, i) = r;
    }
  }
  return ConnMatrix(std::move(fc), MatrixKind::FunctionalSimulated);
}

ConnMatrix subject_fc(const ConnMatrix& sc, const KuramotoParams& params,
                      std::uint64_t seed) {
  PhaseTrajectory traj = simulate_phases(sc, params, seed);
  SignalMatrix sig = bold_signal(traj, params.a0);
  return simulated_fc(sig);
}

std::vector<ConnMatrix> simulate_cohort_fc(const Cohort& cohort,
                                           const KuramotoParams& params,
                                           int threads) {
  params.validate();
  std::vector<std::optional<ConnMatrix>> slots(cohort.size());
  parallel_for(cohort.size(), threads, [&](std::size_t idx) {
    const auto& subject = cohort.subjects[idx];
    try {
      slots[idx] = subject_fc(subject.sc, params, cohort.base_seed + idx);
    } catch (const Error& e) {
      throw Error(e.code(), "subject '" + subject.subject_id + "': " + e.what());
    }
  });
  std::vector<ConnMatrix> out;
  out.reserve(cohort.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace scfc
