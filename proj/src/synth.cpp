#include "scfc/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "scfc/errors.hpp"
#include "scfc/explain.hpp"
#include "scfc/parallel.hpp"
#include "scfc/rng.hpp"

namespace scfc {

KuramotoParams default_hidden_dynamics() {
  KuramotoParams p;
  p.g = 5.2;
  p.gamma = 0.85;
  p.freq_std = 0.05;
  p.sim_period = 8.0;
  p.burn_in = 2.0;
  return p;
}

void SynthConfig::validate() const {
  if (n_subjects < 1) fail(Errc::ConfigInvalid, "n_subjects must be >= 1");
  if (n_rois < 1) fail(Errc::ConfigInvalid, "n_rois must be >= 1");
  if (n_modules < 1 || n_modules > n_rois)
    fail(Errc::ConfigInvalid, "n_modules must lie in [1, n_rois]");
  for (double d : {within_density, between_density})
    if (!(d > 0.0 && d <= 1.0))
      fail(Errc::ConfigInvalid, "densities must lie in (0, 1]");
  for (double w : {within_weight_mean, within_weight_std, between_weight_mean,
                   between_weight_std})
    if (!(w >= 0.0)) fail(Errc::ConfigInvalid, "weight stats must be >= 0");
  if (!(class_effect >= 0.0 && class_effect <= 1.0))
    fail(Errc::ConfigInvalid, "class_effect must lie in [0, 1]");
  if (!(fc_noise_std >= 0.0))
    fail(Errc::ConfigInvalid, "fc_noise_std must be >= 0");
  hidden_kuramoto.validate();
}

std::vector<std::size_t> module_assignment(std::size_t n_rois,
                                           std::size_t n_modules) {
  std::vector<std::size_t> out(n_rois);
  const std::size_t base = n_rois / n_modules, extra = n_rois % n_modules;
  std::size_t node = 0;
  for (std::size_t m = 0; m < n_modules; ++m) {
    const std::size_t size = base + (m < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) out[node++] = m;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> designated_blocks(
    std::size_t n_modules) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t m = 0; m + 1 < n_modules && m < 6; m += 2)
    out.emplace_back(m, m + 1);
  return out;
}

namespace {

ConnMatrix sample_sc(const SynthConfig& cfg,
                     const std::vector<std::size_t>& module_of,
                     const std::vector<std::pair<std::size_t, std::size_t>>& blocks,
                     int label, Rng& rng) {
  Mat m(cfg.n_rois, cfg.n_rois);
  for (std::size_t i = 0; i < cfg.n_rois; ++i)
    for (std::size_t j = i + 1; j < cfg.n_rois; ++j) {
      const bool within = module_of[i] == module_of[j];
      const double density = within ? cfg.within_density : cfg.between_density;
      if (rng.uniform(0.0, 1.0) >= density) continue;
      double w = std::abs(rng.normal(
          within ? cfg.within_weight_mean : cfg.between_weight_mean,
          within ? cfg.within_weight_std : cfg.between_weight_std));
      if (label == 1 && !within) {
        const auto lo = std::min(module_of[i], module_of[j]);
        const auto hi = std::max(module_of[i], module_of[j]);
        for (const auto& [a, b] : blocks)
          if (lo == a && hi == b) {
            w *= cfg.class_effect;
            break;
          }
      }
      m(i, j) = m(j, i) = std::round(w);
    }
  return ConnMatrix(m, MatrixKind::Structural);
}

ConnMatrix noisy_fc(const ConnMatrix& fc_clean, double noise_std, Rng& rng) {
  Mat m = fc_clean.values();
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = m(i, j) + rng.normal(0.0, noise_std);
      v = std::min(1.0, std::max(-1.0, v));
      m(i, j) = m(j, i) = v;
    }
  }
  return ConnMatrix(m, MatrixKind::FunctionalEmpirical);
}

std::string subject_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub%03zu", i);
  return buf;
}

}  // namespace

SynthResult make_cohort(const SynthConfig& cfg, int threads) {
  cfg.validate();
  SynthResult result;
  result.truth.class_effect = cfg.class_effect;
  result.truth.module_of_node = module_assignment(cfg.n_rois, cfg.n_modules);
  result.truth.attenuated_blocks = designated_blocks(cfg.n_modules);
  result.truth.hidden = cfg.hidden_kuramoto;

  const std::size_t n1 = cfg.n_subjects / 2;
  const std::size_t n0 = cfg.n_subjects - n1;

  result.cohort.n_rois = cfg.n_rois;
  result.cohort.base_seed = cfg.seed;
  result.cohort.subjects.resize(
      cfg.n_subjects,
      SubjectRecord{"", ConnMatrix(Mat(1, 1), MatrixKind::Structural),
                    std::nullopt, 0});

  parallel_for(cfg.n_subjects, threads, [&](std::size_t i) {
    const int label = i < n0 ? 0 : 1;
    Rng sc_rng(derive_seed(cfg.seed, "synth_sc", i));
    ConnMatrix sc = sample_sc(cfg, result.truth.module_of_node,
                              result.truth.attenuated_blocks, label, sc_rng);
    ConnMatrix clean =
        subject_fc(sc, cfg.hidden_kuramoto, derive_seed(cfg.seed, "synth_hidden", i));
    Rng noise_rng(derive_seed(cfg.seed, "synth_noise", i));
    ConnMatrix fc = noisy_fc(clean, cfg.fc_noise_std, noise_rng);
    result.cohort.subjects[i] =
        SubjectRecord{subject_name(i), std::move(sc), std::move(fc), label};
  });
  return result;
}

namespace {

void write_ground_truth(const SynthConfig& cfg, const GroundTruth& truth,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out << "class_effect = " << cfg.class_effect << '\n';
  std::ostringstream blocks;
  for (std::size_t k = 0; k < truth.attenuated_blocks.size(); ++k) {
    if (k) blocks << ',';
    blocks << truth.attenuated_blocks[k].first << '-'
           << truth.attenuated_blocks[k].second;
  }
  out << "attenuated_blocks = " << blocks.str() << '\n';
  out << "n_modules = " << cfg.n_modules << '\n';
  out << "fc_noise_std = " << cfg.fc_noise_std << '\n';
  const KuramotoParams& h = truth.hidden;
  out << "hidden_g = " << h.g << '\n';
  out << "hidden_gamma = " << h.gamma << '\n';
  out << "hidden_sim_period = " << h.sim_period << '\n';
  out << "hidden_dt = " << h.dt << '\n';
  out << "hidden_burn_in = " << h.burn_in << '\n';
  out << "hidden_a0 = " << h.a0 << '\n';
  out << "hidden_freq_mean = " << h.freq_mean << '\n';
  out << "hidden_freq_std = " << h.freq_std << '\n';
  out << "seed = " << cfg.seed << '\n';
  if (!out) fail(Errc::Io, "write failed for " + path.string());
}

}  // namespace

SynthResult gen_cohort(const SynthConfig& cfg,
                       const std::filesystem::path& out_dir, int threads) {
  SynthResult result = make_cohort(cfg, threads);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    fail(Errc::Io, "cannot create directory " + out_dir.string());

  for (const SubjectRecord& rec : result.cohort.subjects) {
    save_matrix(rec.sc, out_dir / (rec.subject_id + "_sc.csv"));
    save_matrix(*rec.fc_empirical, out_dir / (rec.subject_id + "_fc.csv"));
  }

  result.manifest_path = out_dir / "manifest.csv";
  {
    std::ofstream out(result.manifest_path);
    if (!out) fail(Errc::Io, "cannot write " + result.manifest_path.string());
    out << "# subject_id,sc_path,fc_path,label\n";
    for (const SubjectRecord& rec : result.cohort.subjects)
      out << rec.subject_id << ',' << rec.subject_id << "_sc.csv,"
          << rec.subject_id << "_fc.csv," << rec.label << '\n';
    if (!out)
      fail(Errc::Io, "write failed for " + result.manifest_path.string());
  }

  NetworkAtlas atlas;
  for (std::size_t module : result.truth.module_of_node)
    atlas.node_network.push_back("M" + std::to_string(module));
  save_atlas(atlas, out_dir / "atlas.csv");

  write_ground_truth(cfg, result.truth, out_dir / "ground_truth.txt");
  return result;
}

}  // namespace scfc
